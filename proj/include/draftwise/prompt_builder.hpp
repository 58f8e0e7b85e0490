#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "draftwise/domain.hpp"

namespace draftwise {

enum class TemplateKind {
  query_x,
  generation,
  critic,
  refinement,
  knockout,
  best_of_n,
  style_extraction,
  content_extraction,
  critic_topics,
  geval_judge,
};

inline constexpr std::array<TemplateKind, 10> kAllTemplateKinds{
    TemplateKind::query_x,          TemplateKind::generation,         TemplateKind::critic,
    TemplateKind::refinement,       TemplateKind::knockout,           TemplateKind::best_of_n,
    TemplateKind::style_extraction, TemplateKind::content_extraction, TemplateKind::critic_topics,
    TemplateKind::geval_judge};

/// Also the asset file stem: templates/<noun>/<name>.txt
std::string_view to_string(TemplateKind kind);
TemplateKind parse_template_kind(std::string_view name);

// Placeholder names as they appear in the template assets, without brackets.
namespace placeholder {
inline constexpr std::string_view kQuery = "QUERY";
inline constexpr std::string_view kTargetRating = "TARGET_RATING";
inline constexpr std::string_view kItemDetails = "BUSINESS_DETAILS";
inline constexpr std::string_view kUserSamples = "USER_SAMPLES";
inline constexpr std::string_view kNeighborSamples = "NEIGHBOR_SAMPLES";
inline constexpr std::string_view kDraft = "GENERATED_OUTPUT";
inline constexpr std::string_view kFeedback = "FEEDBACK";
inline constexpr std::string_view kGenerationPrompt = "GENERATION PROMPT";
inline constexpr std::string_view kWritingStyle = "WRITING_STYLE";
inline constexpr std::string_view kItemCharacteristics = "BUSINESS_CHARACTERISTICS";
inline constexpr std::string_view kInstruction = "INSTRUCTION";
inline constexpr std::string_view kReference = "REFERENCE";
inline constexpr std::string_view kResponse = "RESPONSE";
/// "GENERATED_OUTPUT_A", "GENERATED_OUTPUT_B", ...
std::string candidate(std::size_t index);
}  // namespace placeholder

/// A scalar string, or a list of samples rendered as numbered "SAMPLE n:" blocks.
using BindingValue = std::variant<std::string, std::vector<std::string>>;
using Bindings = std::map<std::string, BindingValue, std::less<>>;

struct PromptBundle {
  TemplateKind kind = TemplateKind::query_x;
  std::string text;
  /// Placeholder name -> the exact text substituted for it.
  std::map<std::string, std::string> placeholders_filled;
};

/// Template text for every kind, for one domain noun.
class TemplateStore {
 public:
  /// Reads <root>/<noun>/<kind>.txt for every kind; throws TemplateError.
  static TemplateStore load(const std::filesystem::path& root, std::string_view noun);
  static TemplateStore load(const std::filesystem::path& root, DatasetKind kind) {
    return load(root, domain_noun(kind));
  }
  /// DRAFTWISE_TEMPLATE_DIR from the environment, else the build-time default.
  static std::filesystem::path default_root();

  const std::string& text(TemplateKind kind) const;
  std::string_view noun() const noexcept { return noun_; }

  /// Placeholder names occurring in the stored template, in first-seen order.
  std::vector<std::string> placeholders(TemplateKind kind) const;

 private:
  std::string noun_;
  std::map<TemplateKind, std::string> texts_;
};

/// Bindings each kind needs. Every placeholder of a stored template is in
/// this set (best_of_n lists the n=3 candidates).
std::vector<std::string> required_bindings(TemplateKind kind);

/// "SAMPLE 1:\n<text>\n\nSAMPLE 2:\n<text>"; empty list renders empty.
std::string render_samples(const std::vector<std::string>& samples);

/// Neighbor sample line: "Rating of 3.0 with the review: <text>".
std::string neighbor_sample(double rating, std::string_view text);

/// Field-order-preserving item description: "key: value" lines, nested
/// attributes as " -Key: value", a second nesting level as "    - key : value".
/// Empty values are omitted.
std::string render_item_details(const ItemMeta& meta);

/// "two", "three", ... ("26" style digits past twenty).
std::string number_word(std::size_t n);

class PromptBuilder {
 public:
  explicit PromptBuilder(TemplateStore store) : store_(std::move(store)) {}

  /// Pure substitution. Values are inserted verbatim and never rescanned.
  /// Throws MissingBinding (naming the bracketed placeholder) when a
  /// placeholder is unbound, or bound to an empty string.
  PromptBundle build(TemplateKind kind, const Bindings& bindings) const;

  const TemplateStore& store() const noexcept { return store_; }

 private:
  std::string best_of_n_template(std::size_t n) const;

  TemplateStore store_;
};

}  // namespace draftwise
