#include "draftwise/prompt_builder.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "draftwise/errors.hpp"
#include "draftwise/text.hpp"

#ifndef DRAFTWISE_TEMPLATE_DIR
#define DRAFTWISE_TEMPLATE_DIR "templates"
#endif

namespace draftwise {
namespace {

const std::regex& placeholder_regex() {
  static const std::regex re(R"(\[([A-Z][A-Z0-9_ ]*)\])");
  return re;
}

std::string scalar_text(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "True" : "False";
  if (v.is_null()) return "None";
  if (v.is_array()) {
    std::vector<std::string> parts;
    for (const auto& e : v) parts.push_back(scalar_text(e));
    return text::join(parts, ", ");
  }
  return v.dump();
}

bool is_empty_value(const Json& v) {
  if (v.is_null()) return true;
  if (v.is_string()) return text::trim(v.get_ref<const std::string&>()).empty();
  if (v.is_object() || v.is_array()) return v.empty();
  return false;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to,
                        std::size_t* count = nullptr) {
  std::size_t n = 0;
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
    ++n;
  }
  if (count) *count = n;
  return s;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw TemplateError("cannot read template " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view to_string(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::query_x:
      return "query_x";
    case TemplateKind::generation:
      return "generation";
    case TemplateKind::critic:
      return "critic";
    case TemplateKind::refinement:
      return "refinement";
    case TemplateKind::knockout:
      return "knockout";
    case TemplateKind::best_of_n:
      return "best_of_n";
    case TemplateKind::style_extraction:
      return "style_extraction";
    case TemplateKind::content_extraction:
      return "content_extraction";
    case TemplateKind::critic_topics:
      return "critic_topics";
    case TemplateKind::geval_judge:
      return "geval_judge";
  }
  return "query_x";
}

TemplateKind parse_template_kind(std::string_view name) {
  for (auto k : kAllTemplateKinds)
    if (to_string(k) == name) return k;
  throw TemplateError(fmt::format("unknown template kind '{}'", name));
}

std::string placeholder::candidate(std::size_t index) {
  return fmt::format("GENERATED_OUTPUT_{}", static_cast<char>('A' + index));
}

TemplateStore TemplateStore::load(const std::filesystem::path& root, std::string_view noun) {
  TemplateStore store;
  store.noun_ = std::string(noun);
  for (auto kind : kAllTemplateKinds) {
    store.texts_[kind] = read_file(root / std::string(noun) / (std::string(to_string(kind)) + ".txt"));
  }
  return store;
}

std::filesystem::path TemplateStore::default_root() {
  if (const char* env = std::getenv("DRAFTWISE_TEMPLATE_DIR"); env && *env) return env;
  return DRAFTWISE_TEMPLATE_DIR;
}

const std::string& TemplateStore::text(TemplateKind kind) const { return texts_.at(kind); }

std::vector<std::string> TemplateStore::placeholders(TemplateKind kind) const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  const auto& t = text(kind);
  for (std::sregex_iterator it(t.begin(), t.end(), placeholder_regex()), end; it != end; ++it) {
    std::string name = (*it)[1].str();
    if (seen.insert(name).second) out.push_back(name);
  }
  return out;
}

std::vector<std::string> required_bindings(TemplateKind kind) {
  using namespace placeholder;
  auto s = [](std::string_view v) { return std::string(v); };
  switch (kind) {
    case TemplateKind::query_x:
      return {s(kTargetRating), s(kItemDetails)};
    case TemplateKind::generation:
      return {s(kUserSamples), s(kItemDetails), s(kNeighborSamples), s(kTargetRating)};
    case TemplateKind::critic:
      return {s(kTargetRating), s(kItemDetails), s(kDraft), s(kUserSamples), s(kNeighborSamples)};
    case TemplateKind::refinement:
      // the generation prompt is rendered from the same bindings
      return {s(kUserSamples), s(kItemDetails), s(kNeighborSamples), s(kTargetRating),
              s(kGenerationPrompt), s(kDraft), s(kFeedback)};
    case TemplateKind::knockout:
      return {s(kUserSamples), s(kNeighborSamples), s(kQuery), candidate(0), candidate(1)};
    case TemplateKind::best_of_n:
      return {s(kUserSamples), s(kNeighborSamples), s(kQuery), candidate(0), candidate(1),
              candidate(2)};
    case TemplateKind::style_extraction:
      return {s(kUserSamples)};
    case TemplateKind::content_extraction:
      return {s(kNeighborSamples)};
    case TemplateKind::critic_topics:
      return {s(kQuery), s(kDraft), s(kWritingStyle), s(kTargetRating), s(kItemCharacteristics)};
    case TemplateKind::geval_judge:
      return {s(kInstruction), s(kReference), s(kResponse)};
  }
  return {};
}

std::string render_samples(const std::vector<std::string>& samples) {
  std::string out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i) out += "\n\n";
    out += fmt::format("SAMPLE {}:\n{}", i + 1, samples[i]);
  }
  return out;
}

std::string neighbor_sample(double rating, std::string_view review) {
  return fmt::format("Rating of {} with the review: {}", text::format_rating(rating), review);
}

std::string render_item_details(const ItemMeta& meta) {
  std::vector<std::string> lines;
  for (auto field : declared_fields(meta.dataset_kind)) {
    auto it = meta.fields.find(std::string(field));
    if (it == meta.fields.end() || is_empty_value(*it)) continue;
    if (!it->is_object()) {
      lines.push_back(fmt::format("{}: {}", field, scalar_text(*it)));
      continue;
    }
    lines.push_back(fmt::format("{}:", field));
    for (const auto& [key, value] : it->items()) {
      if (value.is_object()) {
        lines.push_back(fmt::format(" -{}: ", key));
        for (const auto& [sub_key, sub_value] : value.items())
          lines.push_back(fmt::format("    - {} : {}", sub_key, scalar_text(sub_value)));
      } else {
        lines.push_back(fmt::format(" -{}: {}", key, scalar_text(value)));
      }
    }
  }
  return text::join(lines, "\n");
}

std::string number_word(std::size_t n) {
  static constexpr std::array<std::string_view, 21> kWords{
      "zero",    "one",     "two",       "three",    "four",     "five",    "six",
      "seven",   "eight",   "nine",      "ten",      "eleven",   "twelve",  "thirteen",
      "fourteen", "fifteen", "sixteen",  "seventeen", "eighteen", "nineteen", "twenty"};
  if (n < kWords.size()) return std::string(kWords[n]);
  return std::to_string(n);
}

std::string PromptBuilder::best_of_n_template(std::size_t n) const {
  const std::string& stored = store_.text(TemplateKind::best_of_n);
  if (n == 3) return stored;
  if (n < 2 || n > 26) throw TemplateError(fmt::format("best-of-N needs 2..26 candidates, got {}", n));

  auto section = [](std::size_t i) {
    return fmt::format("# Review {}:\n[{}]", static_cast<char>('A' + i), placeholder::candidate(i));
  };
  std::string stored_sections = section(0) + "\n\n" + section(1) + "\n\n" + section(2);
  std::string sections;
  std::string answers = "<either A";
  for (std::size_t i = 0; i < n; ++i) {
    if (i) sections += "\n\n";
    sections += section(i);
    if (i) answers += fmt::format(" or {}", static_cast<char>('A' + i));
  }
  answers += ">";

  std::size_t hits = 0;
  std::string out = replace_all(stored, stored_sections, sections, &hits);
  if (hits != 1) throw TemplateError("best_of_n template: review sections not found");
  out = replace_all(std::move(out), "<either A or B or C>", answers, &hits);
  if (hits != 1) throw TemplateError("best_of_n template: answer enumeration not found");
  out = replace_all(std::move(out), " three reviews", " " + number_word(n) + " reviews", &hits);
  if (hits == 0) throw TemplateError("best_of_n template: candidate count wording not found");
  return out;
}

PromptBundle PromptBuilder::build(TemplateKind kind, const Bindings& bindings) const {
  std::string tpl;
  Bindings extra;
  if (kind == TemplateKind::best_of_n) {
    std::size_t n = 0;
    while (n < 26 && bindings.contains(placeholder::candidate(n))) ++n;
    if (n < 2) throw MissingBinding("[" + placeholder::candidate(n) + "]");
    tpl = best_of_n_template(n);
  } else {
    tpl = store_.text(kind);
  }
  if (kind == TemplateKind::refinement && !bindings.contains(placeholder::kGenerationPrompt)) {
    extra.emplace(std::string(placeholder::kGenerationPrompt),
                  build(TemplateKind::generation, bindings).text);
  }

  auto lookup = [&](const std::string& name) -> const BindingValue* {
    if (auto it = bindings.find(name); it != bindings.end()) return &it->second;
    if (auto it = extra.find(name); it != extra.end()) return &it->second;
    return nullptr;
  };

  PromptBundle bundle;
  bundle.kind = kind;
  std::string& out = bundle.text;
  out.reserve(tpl.size() * 2);
  auto last = tpl.cbegin();
  for (std::sregex_iterator it(tpl.begin(), tpl.end(), placeholder_regex()), end; it != end; ++it) {
    const auto& match = *it;
    out.append(last, match[0].first);
    last = match[0].second;
    std::string name = match[1].str();
    const BindingValue* value = lookup(name);
    if (!value) throw MissingBinding("[" + name + "]");
    std::string rendered;
    if (const auto* s = std::get_if<std::string>(value)) {
      if (s->empty()) throw MissingBinding("[" + name + "]");
      rendered = *s;
    } else {
      rendered = render_samples(std::get<std::vector<std::string>>(*value));
    }
    out += rendered;
    bundle.placeholders_filled.emplace(std::move(name), std::move(rendered));
  }
  out.append(last, tpl.cend());
  return bundle;
}

}  // namespace draftwise
