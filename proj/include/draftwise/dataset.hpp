#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "draftwise/domain.hpp"
#include "draftwise/graph_store.hpp"

namespace draftwise {

enum class EnglishFilter { off, heuristic };

std::string_view to_string(EnglishFilter f);
EnglishFilter parse_english_filter(std::string_view name);

/// Share of ASCII letters among all letter-like code points (ASCII letters
/// plus every non-ASCII code point). 1 when the text has none.
double ascii_letter_ratio(std::string_view text);

/// Approximate language check: ascii_letter_ratio(text) >= threshold.
bool looks_english(std::string_view text, double threshold = 0.9);

/// Parses a Python literal dict such as "{'garage': False, 'lot': True}" into
/// an object (True/False -> bool, None -> null, quotes dropped). nullopt when
/// the text is not such a literal.
std::optional<Json> parse_python_dict(std::string_view text);

struct IngestOptions {
  DatasetKind dataset_kind = DatasetKind::yelp;
  EnglishFilter english_filter = EnglishFilter::off;
  double english_threshold = 0.9;
  /// Defaults to the dataset's scale.
  std::optional<RatingScale> rating_scale;
};

struct IngestReport {
  std::string records_path;
  std::string meta_path;
  DatasetKind dataset_kind = DatasetKind::yelp;
  EnglishFilter english_filter = EnglishFilter::off;
  double english_threshold = 0.9;
  std::size_t record_lines = 0;
  std::size_t records_kept = 0;
  std::size_t dropped_non_english = 0;
  std::size_t meta_lines = 0;
  std::size_t meta_items = 0;
  /// Undeclared metadata fields removed.
  std::size_t dropped_meta_fields = 0;
};

void to_json(Json& j, const IngestReport& r);

struct Corpus {
  std::vector<ReviewRecord> records;
  std::vector<ItemMeta> meta;
  IngestReport report;
};

/// One JSON object per line: user_id, item_id, rating, text, optional
/// record_id. Blank lines are skipped. Throws SchemaError naming the line.
std::vector<ReviewRecord> read_records(std::istream& in, const IngestOptions& options,
                                       IngestReport& report);

/// item_id plus the declared fields, either at the top level or under
/// "fields". Undeclared fields are dropped; yelp attribute values written as
/// Python dict literals become nested objects.
std::vector<ItemMeta> read_meta(std::istream& in, const IngestOptions& options, IngestReport& report);

Corpus ingest(const std::filesystem::path& records_path, const std::filesystem::path& meta_path,
              const IngestOptions& options);

/// Normalized corpus files as written by `ingest` (records.jsonl, items.jsonl).
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& dir);

struct SplitSpec {
  std::size_t split_size = 2500;
  std::uint64_t seed = 0;
  /// Profile entries a user needs besides the held-out review.
  std::size_t min_own_profile_entries = 1;
  /// Also count neighbor entries toward min_own_profile_entries.
  bool count_neighbor_entries = false;

  void validate() const;
};

void to_json(Json& j, const SplitSpec& s);
void from_json(const Json& j, SplitSpec& s);

struct EvalRow {
  std::string query_id;
  std::string split;
  std::string user_id;
  ReviewRecord target_record;
  ItemMeta item_meta;
  double target_rating = 0.0;

  bool operator==(const EvalRow&) const = default;
};

void to_json(Json& j, const EvalRow& r);
void from_json(const Json& j, EvalRow& r);

struct Splits {
  std::vector<EvalRow> dev;
  std::vector<EvalRow> test;
  std::size_t eligible_users = 0;
};

/// Users sorted by id that satisfy the eligibility rule of `spec`.
std::vector<std::string> eligible_users(const InteractionGraph& graph, const SplitSpec& spec);

/// Uniform integer in [0, n) by rejection sampling; identical on every
/// standard library, unlike std::uniform_int_distribution.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n);

/// Seeded shuffle of the eligible users: the first split_size go to dev, the
/// next split_size to test. Each user gets one seeded-random held-out review.
/// Throws InsufficientUsers when fewer than 2 * split_size users qualify.
Splits make_splits(const InteractionGraph& graph, const SplitSpec& spec);

void write_eval_rows(const std::filesystem::path& path, const std::vector<EvalRow>& rows);
std::vector<EvalRow> read_eval_rows(const std::filesystem::path& path);

}  // namespace draftwise
