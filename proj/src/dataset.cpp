#include "draftwise/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "draftwise/errors.hpp"
#include "draftwise/text.hpp"

namespace draftwise {
namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string id_field(const Json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) throw SchemaError(line, fmt::format("missing field '{}'", key));
  if (it->is_string()) {
    std::string s = it->get<std::string>();
    if (text::trim(s).empty()) throw SchemaError(line, fmt::format("empty field '{}'", key));
    return s;
  }
  if (it->is_number_integer()) return it->dump();
  throw SchemaError(line, fmt::format("field '{}' must be a string", key));
}

template <class F>
void for_each_line(std::istream& in, F&& f) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    f(line, n);
  }
}

Json parse_object_line(const std::string& line, std::size_t n) {
  Json j = Json::parse(line, nullptr, false);
  if (j.is_discarded()) throw SchemaError(n, "not valid JSON");
  if (!j.is_object()) throw SchemaError(n, "expected a JSON object");
  return j;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + p.string());
  return out;
}

class PyDictParser {
 public:
  explicit PyDictParser(std::string_view s) : s_(s) {}

  std::optional<Json> parse() {
    skip();
    auto v = dict();
    skip();
    if (!v || pos_ != s_.size()) return std::nullopt;
    return v;
  }

 private:
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  std::optional<std::string> quoted() {
    skip();
    if (pos_ < s_.size() && (s_[pos_] == 'u' || s_[pos_] == 'b') && pos_ + 1 < s_.size() &&
        (s_[pos_ + 1] == '\'' || s_[pos_ + 1] == '"'))
      ++pos_;
    if (pos_ >= s_.size() || (s_[pos_] != '\'' && s_[pos_] != '"')) return std::nullopt;
    char q = s_[pos_++];
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != q) {
      if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) ++pos_;
      out += s_[pos_++];
    }
    if (pos_ >= s_.size()) return std::nullopt;
    ++pos_;
    return out;
  }
  std::optional<Json> value() {
    skip();
    if (pos_ >= s_.size()) return std::nullopt;
    if (s_[pos_] == '{') return dict();
    if (auto q = quoted()) return Json(*q);
    std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != '}') ++pos_;
    std::string word = text::trim(s_.substr(start, pos_ - start));
    if (word == "True") return Json(true);
    if (word == "False") return Json(false);
    if (word == "None") return Json(nullptr);
    if (word.empty()) return std::nullopt;
    return Json(word);
  }
  std::optional<Json> dict() {
    if (!eat('{')) return std::nullopt;
    Json obj = Json::object();
    if (eat('}')) return obj;
    while (true) {
      auto key = quoted();
      if (!key || !eat(':')) return std::nullopt;
      auto v = value();
      if (!v) return std::nullopt;
      obj[*key] = std::move(*v);
      if (eat(',')) {
        if (eat('}')) return obj;
        continue;
      }
      if (eat('}')) return obj;
      return std::nullopt;
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

Json normalize_attribute(const Json& v) {
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (!s.empty() && s.front() == '{')
      if (auto parsed = parse_python_dict(s)) return *parsed;
  }
  return v;
}

}  // namespace

std::string_view to_string(EnglishFilter f) { return f == EnglishFilter::off ? "off" : "heuristic"; }

EnglishFilter parse_english_filter(std::string_view name) {
  if (name == "off") return EnglishFilter::off;
  if (name == "heuristic") return EnglishFilter::heuristic;
  throw ConfigError(fmt::format("unknown english filter '{}'", name));
}

double ascii_letter_ratio(std::string_view s) {
  std::size_t ascii = 0, other = 0;
  for (unsigned char c : s) {
    if (c < 0x80) {
      if (std::isalpha(c)) ++ascii;
    } else if ((c & 0xC0) != 0x80) {
      ++other;  // lead byte of a multi-byte code point
    }
  }
  if (ascii + other == 0) return 1.0;
  return static_cast<double>(ascii) / static_cast<double>(ascii + other);
}

bool looks_english(std::string_view text, double threshold) { return ascii_letter_ratio(text) >= threshold; }

std::optional<Json> parse_python_dict(std::string_view text) { return PyDictParser(text).parse(); }

void to_json(Json& j, const IngestReport& r) {
  j = Json{{"records_path", r.records_path},
           {"meta_path", r.meta_path},
           {"dataset_kind", to_string(r.dataset_kind)},
           {"english_filter", to_string(r.english_filter)},
           {"english_threshold", r.english_threshold},
           {"english_filter_note", "ASCII-letter ratio heuristic, not language identification"},
           {"record_lines", r.record_lines},
           {"records_kept", r.records_kept},
           {"dropped_non_english", r.dropped_non_english},
           {"meta_lines", r.meta_lines},
           {"meta_items", r.meta_items},
           {"dropped_meta_fields", r.dropped_meta_fields}};
}

std::vector<ReviewRecord> read_records(std::istream& in, const IngestOptions& options,
                                       IngestReport& report) {
  const RatingScale scale = options.rating_scale.value_or(default_rating_scale(options.dataset_kind));
  std::vector<ReviewRecord> out;
  for_each_line(in, [&](const std::string& line, std::size_t n) {
    ++report.record_lines;
    Json j = parse_object_line(line, n);
    ReviewRecord r;
    r.user_id = id_field(j, "user_id", n);
    r.item_id = id_field(j, "item_id", n);
    auto rating = j.find("rating");
    if (rating == j.end() || rating->is_null()) throw SchemaError(n, "missing field 'rating'");
    if (!rating->is_number()) throw SchemaError(n, "field 'rating' must be a number");
    r.rating = rating->get<double>();
    if (!scale.contains(r.rating))
      throw SchemaError(n, fmt::format("rating {} outside [{}, {}]", r.rating, scale.min, scale.max));
    auto txt = j.find("text");
    if (txt == j.end() || txt->is_null()) throw SchemaError(n, "missing field 'text'");
    if (!txt->is_string()) throw SchemaError(n, "field 'text' must be a string");
    r.text = txt->get<std::string>();
    if (text::trim(r.text).empty()) throw SchemaError(n, "empty field 'text'");
    if (auto id = j.find("record_id"); id != j.end() && !id->is_null())
      r.record_id = id_field(j, "record_id", n);
    else
      r.record_id = derive_record_id(r.user_id, r.item_id, r.text);

    if (options.english_filter == EnglishFilter::heuristic &&
        !looks_english(r.text, options.english_threshold)) {
      ++report.dropped_non_english;
      return;
    }
    ++report.records_kept;
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<ItemMeta> read_meta(std::istream& in, const IngestOptions& options, IngestReport& report) {
  std::vector<ItemMeta> out;
  std::set<std::string> seen;
  const auto declared = declared_fields(options.dataset_kind);
  for_each_line(in, [&](const std::string& line, std::size_t n) {
    ++report.meta_lines;
    Json j = parse_object_line(line, n);
    ItemMeta m;
    m.item_id = id_field(j, "item_id", n);
    m.dataset_kind = options.dataset_kind;
    if (auto k = j.find("dataset_kind"); k != j.end() && k->is_string() &&
                                         k->get<std::string>() != to_string(options.dataset_kind))
      throw SchemaError(n, "dataset_kind does not match the ingest kind");
    if (!seen.insert(m.item_id).second) throw SchemaError(n, "duplicate item_id " + m.item_id);

    Json source = Json::object();
    if (auto f = j.find("fields"); f != j.end() && f->is_object()) {
      source = *f;
    } else {
      for (const auto& [key, value] : j.items())
        if (key != "item_id" && key != "dataset_kind" && key != "placeholder") source[key] = value;
    }
    for (auto field : declared) {
      auto it = source.find(std::string(field));
      if (it == source.end()) continue;
      Json v = *it;
      if (options.dataset_kind == DatasetKind::yelp && field == "attributes") {
        v = normalize_attribute(v);
        if (v.is_object())
          for (auto& [key, sub] : v.items()) sub = normalize_attribute(sub);
      }
      m.fields[std::string(field)] = std::move(v);
    }
    for (const auto& [key, value] : source.items())
      if (std::find(declared.begin(), declared.end(), key) == declared.end()) ++report.dropped_meta_fields;
    ++report.meta_items;
    out.push_back(std::move(m));
  });
  return out;
}

Corpus ingest(const std::filesystem::path& records_path, const std::filesystem::path& meta_path,
              const IngestOptions& options) {
  Corpus c;
  c.report.records_path = records_path.string();
  c.report.meta_path = meta_path.string();
  c.report.dataset_kind = options.dataset_kind;
  c.report.english_filter = options.english_filter;
  c.report.english_threshold = options.english_threshold;
  {
    auto in = open_in(records_path);
    c.records = read_records(in, options, c.report);
  }
  {
    auto in = open_in(meta_path);
    c.meta = read_meta(in, options, c.report);
  }
  return c;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  {
    auto out = open_out(dir / "records.jsonl");
    for (const auto& r : corpus.records) out << Json(r).dump() << '\n';
  }
  {
    auto out = open_out(dir / "items.jsonl");
    for (const auto& m : corpus.meta) out << Json(m).dump() << '\n';
  }
  auto out = open_out(dir / "ingest_report.json");
  out << Json(corpus.report).dump(2) << '\n';
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  {
    auto in = open_in(dir / "records.jsonl");
    for_each_line(in, [&](const std::string& line, std::size_t n) {
      try {
        c.records.push_back(parse_object_line(line, n).get<ReviewRecord>());
      } catch (const Json::exception& e) {
        throw SchemaError(n, e.what());
      }
    });
  }
  {
    auto in = open_in(dir / "items.jsonl");
    for_each_line(in, [&](const std::string& line, std::size_t n) {
      try {
        c.meta.push_back(parse_object_line(line, n).get<ItemMeta>());
      } catch (const Json::exception& e) {
        throw SchemaError(n, e.what());
      }
    });
  }
  if (!c.meta.empty()) c.report.dataset_kind = c.meta.front().dataset_kind;
  c.report.records_kept = c.records.size();
  c.report.meta_items = c.meta.size();
  return c;
}

// ---------------------------------------------------------------------------
// splits

void SplitSpec::validate() const {
  if (split_size < 1) throw ConfigError("split.split_size must be positive");
}

void to_json(Json& j, const SplitSpec& s) {
  j = Json{{"split_size", s.split_size},
           {"seed", s.seed},
           {"min_own_profile_entries", s.min_own_profile_entries},
           {"count_neighbor_entries", s.count_neighbor_entries}};
}

void from_json(const Json& j, SplitSpec& s) {
  s.split_size = j.value("split_size", s.split_size);
  s.seed = j.value("seed", s.seed);
  s.min_own_profile_entries = j.value("min_own_profile_entries", s.min_own_profile_entries);
  s.count_neighbor_entries = j.value("count_neighbor_entries", s.count_neighbor_entries);
}

void to_json(Json& j, const EvalRow& r) {
  j = Json{{"query_id", r.query_id},
           {"split", r.split},
           {"user_id", r.user_id},
           {"target_rating", r.target_rating},
           {"target_record", r.target_record},
           {"item_meta", r.item_meta}};
}

void from_json(const Json& j, EvalRow& r) {
  r.query_id = j.at("query_id").get<std::string>();
  r.split = j.value("split", std::string{});
  r.user_id = j.at("user_id").get<std::string>();
  r.target_rating = j.at("target_rating").get<double>();
  r.target_record = j.at("target_record").get<ReviewRecord>();
  r.item_meta = j.at("item_meta").get<ItemMeta>();
}

std::vector<std::string> eligible_users(const InteractionGraph& graph, const SplitSpec& spec) {
  std::vector<std::string> out;
  for (const auto& u : graph.users()) {
    std::size_t own = graph.edges_of_user(u).size();
    if (own == 0) continue;
    std::size_t available = own - 1;
    if (spec.count_neighbor_entries && available < spec.min_own_profile_entries)
      available += user_profile(graph, u).neighbor_entries.size();
    if (available >= spec.min_own_profile_entries) out.push_back(u);
  }
  return out;
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_below needs n > 0");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

Splits make_splits(const InteractionGraph& graph, const SplitSpec& spec) {
  spec.validate();
  Splits out;
  auto users = eligible_users(graph, spec);
  out.eligible_users = users.size();
  if (users.size() < 2 * spec.split_size) throw InsufficientUsers(users.size(), 2 * spec.split_size);

  std::mt19937_64 rng(mix(spec.seed));
  for (std::size_t i = users.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(users[i - 1], users[j]);
  }

  auto make_row = [&](const std::string& user, const std::string& split, std::size_t index) {
    auto edges = graph.edges_of_user(user);
    std::mt19937_64 pick(mix(spec.seed ^ text::fnv1a64(user)));
    const ReviewRecord& target = graph.edges()[edges[uniform_below(pick, edges.size())]];
    EvalRow row;
    row.query_id = fmt::format("{}-{:05}", split, index + 1);
    row.split = split;
    row.user_id = user;
    row.target_record = target;
    row.item_meta = graph.item_meta(target.item_id);
    row.target_rating = target.rating;
    return row;
  };
  for (std::size_t i = 0; i < spec.split_size; ++i) {
    out.dev.push_back(make_row(users[i], "dev", i));
    out.test.push_back(make_row(users[spec.split_size + i], "test", i));
  }
  return out;
}

void write_eval_rows(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
  auto out = open_out(path);
  for (const auto& r : rows) out << Json(r).dump() << '\n';
}

std::vector<EvalRow> read_eval_rows(const std::filesystem::path& path) {
  std::vector<EvalRow> rows;
  auto in = open_in(path);
  for_each_line(in, [&](const std::string& line, std::size_t n) {
    try {
      rows.push_back(parse_object_line(line, n).get<EvalRow>());
    } catch (const Json::exception& e) {
      throw SchemaError(n, e.what());
    }
  });
  return rows;
}

}  // namespace draftwise
