#include "draftwise/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <fmt/format.h>

#include "draftwise/porter_stemmer.hpp"
#include "draftwise/text.hpp"

namespace draftwise {
namespace {

constexpr int kNone = -1;

struct AlignState {
  std::vector<char> used;  // reference positions taken
  int last_h = kNone;
  int last_r = kNone;
  std::size_t matches = 0;
  std::size_t chunks = 0;
  std::size_t bound = 0;  // matches + still reachable matches of this stage
  std::vector<std::pair<int, int>> pairs;
};

bool better(const AlignState& a, const AlignState& b) {
  if (a.bound != b.bound) return a.bound > b.bound;
  if (a.chunks != b.chunks) return a.chunks < b.chunks;
  return a.pairs < b.pairs;
}

void advance(AlignState& s, int h, int r) {
  if (!(s.last_h != kNone && s.last_h == h - 1 && s.last_r == r - 1)) ++s.chunks;
  s.last_h = h;
  s.last_r = r;
}

void add_pair(AlignState& s, int h, int r) {
  advance(s, h, r);
  ++s.matches;
  s.pairs.emplace_back(h, r);
}

/// One matching stage. `fixed[h]` is the reference position matched to h by an
/// earlier stage, or kNone. Only positions unmatched so far take part.
std::vector<int> align_stage(const std::vector<std::string>& hyp_keys,
                             const std::vector<std::string>& ref_keys, const std::vector<int>& fixed,
                             const std::vector<char>& ref_taken, std::size_t beam_width) {
  const int n = static_cast<int>(hyp_keys.size());

  std::unordered_map<std::string, std::vector<int>> ref_positions;
  for (int r = 0; r < static_cast<int>(ref_keys.size()); ++r)
    if (!ref_taken[static_cast<std::size_t>(r)]) ref_positions[ref_keys[static_cast<std::size_t>(r)]].push_back(r);

  // remaining_hyp[h][key]: free hypothesis occurrences of key at positions >= h
  std::vector<std::unordered_map<std::string, int>> suffix(static_cast<std::size_t>(n) + 1);
  for (int h = n - 1; h >= 0; --h) {
    suffix[static_cast<std::size_t>(h)] = suffix[static_cast<std::size_t>(h) + 1];
    if (fixed[static_cast<std::size_t>(h)] == kNone && ref_positions.count(hyp_keys[static_cast<std::size_t>(h)]))
      ++suffix[static_cast<std::size_t>(h)][hyp_keys[static_cast<std::size_t>(h)]];
  }
  auto reachable = [&](const AlignState& s, int from) {
    std::size_t total = 0;
    for (const auto& [key, count] : suffix[static_cast<std::size_t>(from)]) {
      int free_refs = 0;
      for (int r : ref_positions.at(key))
        if (!s.used[static_cast<std::size_t>(r)]) ++free_refs;
      total += static_cast<std::size_t>(std::min(count, free_refs));
    }
    return total;
  };

  AlignState start;
  start.used = ref_taken;
  start.bound = reachable(start, 0);
  std::vector<AlignState> beam{start};

  for (int h = 0; h < n; ++h) {
    std::vector<AlignState> next;
    for (auto& s : beam) {
      int f = fixed[static_cast<std::size_t>(h)];
      if (f != kNone) {
        // earlier-stage pairs only shape the chunk count
        AlignState c = s;
        advance(c, h, f);
        c.bound = c.matches + reachable(c, h + 1);
        next.push_back(std::move(c));
        continue;
      }
      AlignState skip = s;
      skip.bound = skip.matches + reachable(skip, h + 1);
      next.push_back(std::move(skip));
      auto it = ref_positions.find(hyp_keys[static_cast<std::size_t>(h)]);
      if (it == ref_positions.end()) continue;
      for (int r : it->second) {
        if (s.used[static_cast<std::size_t>(r)]) continue;
        AlignState c = s;
        c.used[static_cast<std::size_t>(r)] = 1;
        add_pair(c, h, r);
        c.bound = c.matches + reachable(c, h + 1);
        next.push_back(std::move(c));
      }
    }
    std::sort(next.begin(), next.end(), better);
    // drop states equivalent for the future: same used set and same last pair
    std::vector<AlignState> kept;
    for (auto& s : next) {
      bool dup = std::any_of(kept.begin(), kept.end(), [&](const AlignState& k) {
        return k.last_h == s.last_h && k.last_r == s.last_r && k.used == s.used;
      });
      if (!dup) kept.push_back(std::move(s));
      if (kept.size() >= beam_width) break;
    }
    beam = std::move(kept);
  }

  const AlignState& best = *std::min_element(beam.begin(), beam.end(), [](const AlignState& a, const AlignState& b) {
    if (a.matches != b.matches) return a.matches > b.matches;
    return a.chunks < b.chunks;
  });
  std::vector<int> out = fixed;
  for (auto [h, r] : best.pairs) out[static_cast<std::size_t>(h)] = r;
  return out;
}

std::size_t count_chunks(const std::vector<int>& alignment) {
  std::size_t chunks = 0;
  int prev_h = kNone, prev_r = kNone;
  for (int h = 0; h < static_cast<int>(alignment.size()); ++h) {
    int r = alignment[static_cast<std::size_t>(h)];
    if (r == kNone) continue;
    if (!(prev_h != kNone && prev_h == h - 1 && prev_r == r - 1)) ++chunks;
    prev_h = h;
    prev_r = r;
  }
  return chunks;
}

std::vector<std::string> stems(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(porter_stem(t));
  return out;
}

}  // namespace

void to_json(Json& j, const MeteorParams& p) {
  j = Json{{"alpha", p.alpha}, {"beta", p.beta}, {"gamma", p.gamma},
           {"use_stem", p.use_stem}, {"beam_width", p.beam_width}};
}

void from_json(const Json& j, MeteorParams& p) {
  p.alpha = j.value("alpha", p.alpha);
  p.beta = j.value("beta", p.beta);
  p.gamma = j.value("gamma", p.gamma);
  p.use_stem = j.value("use_stem", p.use_stem);
  p.beam_width = j.value("beam_width", p.beam_width);
}

MeteorDetail meteor_detail(std::string_view hypothesis, std::string_view reference,
                           const MeteorParams& params) {
  MeteorDetail d;
  auto hyp = text::meteor_tokens(hypothesis);
  auto ref = text::meteor_tokens(reference);
  d.hypothesis_length = hyp.size();
  d.reference_length = ref.size();
  if (hyp.empty() || ref.empty()) return d;

  const std::size_t width = std::max<std::size_t>(params.beam_width, 1);
  std::vector<int> alignment(hyp.size(), kNone);
  std::vector<char> taken(ref.size(), 0);
  alignment = align_stage(hyp, ref, alignment, taken, width);
  if (params.use_stem) {
    for (int r : alignment)
      if (r != kNone) taken[static_cast<std::size_t>(r)] = 1;
    alignment = align_stage(stems(hyp), stems(ref), alignment, taken, width);
  }

  d.matches = static_cast<std::size_t>(std::count_if(alignment.begin(), alignment.end(), [](int r) { return r != kNone; }));
  if (d.matches == 0) return d;
  d.chunks = count_chunks(alignment);
  const double m = static_cast<double>(d.matches);
  d.precision = m / static_cast<double>(hyp.size());
  d.recall = m / static_cast<double>(ref.size());
  d.fmean = d.precision * d.recall / (params.alpha * d.precision + (1.0 - params.alpha) * d.recall);
  d.penalty = params.gamma * std::pow(static_cast<double>(d.chunks) / m, params.beta);
  d.score = d.fmean * (1.0 - d.penalty);
  return d;
}

double meteor(std::string_view hypothesis, std::string_view reference, const MeteorParams& params) {
  return meteor_detail(hypothesis, reference, params).score;
}

// ---------------------------------------------------------------------------
// G-Eval

void GEvalConfig::validate() const {
  if (sample_count < 1) throw ConfigError("geval.sample_count must be at least 1");
  if (score_max <= score_min || score_min < 0) throw ConfigError("geval score range is invalid");
}

void to_json(Json& j, const GEvalConfig& c) {
  j = Json{{"sample_count", c.sample_count},
           {"judge_temperature", c.judge_temperature},
           {"score_min", c.score_min},
           {"score_max", c.score_max}};
}

void from_json(const Json& j, GEvalConfig& c) {
  c.sample_count = j.value("sample_count", c.sample_count);
  c.judge_temperature = j.value("judge_temperature", c.judge_temperature);
  c.score_min = j.value("score_min", c.score_min);
  c.score_max = j.value("score_max", c.score_max);
}

std::optional<int> parse_judge_score(std::string_view raw, const GEvalConfig& config) {
  auto block = extract_last_json_block(raw);
  if (!block.ok() || !block.value.is_object()) return std::nullopt;
  const Json* score = nullptr;
  for (const auto& [k, v] : block.value.items())
    if (text::to_lower_ascii(text::trim(k)) == "score") score = &v;
  if (!score) return std::nullopt;

  std::optional<long long> value;
  if (score->is_number_integer()) {
    value = score->get<long long>();
  } else if (score->is_number_float()) {
    double d = score->get<double>();
    if (std::floor(d) == d) value = static_cast<long long>(d);
  } else if (score->is_string()) {
    std::string s = text::trim(score->get_ref<const std::string&>());
    if (!s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }) &&
        s.size() < 6)
      value = std::stoll(s);
  }
  if (!value || *value < config.score_min || *value > config.score_max) return std::nullopt;
  return static_cast<int>(*value);
}

double geval_from_samples(const std::vector<int>& samples, const GEvalConfig& config) {
  if (samples.empty()) throw AllSamplesUnparseable("no judge sample produced a usable score");
  // Empirical distribution p(s) = count(s) / N, then sum of p(s) * s.
  std::map<int, std::size_t> counts;
  for (int s : samples) ++counts[s];
  const double n = static_cast<double>(samples.size());
  double expected = 0.0;
  for (const auto& [score, count] : counts) expected += (static_cast<double>(count) / n) * score;
  return expected / static_cast<double>(config.score_max);
}

GEvalResult geval_score(const PromptBuilder& builder, std::string_view instruction,
                        std::string_view reference, std::string_view response,
                        const LlmClient& judge, const GEvalConfig& config, std::string_view query_id,
                        int iteration) {
  config.validate();
  Bindings b{{std::string(placeholder::kInstruction), std::string(instruction)},
             {std::string(placeholder::kReference), std::string(reference)},
             {std::string(placeholder::kResponse), std::string(response)}};
  auto prompt = builder.build(TemplateKind::geval_judge, b);
  CallContext ctx;
  ctx.role = Role::judge;
  ctx.purpose = CallPurpose::judge;
  ctx.query_id = std::string(query_id);
  ctx.iteration = iteration;

  GEvalResult out;
  std::size_t failed = 0;
  try {
    out.exchanges = judge.sample_n(prompt, config.sample_count, ctx);
  } catch (const SampleError& e) {
    out.exchanges = e.completed();
    failed = e.failed_indices().size();
  }
  for (const auto& e : out.exchanges) {
    if (auto s = parse_judge_score(e.response_text, config))
      out.samples.push_back(*s);
    else
      ++out.discarded;
  }
  out.discarded += failed;
  out.geval = geval_from_samples(out.samples, config);
  return out;
}

void to_json(Json& j, const MetricScores& m) {
  j = Json{{"iteration", m.iteration}, {"meteor", m.meteor}};
  j["geval"] = m.geval ? Json(*m.geval) : Json(nullptr);
  j["geval_samples"] = m.geval_samples;
  j["geval_discarded"] = m.geval_discarded;
}

void from_json(const Json& j, MetricScores& m) {
  m.iteration = j.at("iteration").get<int>();
  m.meteor = j.at("meteor").get<double>();
  m.geval = j.contains("geval") && !j["geval"].is_null() ? std::optional<double>(j["geval"].get<double>())
                                                         : std::nullopt;
  m.geval_samples = j.value("geval_samples", std::vector<int>{});
  m.geval_discarded = j.value("geval_discarded", std::size_t{0});
}

void to_json(Json& j, const QueryEvaluation& e) {
  j = Json{{"query_id", e.query_id},
           {"strategy", e.strategy},
           {"per_iteration", e.per_iteration},
           {"judge_exchanges", e.judge_exchanges}};
}

void from_json(const Json& j, QueryEvaluation& e) {
  e.query_id = j.at("query_id").get<std::string>();
  e.strategy = j.value("strategy", std::string{});
  e.per_iteration = j.at("per_iteration").get<std::vector<MetricScores>>();
  e.judge_exchanges.clear();
  for (const auto& x : j.value("judge_exchanges", Json::array())) e.judge_exchanges.push_back(x.get<ChatExchange>());
}

QueryEvaluation evaluate_trace(const RunTrace& trace, std::string_view reference,
                               const MeteorParams& params, const JudgeFn& judge) {
  QueryEvaluation out;
  out.query_id = trace.query_id;
  out.strategy = trace.strategy.label();
  for (const auto& it : trace.iterations) {
    MetricScores s;
    s.iteration = it.t;
    s.meteor = meteor(it.draft, reference, params);
    if (judge) {
      try {
        GEvalResult g = judge(trace.query_text, reference, it.draft, it.t);
        s.geval = g.geval;
        s.geval_samples = std::move(g.samples);
        s.geval_discarded = g.discarded;
        out.judge_exchanges.insert(out.judge_exchanges.end(), g.exchanges.begin(), g.exchanges.end());
      } catch (const AllSamplesUnparseable&) {
        s.geval.reset();
      }
    }
    out.per_iteration.push_back(std::move(s));
  }
  return out;
}

void to_json(Json& j, const IterationRow& r) {
  j = Json{{"iteration", r.t},
           {"queries", r.query_count},
           {"meteor", r.meteor},
           {"geval", r.geval ? Json(*r.geval) : Json(nullptr)},
           {"geval_queries", r.geval_count},
           {"ktokens_critic", r.ktokens_critic},
           {"ktokens_generator", r.ktokens_generator},
           {"ktokens_topics", r.ktokens_topics},
           {"approximate_tokens", r.approximate}};
}

std::vector<IterationRow> summarize_split(const std::vector<RunTrace>& traces,
                                          const std::map<std::string, std::string>& references,
                                          const std::map<std::string, QueryEvaluation>* evaluations,
                                          const MeteorParams& params) {
  for (const auto& tr : traces)
    if (!references.count(tr.query_id)) throw MissingReference(tr.query_id);

  struct PerQuery {
    std::vector<double> meteor;
    std::vector<std::optional<double>> geval;
    // cumulative tokens through t
    std::vector<std::int64_t> critic, generator, topics;
    bool approximate = false;
  };
  std::vector<PerQuery> rows;
  int max_t = -1;
  for (const auto& tr : traces) {
    if (tr.status != RunStatus::completed || tr.iterations.empty()) continue;
    PerQuery q;
    const QueryEvaluation* ev = nullptr;
    if (evaluations) {
      auto it = evaluations->find(tr.query_id);
      if (it != evaluations->end()) ev = &it->second;
    }
    std::int64_t c = 0, g = 0, tp = 0;
    for (std::size_t i = 0; i < tr.iterations.size(); ++i) {
      const auto& it = tr.iterations[i];
      for (const auto& e : it.exchanges) {
        q.approximate = q.approximate || e.usage.approximate;
        switch (e.role) {
          case Role::critic:
            c += e.usage.total();
            break;
          case Role::generator:
            g += e.usage.total();
            break;
          case Role::topic_extractor:
            tp += e.usage.total();
            break;
          case Role::judge:
            break;
        }
      }
      q.critic.push_back(c);
      q.generator.push_back(g);
      q.topics.push_back(tp);
      if (ev && i < ev->per_iteration.size()) {
        q.meteor.push_back(ev->per_iteration[i].meteor);
        q.geval.push_back(ev->per_iteration[i].geval);
      } else {
        q.meteor.push_back(meteor(it.draft, references.at(tr.query_id), params));
        q.geval.push_back(std::nullopt);
      }
    }
    max_t = std::max(max_t, static_cast<int>(tr.iterations.size()) - 1);
    rows.push_back(std::move(q));
  }

  std::vector<IterationRow> out;
  for (int t = 0; t <= max_t; ++t) {
    IterationRow row;
    row.t = t;
    double meteor_sum = 0.0, geval_sum = 0.0;
    std::int64_t c = 0, g = 0, tp = 0;
    for (const auto& q : rows) {
      std::size_t i = std::min(static_cast<std::size_t>(t), q.meteor.size() - 1);
      ++row.query_count;
      meteor_sum += q.meteor[i];
      if (q.geval[i]) {
        geval_sum += *q.geval[i];
        ++row.geval_count;
      }
      c += q.critic[i];
      g += q.generator[i];
      tp += q.topics[i];
      row.approximate = row.approximate || q.approximate;
    }
    const double n = static_cast<double>(row.query_count);
    row.meteor = meteor_sum / n;
    if (row.geval_count) row.geval = geval_sum / static_cast<double>(row.geval_count);
    row.ktokens_critic = static_cast<double>(c) / (1000.0 * n);
    row.ktokens_generator = static_cast<double>(g) / (1000.0 * n);
    row.ktokens_topics = static_cast<double>(tp) / (1000.0 * n);
    out.push_back(row);
  }
  return out;
}

}  // namespace draftwise
