#include "draftwise/runner.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "draftwise/errors.hpp"
#include "draftwise/graph_store.hpp"
#include "draftwise/mock_backend.hpp"
#include "draftwise/text.hpp"

namespace fs = std::filesystem;

namespace draftwise {
namespace {

constexpr Role kAllRoles[] = {Role::generator, Role::critic, Role::topic_extractor, Role::judge};

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path x(p);
  if (x.is_absolute() || base.empty()) return x.lexically_normal();
  return (base / x).lexically_normal();
}

void resolve_endpoint(const fs::path& base, EndpointConfig& e) {
  if (!e.is_mock()) return;
  std::string p = e.mock_script_path();
  if (!p.empty()) e.base_url = "mock:" + resolve(base, p).string();
}

Json read_json_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid JSON in " + p.string());
  return j;
}

void write_text(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << content;
}

void write_json(const fs::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::time(nullptr)));
}

/// Runs compute(i) for i in [0, n) on up to `workers` threads and hands each
/// result to write(i, result) on the calling thread, in completion order.
template <class T, class Compute, class Write>
void run_pool(std::size_t n, int workers, Compute compute, Write write) {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::pair<std::size_t, T>> ready;
  std::exception_ptr error;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};

  auto work = [&] {
    while (!stop) {
      std::size_t i = next++;
      if (i >= n) return;
      try {
        T v = compute(i);
        std::lock_guard lock(mu);
        ready.emplace_back(i, std::move(v));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        stop = true;
      }
      cv.notify_one();
    }
  };

  std::size_t count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < count; ++w) threads.emplace_back(work);
    for (std::size_t written = 0; written < n;) {
      std::unique_lock lock(mu);
      cv.wait(lock, [&] { return !ready.empty() || error; });
      if (error) break;
      auto item = std::move(ready.front());
      ready.pop_front();
      lock.unlock();
      try {
        write(item.first, item.second);
      } catch (...) {
        std::lock_guard relock(mu);
        if (!error) error = std::current_exception();
        stop = true;
        break;
      }
      ++written;
    }
    stop = true;
  }
  if (error) std::rethrow_exception(error);
}

InteractionGraph load_graph(const ExperimentConfig& c) {
  Corpus corpus = load_corpus(c.corpus_dir);
  GraphBuildOptions opts;
  opts.strict = c.strict_graph;
  opts.dataset_kind = c.dataset_kind;
  return build_graph(std::move(corpus.records), std::move(corpus.meta), opts);
}

PromptBuilder make_builder(const ExperimentConfig& c) {
  fs::path root = c.template_root.empty() ? TemplateStore::default_root() : c.template_root;
  return PromptBuilder(TemplateStore::load(root, c.dataset_kind));
}

std::string format_number(double v) { return fmt::format("{}", v); }

}  // namespace

// ---------------------------------------------------------------------------
// config

ExperimentConfig ExperimentConfig::from_json(const Json& j, const fs::path& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  try {
    if (auto d = j.find("dataset"); d != j.end()) {
      if (auto k = d->find("kind"); k != d->end()) c.dataset_kind = parse_dataset_kind(k->get<std::string>());
      c.records_path = resolve(base, d->value("records", std::string{}));
      c.meta_path = resolve(base, d->value("meta", std::string{}));
      c.corpus_dir = resolve(base, d->value("corpus_dir", std::string{}));
      if (auto f = d->find("english_filter"); f != d->end())
        c.english_filter = parse_english_filter(f->get<std::string>());
      c.english_threshold = d->value("english_threshold", c.english_threshold);
      c.strict_graph = d->value("strict", c.strict_graph);
    }
    if (auto s = j.find("split"); s != j.end()) {
      draftwise::from_json(*s, c.split);
      c.split_dir = resolve(base, s->value("dir", std::string{}));
      c.split_name = s->value("use", c.split_name);
      if (auto m = s->find("max_queries"); m != s->end() && !m->is_null())
        c.max_queries = m->get<std::size_t>();
    }
    if (auto r = j.find("retrieval"); r != j.end()) draftwise::from_json(*r, c.retrieval);
    if (c.retrieval.embedding_endpoint) resolve_endpoint(base, *c.retrieval.embedding_endpoint);
    c.run_seed = j.value("run_seed", c.run_seed);
    c.strategy.seed = c.run_seed;
    if (auto s = j.find("strategy"); s != j.end()) draftwise::from_json(*s, c.strategy);
    if (auto e = j.find("endpoints"); e != j.end()) {
      for (const auto& [name, value] : e->items()) {
        Role role = parse_role(name);
        EndpointConfig cfg = EndpointConfig::defaults_for(role);
        draftwise::from_json(value, cfg);
        resolve_endpoint(base, cfg);
        c.endpoints[role] = cfg;
      }
    }
    if (auto m = j.find("meteor"); m != j.end()) draftwise::from_json(*m, c.meteor);
    if (auto g = j.find("geval"); g != j.end()) draftwise::from_json(*g, c.geval);
    c.worker_limit = j.value("worker_limit", c.worker_limit);
    c.output_dir = resolve(base, j.value("output_dir", std::string{}));
    c.run_label = j.value("run_label", c.run_label);
    c.template_root = resolve(base, j.value("template_root", std::string{}));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path, const std::vector<std::string>& overrides) {
  Json j = read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return from_json(j, fs::absolute(path).parent_path());
}

Json ExperimentConfig::to_json() const {
  Json endpoints_json = Json::object();
  for (Role r : kAllRoles)
    if (auto it = endpoints.find(r); it != endpoints.end()) endpoints_json[std::string(draftwise::to_string(r))] = it->second;
  return Json{
      {"dataset",
       {{"kind", draftwise::to_string(dataset_kind)},
        {"records", records_path.string()},
        {"meta", meta_path.string()},
        {"corpus_dir", corpus_dir.string()},
        {"english_filter", draftwise::to_string(english_filter)},
        {"english_threshold", english_threshold},
        {"strict", strict_graph}}},
      {"split",
       [&] {
         Json s = split;
         s["dir"] = split_dir.string();
         s["use"] = split_name;
         s["max_queries"] = max_queries ? Json(*max_queries) : Json(nullptr);
         return s;
       }()},
      {"retrieval", retrieval},
      {"strategy", strategy},
      {"endpoints", endpoints_json},
      {"meteor", meteor},
      {"geval", geval},
      {"worker_limit", worker_limit},
      {"output_dir", output_dir.string()},
      {"run_seed", run_seed},
      {"run_label", run_label},
      {"template_root", template_root.string()}};
}

void ExperimentConfig::validate() const {
  if (worker_limit < 1) throw ConfigError("worker_limit must be positive");
  if (english_threshold < 0.0 || english_threshold > 1.0) throw ConfigError("english_threshold must be in [0, 1]");
  split.validate();
  retrieval.validate();
  strategy.validate();
  geval.validate();
  for (const auto& [role, e] : endpoints) {
    try {
      e.validate();
    } catch (const ConfigError& err) {
      throw ConfigError(fmt::format("endpoints.{}: {}", draftwise::to_string(role), err.what()));
    }
  }
}

void ExperimentConfig::validate_for_run() const {
  validate();
  for (Role r : {Role::generator, Role::critic})
    if (!endpoints.contains(r)) throw ConfigError(fmt::format("endpoints.{} is required", draftwise::to_string(r)));
  if (split_name != "dev" && split_name != "test") throw ConfigError("split.use must be dev or test");
  if (corpus_dir.empty()) throw ConfigError("dataset.corpus_dir is required");
  if (split_dir.empty()) throw ConfigError("split.dir is required");
  if (output_dir.empty()) throw ConfigError("output_dir is required");
}

void apply_override(Json& config, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  std::string key = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  Json* node = &config;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + key);
    node = &(*node)[path[i]];
    if (node->is_null()) *node = Json::object();
  }
  if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + key);
  (*node)[path.back()] = std::move(value);
}

std::shared_ptr<Transport> TransportFactory::get(const EndpointConfig& config) {
  if (!config.is_mock()) return std::make_shared<HttpTransport>(config);
  std::lock_guard lock(mu_);
  auto& slot = mocks_[config.mock_script_path()];
  if (!slot) slot = std::make_shared<MockBackend>(MockScript::load(config.mock_script_path()));
  return slot;
}

// ---------------------------------------------------------------------------
// commands

IngestReport cmd_ingest(const ExperimentConfig& config) {
  config.validate();
  if (config.records_path.empty() || config.meta_path.empty())
    throw ConfigError("dataset.records and dataset.meta are required for ingest");
  if (config.corpus_dir.empty()) throw ConfigError("dataset.corpus_dir is required");
  IngestOptions opts;
  opts.dataset_kind = config.dataset_kind;
  opts.english_filter = config.english_filter;
  opts.english_threshold = config.english_threshold;
  Corpus corpus = ingest(config.records_path, config.meta_path, opts);
  write_corpus(config.corpus_dir, corpus);
  spdlog::info("ingested {} records ({} dropped as non-English), {} items", corpus.report.records_kept,
               corpus.report.dropped_non_english, corpus.report.meta_items);
  return corpus.report;
}

Splits cmd_split(const ExperimentConfig& config) {
  config.validate();
  if (config.corpus_dir.empty()) throw ConfigError("dataset.corpus_dir is required");
  if (config.split_dir.empty()) throw ConfigError("split.dir is required");
  InteractionGraph graph = load_graph(config);
  Splits s = make_splits(graph, config.split);
  write_eval_rows(config.split_dir / "dev.jsonl", s.dev);
  write_eval_rows(config.split_dir / "test.jsonl", s.test);
  Json manifest = {{"spec", config.split},
                   {"corpus_records", graph.edges().size()},
                   {"users", graph.users().size()},
                   {"eligible_users", s.eligible_users},
                   {"dev", s.dev.size()},
                   {"test", s.test.size()}};
  write_json(config.split_dir / "split_manifest.json", manifest);
  spdlog::info("split {} eligible users into {} dev and {} test rows", s.eligible_users, s.dev.size(),
               s.test.size());
  return s;
}

RunSummary cmd_run(const ExperimentConfig& config, TransportFactory* factory) {
  config.validate_for_run();
  if (!fs::exists(config.split_dir / "split_manifest.json"))
    throw ConfigError("no split manifest in " + config.split_dir.string());
  TransportFactory local;
  if (!factory) factory = &local;

  std::vector<EvalRow> rows = read_eval_rows(config.split_dir / (config.split_name + ".jsonl"));
  if (config.max_queries && rows.size() > *config.max_queries) rows.resize(*config.max_queries);
  const InteractionGraph graph = load_graph(config);
  const PromptBuilder builder = make_builder(config);

  auto client = [&](Role r) -> std::unique_ptr<LlmClient> {
    auto it = config.endpoints.find(r);
    if (it == config.endpoints.end()) return nullptr;
    return std::make_unique<LlmClient>(it->second, factory->get(it->second));
  };
  auto generator = client(Role::generator);
  auto critic = client(Role::critic);
  auto topics = client(Role::topic_extractor);
  std::unique_ptr<EmbeddingClient> embedder;
  if (config.retrieval.embedding_endpoint)
    embedder = std::make_unique<EmbeddingClient>(*config.retrieval.embedding_endpoint,
                                                 factory->get(*config.retrieval.embedding_endpoint));
  Endpoints endpoints{generator.get(), critic.get(), topics.get()};

  RunSummary summary;
  summary.run_dir = config.output_dir;
  summary.queries = rows.size();
  const std::string started = utc_now();
  fs::create_directories(config.output_dir / "traces");
  {
    std::string refs;
    for (const auto& r : rows)
      refs += Json{{"query_id", r.query_id}, {"user_id", r.user_id}, {"reference", r.target_record.text}}.dump() +
              "\n";
    write_text(config.output_dir / "references.jsonl", refs);
  }
  spdlog::info("running {} queries ({}, T={}) with {} workers", rows.size(), config.label(), config.strategy.T,
               config.worker_limit);

  std::map<std::string, std::string> failures;
  run_pool<RunTrace>(
      rows.size(), config.worker_limit,
      [&](std::size_t i) {
        const EvalRow& row = rows[i];
        try {
          Profile profile = user_profile(graph, row.user_id, row.target_record.record_id);
          QuerySpec q{row.query_id, row.user_id, row.item_meta, row.target_rating};
          std::string query = render_query(builder, row.item_meta, row.target_rating);
          RetrievedProfile retrieved = retrieve(profile, query, config.retrieval, embedder.get(), row.query_id);
          return run_pipeline(builder, q, retrieved, config.strategy, endpoints);
        } catch (const std::exception& e) {
          RunTrace t;
          t.query_id = row.query_id;
          t.user_id = row.user_id;
          t.strategy = config.strategy;
          t.status = RunStatus::aborted;
          t.abort_reason = e.what();
          return t;
        }
      },
      [&](std::size_t, RunTrace& trace) {
        write_json(config.output_dir / "traces" / (trace.query_id + ".json"), Json(trace));
        if (trace.status == RunStatus::completed) {
          ++summary.completed;
        } else {
          ++summary.failed;
          failures[trace.query_id] = trace.abort_reason;
          spdlog::warn("{} aborted: {}", trace.query_id, trace.abort_reason);
        }
      });

  Json failed = Json::array();
  for (const auto& [qid, reason] : failures) failed.push_back({{"query_id", qid}, {"reason", reason}});
  Json manifest = {{"label", config.label()},
                   {"split", config.split_name},
                   {"queries", summary.queries},
                   {"completed", summary.completed},
                   {"failed", summary.failed},
                   {"failures", failed},
                   {"run_seed", config.run_seed},
                   {"split_seed", config.split.seed},
                   {"started_at", started},
                   {"finished_at", utc_now()},
                   {"config", config.to_json()}};
  write_json(config.output_dir / "manifest.json", manifest);
  spdlog::info("run finished: {} completed, {} failed", summary.completed, summary.failed);
  return summary;
}

RunData load_run(const fs::path& run_dir) {
  RunData d;
  if (fs::exists(run_dir / "manifest.json")) d.label = read_json_file(run_dir / "manifest.json").value("label", "");

  std::vector<fs::path> files;
  if (!fs::is_directory(run_dir / "traces")) throw ConfigError("no traces in " + run_dir.string());
  for (const auto& e : fs::directory_iterator(run_dir / "traces"))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) d.traces.push_back(read_json_file(f).get<RunTrace>());
  if (d.label.empty() && !d.traces.empty()) d.label = d.traces.front().strategy.label();

  if (fs::exists(run_dir / "references.jsonl")) {
    std::ifstream in(run_dir / "references.jsonl", std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      Json j = Json::parse(line);
      d.references[j.at("query_id").get<std::string>()] = j.at("reference").get<std::string>();
    }
  }
  if (fs::is_directory(run_dir / "evals")) {
    for (const auto& e : fs::directory_iterator(run_dir / "evals")) {
      if (e.path().extension() != ".json") continue;
      auto ev = read_json_file(e.path()).get<QueryEvaluation>();
      d.evaluations[ev.query_id] = std::move(ev);
    }
  }
  return d;
}

std::size_t cmd_evaluate(const ExperimentConfig& config, const fs::path& run_dir, TransportFactory* factory) {
  config.validate();
  TransportFactory local;
  if (!factory) factory = &local;
  RunData data = load_run(run_dir);
  std::vector<const RunTrace*> todo;
  for (const auto& t : data.traces) {
    if (t.status != RunStatus::completed) continue;
    if (!data.references.contains(t.query_id)) throw MissingReference(t.query_id);
    todo.push_back(&t);
  }

  std::optional<PromptBuilder> builder;
  std::unique_ptr<LlmClient> judge;
  if (auto it = config.endpoints.find(Role::judge); it != config.endpoints.end()) {
    EndpointConfig cfg = it->second;
    cfg.temperature = config.geval.judge_temperature;
    judge = std::make_unique<LlmClient>(cfg, factory->get(cfg));
    builder.emplace(make_builder(config));
  }

  run_pool<QueryEvaluation>(
      todo.size(), config.worker_limit,
      [&](std::size_t i) {
        const RunTrace& t = *todo[i];
        JudgeFn fn;
        if (judge)
          fn = [&](std::string_view instr, std::string_view ref, std::string_view resp, int iteration) {
            return geval_score(*builder, instr, ref, resp, *judge, config.geval, t.query_id, iteration);
          };
        return evaluate_trace(t, data.references.at(t.query_id), config.meteor, fn);
      },
      [&](std::size_t, QueryEvaluation& ev) {
        write_json(run_dir / "evals" / (ev.query_id + ".json"), Json(ev));
      });
  spdlog::info("evaluated {} traces{}", todo.size(), judge ? " with G-Eval" : " (METEOR only)");
  return todo.size();
}

ReportFiles cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, const MeteorParams& params) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  ReportFiles files{out_dir / "iterations.csv", out_dir / "budget.csv", out_dir / "summary.json"};

  std::string iterations = "strategy,iteration,queries,meteor,geval,ktokens_critic,ktokens_gen,ktokens_topics\n";
  std::string budget = "strategy,role,ktokens_per_query,geval,meteor\n";
  Json runs = Json::array();
  std::set<std::string> labels;

  for (const auto& dir : run_dirs) {
    RunData data = load_run(dir);
    if (!labels.insert(data.label).second)
      throw ConfigError(fmt::format("two runs share the label '{}'; set run_label", data.label));
    auto rows = summarize_split(data.traces, data.references, data.evaluations.empty() ? nullptr : &data.evaluations,
                                params);
    if (rows.empty()) {
      spdlog::warn("{} has no completed traces", dir.string());
      continue;
    }
    auto geval_text = [](const IterationRow& r) { return r.geval ? format_number(*r.geval) : std::string{}; };
    for (const auto& r : rows)
      iterations += fmt::format("{},{},{},{},{},{},{},{}\n", data.label, r.t, r.query_count, format_number(r.meteor),
                                geval_text(r), format_number(r.ktokens_critic), format_number(r.ktokens_generator),
                                format_number(r.ktokens_topics));
    const IterationRow& last = rows.back();
    const std::pair<const char*, double> per_role[] = {{"critic", last.ktokens_critic},
                                                       {"generator", last.ktokens_generator},
                                                       {"topic_extractor", last.ktokens_topics}};
    for (const auto& [role, k] : per_role)
      budget += fmt::format("{},{},{},{},{}\n", data.label, role, format_number(k), geval_text(last),
                            format_number(last.meteor));
    runs.push_back({{"strategy", data.label},
                    {"queries", last.query_count},
                    {"iterations", last.t},
                    {"METEOR", last.meteor},
                    {"GEval", last.geval ? Json(*last.geval) : Json(nullptr)},
                    {"# token (critic)", last.ktokens_critic},
                    {"# token (gen)", last.ktokens_generator},
                    {"# token (topics)", last.ktokens_topics},
                    {"approximate_tokens", last.approximate}});
  }
  write_text(files.iterations_csv, iterations);
  write_text(files.budget_csv, budget);
  write_json(files.summary_json, Json{{"runs", runs}});
  return files;
}

}  // namespace draftwise
