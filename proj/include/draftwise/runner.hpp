#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "draftwise/dataset.hpp"
#include "draftwise/llm_client.hpp"
#include "draftwise/metrics.hpp"
#include "draftwise/refine_loop.hpp"
#include "draftwise/retrieval.hpp"

namespace draftwise {

struct ExperimentConfig {
  DatasetKind dataset_kind = DatasetKind::yelp;
  /// Raw inputs for `ingest`.
  std::filesystem::path records_path;
  std::filesystem::path meta_path;
  EnglishFilter english_filter = EnglishFilter::off;
  double english_threshold = 0.9;
  /// Normalized corpus written by `ingest`, read by `split` and `run`.
  std::filesystem::path corpus_dir;
  /// Records whose item lacks metadata are rejected (true) or get a placeholder.
  bool strict_graph = true;

  SplitSpec split;
  /// dev.jsonl, test.jsonl and split_manifest.json.
  std::filesystem::path split_dir;
  /// Which split `run` executes: "dev" or "test".
  std::string split_name = "dev";
  /// Run only the first rows of the split.
  std::optional<std::size_t> max_queries;

  RetrievalConfig retrieval;
  Strategy strategy;
  std::map<Role, EndpointConfig> endpoints;
  MeteorParams meteor;
  GEvalConfig geval;

  int worker_limit = 4;
  std::filesystem::path output_dir;
  std::uint64_t run_seed = 0;
  /// Name of the run in reports; the strategy variant when empty.
  std::string run_label;
  /// Template root; TemplateStore::default_root() when empty.
  std::filesystem::path template_root;

  /// Relative paths (and mock script paths) resolve against `base_dir`.
  static ExperimentConfig from_json(const Json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
  Json to_json() const;

  /// Checks the parts every command needs; `run` additionally requires the
  /// generator and critic endpoints.
  void validate() const;
  void validate_for_run() const;
  std::string label() const { return run_label.empty() ? strategy.label() : run_label; }
};

/// Applies "dotted.key=value" overrides to a config document. The value is
/// parsed as JSON when it parses, and taken as a string otherwise.
void apply_override(Json& config, const std::string& assignment);

/// Creates transports by endpoint URL. Mock backends are shared per script
/// path so every role using one script draws from the same queue.
class TransportFactory {
 public:
  std::shared_ptr<Transport> get(const EndpointConfig& config);

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Transport>> mocks_;
};

/// Writes records.jsonl, items.jsonl and ingest_report.json to corpus_dir.
IngestReport cmd_ingest(const ExperimentConfig& config);

/// Writes dev.jsonl, test.jsonl and split_manifest.json to split_dir.
Splits cmd_split(const ExperimentConfig& config);

struct RunSummary {
  std::filesystem::path run_dir;
  std::size_t queries = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
};

/// Runs the pipeline for each row of the configured split with up to
/// worker_limit queries in flight. Writes traces/<query_id>.json,
/// references.jsonl and manifest.json under output_dir. A failing query is
/// recorded as an aborted trace and the run continues.
RunSummary cmd_run(const ExperimentConfig& config, TransportFactory* factory = nullptr);

/// Computes METEOR for every draft of every trace of a run, plus G-Eval when a
/// judge endpoint is configured. Writes evals/<query_id>.json.
std::size_t cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& run_dir,
                         TransportFactory* factory = nullptr);

struct RunData {
  std::string label;
  std::vector<RunTrace> traces;
  std::map<std::string, std::string> references;
  std::map<std::string, QueryEvaluation> evaluations;
};

/// Traces, references and (when present) evaluations of a run directory.
RunData load_run(const std::filesystem::path& run_dir);

struct ReportFiles {
  std::filesystem::path iterations_csv;
  std::filesystem::path budget_csv;
  std::filesystem::path summary_json;
};

/// iterations.csv (per run and t), budget.csv (per run and role, at the final
/// iteration) and summary.json (per run: METEOR, GEval and token columns).
/// Recomputed from the run directories alone; repeated calls give identical
/// files.
ReportFiles cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir,
                       const MeteorParams& params = {});

}  // namespace draftwise
