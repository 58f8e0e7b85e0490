#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "draftwise/errors.hpp"
#include "draftwise/runner.hpp"

namespace fs = std::filesystem;
using namespace draftwise;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string log_level = "info";
};

void add_override(Options& o, const std::string& key, const std::string& value) {
  if (!value.empty()) o.overrides.push_back(key + "=" + value);
}

// Flag paths are relative to the working directory, not the config file.
void add_path_override(Options& o, const std::string& key, const std::string& value) {
  if (!value.empty()) o.overrides.push_back(key + "=" + fs::absolute(value).string());
}

ExperimentConfig load(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  return ExperimentConfig::load(o.config, o.overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized review generation with critic-driven refinement"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("-c,--config", opt.config, "Experiment config (JSON)");
  app.add_option("--set", opt.overrides, "Config override, dotted.key=value (repeatable)");
  app.add_option("--log-level", opt.log_level, "trace, debug, info, warn, error or off");

  std::string records, meta, corpus;
  auto* ingest = app.add_subcommand("ingest", "Validate and normalize raw JSONL records and metadata");
  ingest->add_option("--records", records, "Review records (JSONL)");
  ingest->add_option("--meta", meta, "Item metadata (JSONL)");
  ingest->add_option("--out", corpus, "Corpus output directory");

  std::string split_seed, split_size, split_dir;
  auto* split = app.add_subcommand("split", "Build seeded dev/test evaluation splits");
  split->add_option("--seed", split_seed, "Split seed");
  split->add_option("--size", split_size, "Users per split");
  split->add_option("--out", split_dir, "Split output directory");

  std::string workers, run_out, variant, iterations, samples, max_queries, which;
  auto* run = app.add_subcommand("run", "Run the refinement pipeline over a split");
  run->add_option("--workers", workers, "Queries in flight");
  run->add_option("--out", run_out, "Run directory");
  run->add_option("--strategy", variant, "vanilla, knockout, knockout_best_of_n or topic_extraction");
  run->add_option("--T", iterations, "Refinement iterations");
  run->add_option("--n", samples, "Best-of-N samples");
  run->add_option("--max-queries", max_queries, "Only the first rows of the split");
  run->add_option("--split", which, "dev or test");

  std::string eval_run;
  auto* evaluate = app.add_subcommand("evaluate", "Score every draft of a run (METEOR, G-Eval)");
  evaluate->add_option("--run", eval_run, "Run directory")->required();

  std::vector<std::string> report_runs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Write iteration, budget and summary tables");
  report->add_option("--run", report_runs, "Run directory (repeatable)")->required();
  report->add_option("--out", report_out, "Report directory")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(opt.log_level));

  try {
    if (*ingest) {
      add_path_override(opt, "dataset.records", records);
      add_path_override(opt, "dataset.meta", meta);
      add_path_override(opt, "dataset.corpus_dir", corpus);
      cmd_ingest(load(opt));
    } else if (*split) {
      add_override(opt, "split.seed", split_seed);
      add_override(opt, "split.split_size", split_size);
      add_path_override(opt, "split.dir", split_dir);
      cmd_split(load(opt));
    } else if (*run) {
      add_override(opt, "worker_limit", workers);
      add_path_override(opt, "output_dir", run_out);
      add_override(opt, "strategy.variant", variant);
      add_override(opt, "strategy.T", iterations);
      add_override(opt, "strategy.n", samples);
      add_override(opt, "split.max_queries", max_queries);
      add_override(opt, "split.use", which);
      RunSummary s = cmd_run(load(opt));
      std::printf("%zu queries: %zu completed, %zu failed -> %s\n", s.queries, s.completed, s.failed,
                  s.run_dir.string().c_str());
    } else if (*evaluate) {
      cmd_evaluate(load(opt), eval_run);
    } else if (*report) {
      MeteorParams params;
      if (!opt.config.empty()) params = load(opt).meteor;
      std::vector<fs::path> dirs(report_runs.begin(), report_runs.end());
      ReportFiles f = cmd_report(dirs, report_out, params);
      std::printf("%s\n%s\n%s\n", f.iterations_csv.string().c_str(), f.budget_csv.string().c_str(),
                  f.summary_json.string().c_str());
    }
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
