#pragma once

#include <iosfwd>
#include <string>

#include "a2tgpo/config.hpp"
#include "a2tgpo/metrics.hpp"
#include "a2tgpo/optimizer.hpp"
#include "a2tgpo/theory_lab.hpp"

namespace a2tgpo {

// Orchestration entry points behind the CLI subcommands. Every run writes
// deterministic artifacts (metrics logs, checkpoints, dumps) into output_dir;
// timing and progress go to the `progress` stream only.

struct RunPaths {
  std::string metrics;
  std::string checkpoint;
  std::string effective_config;
};

// `train`: one method end to end. Returns the written paths.
RunPaths run_train(const ExperimentConfig& cfg, const std::string& method_name,
                   std::ostream* progress);

// `compare`: every configured method under identical seeds, plus a joint
// summary (per-method final-window EM) at <output_dir>/summary.json.
std::string run_compare(const ExperimentConfig& cfg, std::ostream* progress);

// `verify-theory`: the three lab experiments at the configured scale. Writes
// <output_dir>/theory.jsonl, prints a table, returns false on any failed
// 3-SE comparison.
bool run_verify_theory(const ExperimentConfig& cfg, std::ostream& table_out);

// `replay`: recompute the IG-independent stages from a stored rollout group
// and IG dump; writes the advantage dump and returns its path.
std::string run_replay(const std::string& group_file, const std::string& ig_file,
                       const std::string& method_name, const ExperimentConfig& cfg);

// `diag-similarity`: rollout-content Jaccard diagnostic under a fresh or
// checkpointed policy.
JaccardResult run_diag_similarity(const ExperimentConfig& cfg, const std::string& checkpoint,
                                  int num_prompts, std::ostream& out);

// `plot-data`: reshape a metrics log into a long-form CSV (step,method,
// metric,value).
std::string metrics_to_long_csv(const std::string& metrics_text);

// Final-window EM mean over the last `window` records (or fewer).
double final_window_em(const std::vector<MetricsRecord>& metrics, int window);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace a2tgpo
