#pragma once

#include <span>
#include <string>
#include <vector>

#include "a2tgpo/core_types.hpp"
#include "a2tgpo/ig_signal.hpp"

namespace a2tgpo {

enum class CreditMethod { A2TGPO, IGPO_POOLED, GRPO };

std::string to_string(CreditMethod m);
CreditMethod credit_method_from_string(const std::string& s);

struct CreditConfig {
  double gamma = 1.0;
  CreditMethod method = CreditMethod::A2TGPO;
  double std_floor = 1e-8;
  bool rescale = true;  // divide cumulative credit by sqrt(n); ablation knob

  void validate() const;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (1/N)
};

MeanStd population_moments(std::span<const double> xs);

// Population z-scores with the degenerate fallback: all zeros when the set
// has fewer than two members or its std is below std_floor. Both the
// turn-group and the pooled normalizations run through this code path.
void zscore_population(std::span<const double> xs, double std_floor, std::span<double> out);
std::vector<double> zscore_population(std::span<const double> xs, double std_floor);

// Per-turn credit for one (rollout, turn). Final turns carry zero IG fields
// and the method's normalized outcome as the advantage.
struct TurnCredit {
  int turn_index = 0;
  double raw_ig = 0.0;
  double normalized_ig = 0.0;
  double cumulative = 0.0;  // D_{i,t}: discounted backward sum of normalized IG
  int n_terms = 0;          // T_i - t for process turns, 0 on the final turn
  double advantage = 0.0;
  double clip_scale = 1.0;  // annotated by the optimizer stage
  bool is_final = false;
};

struct AdvantageBatch {
  std::string query_id;
  CreditMethod method = CreditMethod::A2TGPO;
  double gamma = 1.0;
  bool rescaled = true;
  std::vector<double> outcome_norm;             // R^_i per rollout
  std::vector<std::vector<TurnCredit>> rollouts;  // [i][t-1], includes the final turn
};

// Turn-group z-normalization: for each turn index t, the group is the raw IG
// at t across rollouts that have a process turn t. Groups of size <= 1 or
// with std below the floor normalize to exactly 0.
std::vector<std::vector<double>> normalize_turn_groups(const IgTable& ig_table,
                                                       const RolloutGroup& group,
                                                       double std_floor);

// Backward discounted accumulation over one rollout's normalized IG row:
// D_t = ig^_t + gamma * D_{t+1}, n_t = T - t. Single backward sweep.
struct AccumulatedRow {
  std::vector<double> cumulative;
  std::vector<int> n_terms;
};
AccumulatedRow accumulate_rescaled(std::span<const double> normalized_row, double gamma);

// GRPO-style per-prompt outcome normalization (population z over the group's
// outcome rewards; all zeros when the rewards are degenerate).
std::vector<double> normalize_outcome(const RolloutGroup& group, double std_floor);

// Full advantage assembly for the configured method.
AdvantageBatch assemble_advantages(const RolloutGroup& group, const IgTable& ig_table,
                                   const CreditConfig& cfg);

// Batch-level diagnostics over one or more prompts' advantage batches:
// per-turn-position summaries plus whole-batch extrema.
struct PositionStats {
  int turn_index = 0;
  int count = 0;
  double adv_mean = 0.0;
  double adv_min = 0.0;
  double adv_max = 0.0;
  int ig_count = 0;       // process turns only
  double ig_mean = 0.0;   // mean normalized IG
};
struct DistributionStats {
  std::vector<PositionStats> per_position;
  double adv_min = 0.0;
  double adv_max = 0.0;
  double adv_mean = 0.0;
  double max_abs_process_adv = 0.0;
  int total_turns = 0;
};
DistributionStats advantage_distribution_stats(std::span<const AdvantageBatch> batches);

// Line-delimited dump of an advantage batch (golden-test format).
std::string serialize_advantage_batch(const AdvantageBatch& batch);

}  // namespace a2tgpo
