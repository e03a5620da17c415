#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "a2tgpo/core_types.hpp"

namespace a2tgpo {

// Monte Carlo verification of the estimator-level claims behind the credit
// pipeline: positional bias of pooled normalization, unbiasedness of
// turn-group normalization, and variance equalization under sqrt(n)
// rescaling. Both normalizers are the production code paths from credit.

struct PositionModel {
  double mu = 0.0;
  double sigma = 1.0;
  int group_size = 2;  // G_t
};

struct HeteroIgModel {
  std::vector<PositionModel> positions;
  std::int64_t trials = 100000;
  std::uint64_t seed = 1;

  void validate() const;  // needs >= 2 positions with differing means
};

struct CorrelatedRowModel {
  int n_max = 16;
  double sigma = 1.0;
  double rho = 0.0;  // pairwise correlation, [0, 1)
  std::int64_t trials = 100000;
  std::uint64_t seed = 1;

  void validate() const;
};

// Per-position result of the pooled-bias experiment. The empirical column is
// the Monte Carlo mean of the pooled z-score at that position; the analytic
// column is the population-limit prediction (mu_t - mu_bar) / sigma_pool.
// tg_* columns report the same sampled data pushed through the turn-group
// normalizer, whose prediction is exactly 0.
struct PooledBiasRow {
  int position = 0;
  double empirical = 0.0;
  double standard_error = 0.0;
  double analytic = 0.0;
  double tg_empirical = 0.0;
  double tg_standard_error = 0.0;
};
std::vector<PooledBiasRow> pooled_bias_experiment(const HeteroIgModel& model, int num_threads = 0);

// Per-trial exact identities of the turn-group normalizer: sample mean 0 and
// population variance 1 for every position with G_t >= 2, exact zeros for
// singleton positions. max_* report the worst deviation seen over all trials.
struct TgUnbiasednessResult {
  double max_abs_mean = 0.0;
  double max_abs_var_minus_one = 0.0;
  double max_abs_singleton = 0.0;
  std::int64_t trials = 0;
};
TgUnbiasednessResult tg_unbiasedness_experiment(const HeteroIgModel& model);

// Variance of the backward-cumulative sum of equicorrelated rows, rescaled
// and unrescaled, against the closed forms sigma^2 + (n-1) rho sigma^2 and
// n sigma^2 + n (n-1) rho sigma^2 (gamma = 1 setting).
struct VarianceRow {
  int n = 0;
  double empirical_rescaled = 0.0;
  double analytic_rescaled = 0.0;
  double se_rescaled = 0.0;
  double empirical_unrescaled = 0.0;
  double analytic_unrescaled = 0.0;
  double se_unrescaled = 0.0;
};
std::vector<VarianceRow> variance_equalization_experiment(const CorrelatedRowModel& model,
                                                          std::span<const int> row_lengths,
                                                          int num_threads = 0);

// Pairwise Jaccard similarity of per-turn content (token set of y_t plus
// o_t): intra-position pairs share prompt and turn index, cross-position
// pairs share the prompt but differ in turn index.
struct JaccardResult {
  std::vector<double> per_position_intra;  // mean at each turn index (NaN-free: -1 when empty)
  double intra_mean = 0.0;
  double cross_mean = 0.0;
  std::int64_t intra_pairs = 0;
  std::int64_t cross_pairs = 0;
};
JaccardResult jaccard_position_similarity(std::span<const RolloutGroup> groups);

}  // namespace a2tgpo
