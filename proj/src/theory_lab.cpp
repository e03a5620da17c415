#include "a2tgpo/theory_lab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <stdexcept>
#include <thread>

#include "a2tgpo/credit.hpp"
#include "a2tgpo/rng.hpp"

namespace a2tgpo {

namespace {

constexpr double kLabStdFloor = 1e-12;  // lab data is continuous; never degenerate

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Deterministic chunk-parallel trial runner: trials are split into fixed
// chunks with per-chunk derived streams, workers pull chunks by index, and
// the per-chunk accumulators are reduced sequentially in chunk order, so the
// result is independent of the thread count.
template <typename Accum, typename Body>
std::vector<Accum> run_chunked(std::int64_t trials, std::uint64_t seed, std::string_view label,
                               int num_threads, int num_chunks, Body body) {
  std::vector<Accum> chunk_results(num_chunks);
  std::vector<std::int64_t> chunk_trials(num_chunks, trials / num_chunks);
  for (std::int64_t r = 0; r < trials % num_chunks; ++r) chunk_trials[r] += 1;

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= num_chunks) return;
      RngStream rng(derive_seed(seed, label, static_cast<std::uint64_t>(c)));
      body(rng, chunk_trials[c], chunk_results[c]);
    }
  };
  const int n_threads = std::min<int>(resolve_threads(num_threads), num_chunks);
  std::vector<std::thread> pool;
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return chunk_results;
}

struct MomentAccum {
  double sum = 0.0;
  double sumsq = 0.0;
  std::int64_t count = 0;

  void add(double x) {
    sum += x;
    sumsq += x * x;
    count += 1;
  }
};

struct MomentSummary {
  double mean = 0.0;
  double se = 0.0;
};

// Mean and standard error over per-trial values, reduced in fixed order.
MomentSummary summarize(std::span<const MomentAccum> accums) {
  double sum = 0.0, sumsq = 0.0;
  std::int64_t n = 0;
  for (const MomentAccum& a : accums) {
    sum += a.sum;
    sumsq += a.sumsq;
    n += a.count;
  }
  MomentSummary out;
  out.mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sumsq / static_cast<double>(n) - out.mean * out.mean);
  out.se = std::sqrt(var / static_cast<double>(n));
  return out;
}

}  // namespace

void HeteroIgModel::validate() const {
  if (positions.size() < 2) throw std::invalid_argument("model needs at least two positions");
  bool hetero = false;
  for (const PositionModel& p : positions) {
    if (!(p.sigma > 0.0)) throw std::invalid_argument("position sigma must be > 0");
    if (p.group_size < 1) throw std::invalid_argument("position group_size must be >= 1");
    if (p.mu != positions.front().mu) hetero = true;
  }
  if (!hetero) throw std::invalid_argument("per-position means must be heterogeneous");
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
}

std::vector<PooledBiasRow> pooled_bias_experiment(const HeteroIgModel& model, int num_threads) {
  model.validate();
  const std::size_t P = model.positions.size();

  struct ChunkAccum {
    std::vector<MomentAccum> pooled;
    std::vector<MomentAccum> tg;
  };

  const int num_chunks = 512;
  auto chunks = run_chunked<ChunkAccum>(
      model.trials, model.seed, "pooled-bias-chunk", num_threads, num_chunks,
      [&](RngStream& rng, std::int64_t n_trials, ChunkAccum& acc) {
        acc.pooled.resize(P);
        acc.tg.resize(P);
        std::size_t total = 0;
        int max_g = 0;
        for (const PositionModel& p : model.positions) {
          total += p.group_size;
          max_g = std::max(max_g, p.group_size);
        }
        std::vector<double> samples(total);
        std::vector<double> z(total);
        std::vector<double> tg_z(max_g);
        for (std::int64_t trial = 0; trial < n_trials; ++trial) {
          std::size_t off = 0;
          for (const PositionModel& p : model.positions) {
            for (int i = 0; i < p.group_size; ++i)
              samples[off + i] = p.mu + p.sigma * rng.normal();
            off += p.group_size;
          }
          // Pooled normalization over every sample of the trial.
          zscore_population(samples, kLabStdFloor, z);
          off = 0;
          for (std::size_t t = 0; t < P; ++t) {
            const int g = model.positions[t].group_size;
            double mean = 0.0;
            for (int i = 0; i < g; ++i) mean += z[off + i];
            acc.pooled[t].add(mean / g);
            // The same data under turn-group normalization.
            std::span<double> tg_out(tg_z.data(), static_cast<std::size_t>(g));
            zscore_population(std::span<const double>(samples.data() + off, g), kLabStdFloor,
                              tg_out);
            double tg_mean = 0.0;
            for (int i = 0; i < g; ++i) tg_mean += tg_z[i];
            acc.tg[t].add(tg_mean / g);
            off += g;
          }
        }
      });

  // Population-limit analytic prediction.
  double total_n = 0.0;
  for (const PositionModel& p : model.positions) total_n += p.group_size;
  double grand_mean = 0.0;
  for (const PositionModel& p : model.positions) grand_mean += p.group_size * p.mu;
  grand_mean /= total_n;
  double pooled_var = 0.0;
  for (const PositionModel& p : model.positions)
    pooled_var += p.group_size * (p.sigma * p.sigma + (p.mu - grand_mean) * (p.mu - grand_mean));
  pooled_var /= total_n;
  const double sigma_pool = std::sqrt(pooled_var);

  std::vector<PooledBiasRow> rows(P);
  for (std::size_t t = 0; t < P; ++t) {
    std::vector<MomentAccum> pooled_t, tg_t;
    for (const auto& c : chunks) {
      pooled_t.push_back(c.pooled[t]);
      tg_t.push_back(c.tg[t]);
    }
    const MomentSummary ps = summarize(pooled_t);
    const MomentSummary ts = summarize(tg_t);
    rows[t].position = static_cast<int>(t) + 1;
    rows[t].empirical = ps.mean;
    rows[t].standard_error = ps.se;
    rows[t].analytic = (model.positions[t].mu - grand_mean) / sigma_pool;
    rows[t].tg_empirical = ts.mean;
    rows[t].tg_standard_error = ts.se;
  }
  return rows;
}

TgUnbiasednessResult tg_unbiasedness_experiment(const HeteroIgModel& model) {
  model.validate();
  TgUnbiasednessResult out;
  out.trials = model.trials;
  RngStream rng(derive_seed(model.seed, "tg-unbiasedness"));
  std::vector<double> samples;
  std::vector<double> z;
  for (std::int64_t trial = 0; trial < model.trials; ++trial) {
    for (const PositionModel& p : model.positions) {
      samples.resize(p.group_size);
      for (int i = 0; i < p.group_size; ++i) samples[i] = p.mu + p.sigma * rng.normal();
      z.assign(samples.size(), 0.0);
      zscore_population(samples, kLabStdFloor, z);
      if (p.group_size == 1) {
        out.max_abs_singleton = std::max(out.max_abs_singleton, std::abs(z[0]));
        continue;
      }
      double mean = 0.0, var = 0.0;
      for (double v : z) mean += v;
      mean /= p.group_size;
      for (double v : z) var += (v - mean) * (v - mean);
      var /= p.group_size;
      out.max_abs_mean = std::max(out.max_abs_mean, std::abs(mean));
      out.max_abs_var_minus_one = std::max(out.max_abs_var_minus_one, std::abs(var - 1.0));
    }
  }
  return out;
}

void CorrelatedRowModel::validate() const {
  if (n_max < 1) throw std::invalid_argument("n_max must be >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("rho must be in [0, 1)");
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
}

std::vector<VarianceRow> variance_equalization_experiment(const CorrelatedRowModel& model,
                                                          std::span<const int> row_lengths,
                                                          int num_threads) {
  model.validate();
  for (int n : row_lengths)
    if (n < 1 || n > model.n_max) throw std::invalid_argument("row length out of range");

  struct ChunkAccum {
    std::vector<MomentAccum> rescaled;    // per row-length index: D/sqrt(n)
    std::vector<MomentAccum> unrescaled;  // D
  };

  const std::size_t R = row_lengths.size();
  const int num_chunks = 256;
  auto chunks = run_chunked<ChunkAccum>(
      model.trials, model.seed, "var-eq-chunk", num_threads, num_chunks,
      [&](RngStream& rng, std::int64_t n_trials, ChunkAccum& acc) {
        acc.rescaled.resize(R);
        acc.unrescaled.resize(R);
        const double shared_w = std::sqrt(model.rho);
        const double idio_w = std::sqrt(1.0 - model.rho);
        for (std::int64_t trial = 0; trial < n_trials; ++trial) {
          for (std::size_t r = 0; r < R; ++r) {
            const int n = row_lengths[r];
            // One-factor equicorrelated row: sigma * (sqrt(rho) Z + sqrt(1-rho) xi_k).
            const double shared = rng.normal();
            double d = 0.0;
            for (int k = 0; k < n; ++k)
              d += model.sigma * (shared_w * shared + idio_w * rng.normal());
            acc.unrescaled[r].add(d);
            acc.rescaled[r].add(d / std::sqrt(static_cast<double>(n)));
          }
        }
      });

  std::vector<VarianceRow> rows(R);
  const double s2 = model.sigma * model.sigma;
  for (std::size_t r = 0; r < R; ++r) {
    const int n = row_lengths[r];
    // Variance of the per-trial values plus the SE of a variance estimate
    // from T samples: Var(s^2) ~ (m4 - var^2) / T.
    double sum = 0.0, sumsq = 0.0;
    std::int64_t count = 0;
    for (const auto& c : chunks) {
      sum += c.rescaled[r].sum;
      sumsq += c.rescaled[r].sumsq;
      count += c.rescaled[r].count;
    }
    const double mean_r = sum / count;
    const double var_r = sumsq / count - mean_r * mean_r;
    double sum_u = 0.0, sumsq_u = 0.0;
    for (const auto& c : chunks) {
      sum_u += c.unrescaled[r].sum;
      sumsq_u += c.unrescaled[r].sumsq;
    }
    const double mean_u = sum_u / count;
    const double var_u = sumsq_u / count - mean_u * mean_u;

    rows[r].n = n;
    rows[r].empirical_rescaled = var_r;
    rows[r].analytic_rescaled = s2 + (n - 1) * model.rho * s2;
    // Gaussian D: Var(sample var) = 2 var^2 / T.
    rows[r].se_rescaled = var_r * std::sqrt(2.0 / static_cast<double>(count));
    rows[r].empirical_unrescaled = var_u;
    rows[r].analytic_unrescaled = n * s2 + n * (n - 1) * model.rho * s2;
    rows[r].se_unrescaled = var_u * std::sqrt(2.0 / static_cast<double>(count));
  }
  return rows;
}

namespace {

double jaccard(const std::set<int>& a, const std::set<int>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (int v : a) inter += b.count(v);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

JaccardResult jaccard_position_similarity(std::span<const RolloutGroup> groups) {
  JaccardResult out;
  std::size_t max_t = 0;

  struct TurnContent {
    int t;
    std::set<int> tokens;
  };
  double intra_sum = 0.0, cross_sum = 0.0;
  std::vector<double> pos_sum;
  std::vector<std::int64_t> pos_count;

  for (const RolloutGroup& group : groups) {
    std::vector<std::vector<TurnContent>> contents;  // per rollout
    for (const Rollout& r : group.rollouts) {
      std::vector<TurnContent> row;
      for (const Turn& turn : r.turns) {
        TurnContent tc;
        tc.t = turn.index;
        tc.tokens.insert(turn.generated_tokens.begin(), turn.generated_tokens.end());
        if (turn.observation.has_value())
          tc.tokens.insert(turn.observation->begin(), turn.observation->end());
        max_t = std::max(max_t, static_cast<std::size_t>(turn.index));
        row.push_back(std::move(tc));
      }
      contents.push_back(std::move(row));
    }
    pos_sum.resize(max_t, 0.0);
    pos_count.resize(max_t, 0);

    // Intra-position: distinct rollouts at the same turn index.
    for (std::size_t i = 0; i < contents.size(); ++i) {
      for (std::size_t j = i + 1; j < contents.size(); ++j) {
        const std::size_t shared = std::min(contents[i].size(), contents[j].size());
        for (std::size_t t = 0; t < shared; ++t) {
          const double v = jaccard(contents[i][t].tokens, contents[j][t].tokens);
          intra_sum += v;
          out.intra_pairs += 1;
          pos_sum[t] += v;
          pos_count[t] += 1;
        }
      }
    }
    // Cross-position: any rollout pair (including the same rollout) at
    // different turn indices.
    for (std::size_t i = 0; i < contents.size(); ++i) {
      for (std::size_t j = i; j < contents.size(); ++j) {
        for (std::size_t a = 0; a < contents[i].size(); ++a) {
          for (std::size_t b = (i == j ? a + 1 : 0); b < contents[j].size(); ++b) {
            if (contents[i][a].t == contents[j][b].t) continue;
            cross_sum += jaccard(contents[i][a].tokens, contents[j][b].tokens);
            out.cross_pairs += 1;
          }
        }
      }
    }
  }

  out.per_position_intra.assign(max_t, -1.0);
  for (std::size_t t = 0; t < max_t; ++t)
    if (pos_count[t] > 0) out.per_position_intra[t] = pos_sum[t] / pos_count[t];
  if (out.intra_pairs > 0) out.intra_mean = intra_sum / static_cast<double>(out.intra_pairs);
  if (out.cross_pairs > 0) out.cross_mean = cross_sum / static_cast<double>(out.cross_pairs);
  return out;
}

}  // namespace a2tgpo
