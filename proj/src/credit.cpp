#include "a2tgpo/credit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace a2tgpo {

using json = nlohmann::json;

std::string to_string(CreditMethod m) {
  switch (m) {
    case CreditMethod::A2TGPO: return "A2TGPO";
    case CreditMethod::IGPO_POOLED: return "IGPO_POOLED";
    case CreditMethod::GRPO: return "GRPO";
  }
  throw std::logic_error("unknown credit method");
}

CreditMethod credit_method_from_string(const std::string& s) {
  if (s == "A2TGPO") return CreditMethod::A2TGPO;
  if (s == "IGPO_POOLED") return CreditMethod::IGPO_POOLED;
  if (s == "GRPO") return CreditMethod::GRPO;
  throw std::invalid_argument("unknown credit method: " + s);
}

void CreditConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("credit.gamma must be in (0, 1]");
  if (!(std_floor > 0.0)) throw std::invalid_argument("credit.std_floor must be > 0");
}

namespace {

// Four-lane accumulation; fixed order, so results are run-stable.
template <typename F>
double unrolled_sum(std::span<const double> xs, F term) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= xs.size(); i += 4) {
    a0 += term(xs[i]);
    a1 += term(xs[i + 1]);
    a2 += term(xs[i + 2]);
    a3 += term(xs[i + 3]);
  }
  for (; i < xs.size(); ++i) a0 += term(xs[i]);
  return (a0 + a1) + (a2 + a3);
}

}  // namespace

MeanStd population_moments(std::span<const double> xs) {
  MeanStd out;
  if (xs.empty()) return out;
  out.mean = unrolled_sum(xs, [](double x) { return x; }) / static_cast<double>(xs.size());
  const double m = out.mean;
  const double sq = unrolled_sum(xs, [m](double x) {
    const double d = x - m;
    return d * d;
  });
  out.std = std::sqrt(sq / static_cast<double>(xs.size()));
  return out;
}

void zscore_population(std::span<const double> xs, double std_floor, std::span<double> out) {
  if (out.size() != xs.size()) throw std::invalid_argument("zscore: output size mismatch");
  if (xs.size() <= 1) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  const MeanStd ms = population_moments(xs);
  if (ms.std < std_floor) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  const double inv_std = 1.0 / ms.std;
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - ms.mean) * inv_std;
}

std::vector<double> zscore_population(std::span<const double> xs, double std_floor) {
  std::vector<double> out(xs.size());
  zscore_population(xs, std_floor, out);
  return out;
}

std::vector<std::vector<double>> normalize_turn_groups(const IgTable& ig_table,
                                                       const RolloutGroup& group,
                                                       double std_floor) {
  if (ig_table.rows.size() != group.rollouts.size())
    throw std::invalid_argument("ig table not aligned with group");
  const std::size_t n = ig_table.rows.size();
  std::vector<std::vector<double>> normalized(n);
  std::size_t max_len = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t expected = group.rollouts[i].turns.size() - 1;
    if (ig_table.rows[i].size() != expected)
      throw std::invalid_argument("ig row length does not match rollout process turns");
    normalized[i].resize(ig_table.rows[i].size(), 0.0);
    max_len = std::max(max_len, ig_table.rows[i].size());
  }

  std::vector<double> members;
  std::vector<std::size_t> member_of;
  std::vector<double> z;
  for (std::size_t t = 0; t < max_len; ++t) {
    members.clear();
    member_of.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (t < ig_table.rows[i].size()) {
        members.push_back(ig_table.rows[i][t]);
        member_of.push_back(i);
      }
    }
    z.assign(members.size(), 0.0);
    zscore_population(members, std_floor, z);
    for (std::size_t k = 0; k < member_of.size(); ++k) normalized[member_of[k]][t] = z[k];
  }
  return normalized;
}

AccumulatedRow accumulate_rescaled(std::span<const double> normalized_row, double gamma) {
  AccumulatedRow out;
  const std::size_t n = normalized_row.size();
  out.cumulative.resize(n, 0.0);
  out.n_terms.resize(n, 0);
  double carry = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    carry = normalized_row[k] + gamma * carry;
    out.cumulative[k] = carry;
    out.n_terms[k] = static_cast<int>(n - k);
  }
  return out;
}

std::vector<double> normalize_outcome(const RolloutGroup& group, double std_floor) {
  std::vector<double> rewards;
  rewards.reserve(group.rollouts.size());
  for (const Rollout& r : group.rollouts) rewards.push_back(r.outcome_reward);
  return zscore_population(rewards, std_floor);
}

namespace {

AdvantageBatch assemble_a2tgpo(const RolloutGroup& group, const IgTable& ig_table,
                               const CreditConfig& cfg) {
  AdvantageBatch batch;
  batch.outcome_norm = normalize_outcome(group, cfg.std_floor);
  const auto normalized = normalize_turn_groups(ig_table, group, cfg.std_floor);
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const int T = group.rollouts[i].total_turns();
    const AccumulatedRow acc = accumulate_rescaled(normalized[i], cfg.gamma);
    std::vector<TurnCredit> row(T);
    for (int t = 1; t < T; ++t) {
      TurnCredit& tc = row[t - 1];
      tc.turn_index = t;
      tc.raw_ig = ig_table.rows[i][t - 1];
      tc.normalized_ig = normalized[i][t - 1];
      tc.cumulative = acc.cumulative[t - 1];
      tc.n_terms = acc.n_terms[t - 1];
      const double process =
          cfg.rescale ? tc.cumulative / std::sqrt(static_cast<double>(tc.n_terms))
                      : tc.cumulative;
      tc.advantage = process + batch.outcome_norm[i];
    }
    TurnCredit& last = row[T - 1];
    last.turn_index = T;
    last.is_final = true;
    last.advantage = batch.outcome_norm[i];
    batch.rollouts.push_back(std::move(row));
  }
  return batch;
}

AdvantageBatch assemble_igpo_pooled(const RolloutGroup& group, const IgTable& ig_table,
                                    const CreditConfig& cfg) {
  AdvantageBatch batch;
  batch.outcome_norm = normalize_outcome(group, cfg.std_floor);

  // Reward vector r_{i,t}: per-turn IG for process turns, the raw outcome
  // reward on the final turn. All entries of the prompt are pooled and
  // z-normalized jointly (fixed iteration order: rollout, then turn).
  std::vector<double> pooled;
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    for (double ig : ig_table.rows[i]) pooled.push_back(ig);
    pooled.push_back(group.rollouts[i].outcome_reward);
  }
  const std::vector<double> z = zscore_population(pooled, cfg.std_floor);

  std::size_t cursor = 0;
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const int T = group.rollouts[i].total_turns();
    std::vector<double> zrow(z.begin() + cursor, z.begin() + cursor + T);
    cursor += T;
    // Discounted accumulation runs through the final (outcome) entry.
    std::vector<double> adv(T, 0.0);
    double carry = 0.0;
    for (int t = T; t-- > 0;) {
      carry = zrow[t] + cfg.gamma * carry;
      adv[t] = carry;
    }
    std::vector<TurnCredit> row(T);
    for (int t = 1; t <= T; ++t) {
      TurnCredit& tc = row[t - 1];
      tc.turn_index = t;
      tc.is_final = (t == T);
      if (!tc.is_final) {
        tc.raw_ig = ig_table.rows[i][t - 1];
        tc.normalized_ig = zrow[t - 1];
        tc.n_terms = T - t;
      }
      tc.cumulative = adv[t - 1];
      tc.advantage = adv[t - 1];
    }
    batch.rollouts.push_back(std::move(row));
  }
  return batch;
}

AdvantageBatch assemble_grpo(const RolloutGroup& group, const CreditConfig& cfg) {
  AdvantageBatch batch;
  batch.outcome_norm = normalize_outcome(group, cfg.std_floor);
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const int T = group.rollouts[i].total_turns();
    std::vector<TurnCredit> row(T);
    for (int t = 1; t <= T; ++t) {
      TurnCredit& tc = row[t - 1];
      tc.turn_index = t;
      tc.is_final = (t == T);
      if (!tc.is_final) tc.n_terms = T - t;
      tc.advantage = batch.outcome_norm[i];
    }
    batch.rollouts.push_back(std::move(row));
  }
  return batch;
}

}  // namespace

AdvantageBatch assemble_advantages(const RolloutGroup& group, const IgTable& ig_table,
                                   const CreditConfig& cfg) {
  cfg.validate();
  AdvantageBatch batch;
  switch (cfg.method) {
    case CreditMethod::A2TGPO:
      batch = assemble_a2tgpo(group, ig_table, cfg);
      break;
    case CreditMethod::IGPO_POOLED:
      batch = assemble_igpo_pooled(group, ig_table, cfg);
      break;
    case CreditMethod::GRPO:
      batch = assemble_grpo(group, cfg);
      break;
  }
  batch.query_id = group.query_id;
  batch.method = cfg.method;
  batch.gamma = cfg.gamma;
  batch.rescaled = cfg.rescale;
  return batch;
}

DistributionStats advantage_distribution_stats(std::span<const AdvantageBatch> batches) {
  DistributionStats out;
  out.adv_min = std::numeric_limits<double>::infinity();
  out.adv_max = -std::numeric_limits<double>::infinity();
  double adv_sum = 0.0;

  std::size_t max_t = 0;
  for (const AdvantageBatch& b : batches)
    for (const auto& row : b.rollouts) max_t = std::max(max_t, row.size());
  out.per_position.resize(max_t);
  for (std::size_t t = 0; t < max_t; ++t) {
    out.per_position[t].turn_index = static_cast<int>(t) + 1;
    out.per_position[t].adv_min = std::numeric_limits<double>::infinity();
    out.per_position[t].adv_max = -std::numeric_limits<double>::infinity();
  }

  for (const AdvantageBatch& b : batches) {
    for (const auto& row : b.rollouts) {
      for (const TurnCredit& tc : row) {
        PositionStats& ps = out.per_position[tc.turn_index - 1];
        ps.count += 1;
        ps.adv_mean += tc.advantage;
        ps.adv_min = std::min(ps.adv_min, tc.advantage);
        ps.adv_max = std::max(ps.adv_max, tc.advantage);
        if (!tc.is_final) {
          ps.ig_count += 1;
          ps.ig_mean += tc.normalized_ig;
          out.max_abs_process_adv = std::max(out.max_abs_process_adv, std::abs(tc.advantage));
        }
        out.total_turns += 1;
        adv_sum += tc.advantage;
        out.adv_min = std::min(out.adv_min, tc.advantage);
        out.adv_max = std::max(out.adv_max, tc.advantage);
      }
    }
  }
  for (PositionStats& ps : out.per_position) {
    if (ps.count > 0) ps.adv_mean /= ps.count;
    if (ps.ig_count > 0) ps.ig_mean /= ps.ig_count;
  }
  if (out.total_turns > 0) out.adv_mean = adv_sum / out.total_turns;
  if (out.total_turns == 0) {
    out.adv_min = 0.0;
    out.adv_max = 0.0;
  }
  return out;
}

std::string serialize_advantage_batch(const AdvantageBatch& batch) {
  std::ostringstream out;
  json header;
  header["record"] = "advantage_header";
  header["query_id"] = batch.query_id;
  header["method"] = to_string(batch.method);
  header["gamma"] = batch.gamma;
  header["rescaled"] = batch.rescaled;
  header["G"] = batch.rollouts.size();
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < batch.rollouts.size(); ++i) {
    json jr;
    jr["record"] = "outcome";
    jr["i"] = i;
    jr["outcome_norm"] = batch.outcome_norm[i];
    out << jr.dump() << '\n';
    for (const TurnCredit& tc : batch.rollouts[i]) {
      json jt;
      jt["record"] = "turn_signal";
      jt["i"] = i;
      jt["t"] = tc.turn_index;
      jt["raw_ig"] = tc.raw_ig;
      jt["normalized_ig"] = tc.normalized_ig;
      jt["cumulative"] = tc.cumulative;
      jt["n"] = tc.n_terms;
      jt["advantage"] = tc.advantage;
      jt["clip_scale"] = tc.clip_scale;
      jt["is_final"] = tc.is_final;
      out << jt.dump() << '\n';
    }
  }
  return out.str();
}

}  // namespace a2tgpo
