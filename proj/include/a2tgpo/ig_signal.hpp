#pragma once

#include <optional>

#include "a2tgpo/core_types.hpp"
#include "a2tgpo/toy_env.hpp"

namespace a2tgpo {

// Per-rollout raw information gain: the change in the policy's
// length-normalized probability of the target answer after each process turn.
// Values are detached constants; downstream consumers must treat them as
// frozen (no gradient flows through them).
struct IgTable {
  std::string query_id;
  double baseline_prob = 0.0;            // answer prob before any tool call
  std::vector<std::vector<double>> rows;  // rows[i][t-1], t = 1..T_i-1
  std::vector<double> final_prefix_prob;  // answer prob after the last observation

  // Defined absence for the final turn: IG exists only for t < T_i.
  std::optional<double> at(int rollout_index, int turn_index) const {
    const auto& row = rows.at(rollout_index);
    if (turn_index < 1 || turn_index > static_cast<int>(row.size())) return std::nullopt;
    return row[turn_index - 1];
  }
};

// Evaluates raw_ig[i][t] = p(a* | prefix <= t) - p(a* | prefix <= t-1) for
// every process turn, with the query-only probability as the t = 1 baseline.
// Throws std::runtime_error when a rollout's tokens do not match spec/query.
IgTable compute_ig_table(const RolloutGroup& group, PolicyParams& params, const Query& query);

std::string serialize_ig_table(const IgTable& table);
IgTable deserialize_ig_table(const std::string& bytes);

}  // namespace a2tgpo
