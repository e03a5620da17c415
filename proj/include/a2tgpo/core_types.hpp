#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace a2tgpo {

// Trajectory data model shared by every module. All types are immutable value
// types once constructed; the operations here are pure.

struct AnswerTokens {
  std::vector<int> tokens;

  int length() const { return static_cast<int>(tokens.size()); }
  bool operator==(const AnswerTokens&) const = default;
};

struct Query {
  std::string id;
  AnswerTokens target_answer;
  std::uint64_t env_seed = 0;

  bool operator==(const Query&) const = default;
};

struct Turn {
  int index = 0;  // 1-based
  std::vector<int> generated_tokens;
  std::vector<double> token_logprobs_old;  // nats, recorded at rollout time
  std::optional<std::vector<int>> observation;  // absent on the final turn
  bool is_final = false;

  bool operator==(const Turn&) const = default;
};

struct Rollout {
  std::string query_id;
  std::vector<Turn> turns;
  double outcome_reward = 0.0;
  std::optional<AnswerTokens> final_prediction;  // absent on format violation

  int total_turns() const { return static_cast<int>(turns.size()); }
  bool operator==(const Rollout&) const = default;
};

struct RolloutGroup {
  std::string query_id;
  std::vector<Rollout> rollouts;

  int size() const { return static_cast<int>(rollouts.size()); }
  bool operator==(const RolloutGroup&) const = default;
};

// One per-turn training signal row, as persisted in advantage dumps.
// On a final turn raw_ig and normalized_ig are exactly 0 and the advantage is
// the method's normalized outcome term.
struct TurnSignal {
  int rollout_index = 0;
  int turn_index = 0;
  double raw_ig = 0.0;
  double normalized_ig = 0.0;
  double advantage = 0.0;
  double clip_scale = 1.0;
};

// Returns every invariant violation found across the group, one human-readable
// string each ("rollout 2 turn 3: ..."). Empty on success; never throws.
std::vector<std::string> validate_rollout_group(const RolloutGroup& group);

struct ParseError : std::exception {
  std::string message;
  std::size_t byte_offset = 0;

  ParseError(std::string msg, std::size_t offset);
  const char* what() const noexcept override { return message.c_str(); }
};

// Line-delimited record serialization, one group per stream. Reals carry full
// round-trip precision, so deserialize(serialize(g)) == g field-exact.
std::string serialize_rollout_group(const RolloutGroup& group);
RolloutGroup deserialize_rollout_group(const std::string& bytes);

}  // namespace a2tgpo
