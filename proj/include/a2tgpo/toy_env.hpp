#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "a2tgpo/core_types.hpp"
#include "a2tgpo/reward.hpp"
#include "a2tgpo/rng.hpp"

namespace a2tgpo {

// Synthetic multi-turn evidence-gathering environment. A task hides K facts;
// querying a fact either reveals truthful evidence (raising the answer head's
// belief in the target answer) or, with probability noise_prob, a misleading
// observation that lowers it. The policy is an exactly-differentiable tabular
// softmax over action and answer-token heads.
struct EnvSpec {
  int num_facts = 6;        // K
  int answer_length = 3;    // L
  int vocab_size = 16;      // V, answer-token vocabulary
  int max_turns = 6;        // T_max, counts the final answer turn
  double noise_prob = 0.25;
  std::uint64_t seed = 1;
  double evidence_boost = 0.75;
  FormatSchema schema;  // zero-initialized => use default_schema() layout

  // Token layout above the answer vocabulary [0, V):
  //   V + k           query action for fact k (0-based), k in [0, K)
  //   V + K           ANSWER action
  //   V + K + 1 .. +6 schema markers (default_schema)
  //   V + K + 7 + k   observation marker for fact k
  int query_action_token(int fact) const { return vocab_size + fact; }
  int answer_action_token() const { return vocab_size + num_facts; }
  FormatSchema default_schema() const;
  int observation_marker(int fact) const { return vocab_size + num_facts + 7 + fact; }
  int total_tokens() const { return vocab_size + num_facts + 7 + num_facts; }

  // schema when configured, default_schema() otherwise.
  FormatSchema effective_schema() const;
  std::uint64_t content_hash() const;  // checkpoint compatibility stamp

  // Throws std::invalid_argument on any violated field invariant.
  void validate() const;
};

// Which facts have been observed so far. Disjoint masks; turn_count counts
// completed environment interactions.
struct EvidenceState {
  std::uint32_t evidence_mask = 0;
  std::uint32_t misled_mask = 0;
  int turn_count = 0;

  bool operator==(const EvidenceState&) const = default;
};

struct ActionKey {
  int turn_index = 1;  // 1-based position of the decision
  std::uint32_t evidence_mask = 0;

  auto operator<=>(const ActionKey&) const = default;
};

struct AnswerKey {
  std::string query_id;
  std::uint32_t evidence_mask = 0;
  std::uint32_t misled_mask = 0;

  auto operator<=>(const AnswerKey&) const = default;
};

// Snapshot of the parameter table layout: a deterministic flat ordering
// (action rows in key order, then answer rows in key order). Valid until new
// rows are materialized.
struct ParamLayout {
  std::vector<std::pair<ActionKey, std::size_t>> action_offsets;
  std::vector<std::pair<AnswerKey, std::size_t>> answer_offsets;
  std::size_t total = 0;
  int action_row_size = 0;
  int answer_row_size = 0;
};

// Tabular softmax policy. Rows materialize lazily: action rows start at zero
// logits (uniform); answer rows start at the evidence-boost construction
//   logits = boost * (|evidence| - |misled|) on the target tokens, 0 elsewhere
// keyed by (query, evidence_mask, misled_mask). Rows are ordinary learnable
// parameters after initialization.
class PolicyParams {
 public:
  explicit PolicyParams(const EnvSpec& spec) : spec_(spec) {}

  const EnvSpec& spec() const { return spec_; }

  // Lazy row access (materializes on first touch).
  std::vector<double>& action_row(const ActionKey& key);
  std::vector<double>& answer_row(const AnswerKey& key, const Query& query);

  bool has_action_row(const ActionKey& key) const { return action_rows_.count(key) > 0; }
  bool has_answer_row(const AnswerKey& key) const { return answer_rows_.count(key) > 0; }

  std::size_t action_row_count() const { return action_rows_.size(); }
  std::size_t answer_row_count() const { return answer_rows_.size(); }

  ParamLayout layout() const;
  std::vector<double> flatten(const ParamLayout& layout) const;
  void load_flat(const ParamLayout& layout, std::span<const double> values);

  // theta -= lr * grad over the layout's flat ordering.
  void apply_gradient_step(const ParamLayout& layout, std::span<const double> grad, double lr);

  const std::map<ActionKey, std::vector<double>>& action_rows() const { return action_rows_; }
  const std::map<AnswerKey, std::vector<double>>& answer_rows() const { return answer_rows_; }

  void save_checkpoint(const std::string& path) const;
  static PolicyParams load_checkpoint(const std::string& path, const EnvSpec& spec);

 private:
  EnvSpec spec_;
  std::map<ActionKey, std::vector<double>> action_rows_;
  std::map<AnswerKey, std::vector<double>> answer_rows_;
};

// Deterministic task construction: target tokens drawn from V^L using
// task_seed only. Fact k supports answer position (k mod L).
Query generate_task(const EnvSpec& spec, std::uint64_t task_seed);

// One environment interaction. Only query actions are legal here; acting at
// or beyond T_max throws std::logic_error. A fact queried for the first time
// resolves truthful/misleading with the stream; re-queries replay the
// recorded observation without consuming randomness.
struct StepResult {
  std::vector<int> observation;
  EvidenceState next_state;
};
StepResult step(const EvidenceState& state, int fact, const EnvSpec& spec, const Query& query,
                RngStream& rng);

// Exact log-softmax over a logit row.
std::vector<double> log_softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);

// Per-action log-probabilities at an action state (materializes the row).
std::vector<double> action_logprobs(PolicyParams& params, const ActionKey& key);

// Length-normalized teacher-forced probability of `answer` under the answer
// head at the given evidence state: exp((1/L) sum_j log pi(a_j | state)).
double answer_conditional_prob(PolicyParams& params, const Query& query,
                               const EvidenceState& state, const AnswerTokens& answer);

// Evaluation context for one recorded turn: masks before the turn's
// observation (the state the decision was made in).
struct TurnContext {
  int turn_index = 1;
  EvidenceState before;
  bool is_final = false;
  bool forced_answer = false;  // final turn emitted at the T_max cap
};

// Rebuilds the per-turn contexts of a rollout by replaying its actions and
// observations. Throws std::runtime_error when the rollout's tokens do not
// match the spec/query (state-key mismatch).
std::vector<TurnContext> reconstruct_contexts(const EnvSpec& spec, const Query& query,
                                              const Rollout& rollout);

// Per-token log-probabilities of a recorded turn under `params`. Scaffold
// (schema marker) tokens and forced answer actions are emitted with
// probability 1 and return exactly 0.
std::vector<double> turn_token_logprobs(PolicyParams& params, const Query& query,
                                        const TurnContext& ctx, const Turn& turn);

// Exact gradient of the summed token log-prob of a recorded turn with respect
// to the flat parameter vector: accumulates coeff * d(sum log pi)/d(theta)
// into grad (sized layout.total).
void accumulate_turn_logprob_grad(PolicyParams& params, const ParamLayout& layout,
                                  const Query& query, const TurnContext& ctx, const Turn& turn,
                                  double coeff, std::span<double> grad);

// Samples one full episode under the policy; deterministic in
// (params, spec, query, stream). Records behavior log-probs per token.
Rollout rollout_episode(PolicyParams& params, const EnvSpec& spec, const Query& query,
                        RngStream& rng);

// Mean Shannon entropy (nats) of the action distributions at the given keys.
double policy_entropy(PolicyParams& params, std::span<const ActionKey> keys);

}  // namespace a2tgpo
