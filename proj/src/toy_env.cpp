#include "a2tgpo/toy_env.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace a2tgpo {

FormatSchema EnvSpec::default_schema() const {
  const int base = vocab_size + num_facts + 1;
  FormatSchema s;
  s.think_open = base;
  s.think_close = base + 1;
  s.answer_open = base + 2;
  s.answer_close = base + 3;
  s.box_open = base + 4;
  s.box_close = base + 5;
  return s;
}

FormatSchema EnvSpec::effective_schema() const {
  return schema == FormatSchema{} ? default_schema() : schema;
}

std::uint64_t EnvSpec::content_hash() const {
  SeedLabel h(0x41325447ULL);  // arbitrary fixed salt
  h << static_cast<std::uint64_t>(num_facts) << static_cast<std::uint64_t>(answer_length)
    << static_cast<std::uint64_t>(vocab_size) << static_cast<std::uint64_t>(max_turns);
  std::uint64_t noise_bits = 0;
  std::memcpy(&noise_bits, &noise_prob, sizeof noise_bits);
  std::uint64_t boost_bits = 0;
  std::memcpy(&boost_bits, &evidence_boost, sizeof boost_bits);
  h << noise_bits << seed << boost_bits;
  const FormatSchema& fs = effective_schema();
  h << static_cast<std::uint64_t>(fs.think_open) << static_cast<std::uint64_t>(fs.think_close)
    << static_cast<std::uint64_t>(fs.answer_open) << static_cast<std::uint64_t>(fs.answer_close)
    << static_cast<std::uint64_t>(fs.box_open) << static_cast<std::uint64_t>(fs.box_close);
  return h.finish();
}

void EnvSpec::validate() const {
  if (num_facts < 1) throw std::invalid_argument("env.num_facts must be >= 1");
  if (num_facts > 31) throw std::invalid_argument("env.num_facts must fit a 32-bit mask (<= 31)");
  if (answer_length < 1) throw std::invalid_argument("env.answer_length must be >= 1");
  if (vocab_size < 2) throw std::invalid_argument("env.vocab_size must be >= 2");
  if (max_turns < 2) throw std::invalid_argument("env.max_turns must be >= 2");
  if (!(noise_prob >= 0.0 && noise_prob < 1.0))
    throw std::invalid_argument("env.noise_prob must be in [0, 1)");
  if (!std::isfinite(evidence_boost))
    throw std::invalid_argument("env.evidence_boost must be finite");
  const FormatSchema& fs = effective_schema();
  const int ids[6] = {fs.think_open, fs.think_close, fs.answer_open,
                      fs.answer_close, fs.box_open, fs.box_close};
  for (int i = 0; i < 6; ++i) {
    if (ids[i] >= 0 && ids[i] < vocab_size)
      throw std::invalid_argument("format_schema token collides with answer vocabulary");
    if (ids[i] >= vocab_size && ids[i] <= vocab_size + num_facts)
      throw std::invalid_argument("format_schema token collides with action tokens");
    for (int j = i + 1; j < 6; ++j)
      if (ids[i] == ids[j]) throw std::invalid_argument("format_schema tokens must be distinct");
  }
}

std::vector<double>& PolicyParams::action_row(const ActionKey& key) {
  auto it = action_rows_.find(key);
  if (it == action_rows_.end()) {
    // Unseen state: uniform initialization.
    it = action_rows_.emplace(key, std::vector<double>(spec_.num_facts + 1, 0.0)).first;
  }
  return it->second;
}

std::vector<double>& PolicyParams::answer_row(const AnswerKey& key, const Query& query) {
  auto it = answer_rows_.find(key);
  if (it == answer_rows_.end()) {
    const int L = spec_.answer_length;
    const int V = spec_.vocab_size;
    std::vector<double> row(static_cast<std::size_t>(L) * V, 0.0);
    const double shift = spec_.evidence_boost *
                         (std::popcount(key.evidence_mask) - std::popcount(key.misled_mask));
    for (int j = 0; j < L; ++j)
      row[static_cast<std::size_t>(j) * V + query.target_answer.tokens[j]] = shift;
    it = answer_rows_.emplace(key, std::move(row)).first;
  }
  return it->second;
}

ParamLayout PolicyParams::layout() const {
  ParamLayout out;
  out.action_row_size = spec_.num_facts + 1;
  out.answer_row_size = spec_.answer_length * spec_.vocab_size;
  std::size_t off = 0;
  for (const auto& [key, row] : action_rows_) {
    out.action_offsets.emplace_back(key, off);
    off += row.size();
  }
  for (const auto& [key, row] : answer_rows_) {
    out.answer_offsets.emplace_back(key, off);
    off += row.size();
  }
  out.total = off;
  return out;
}

std::vector<double> PolicyParams::flatten(const ParamLayout& layout) const {
  std::vector<double> flat(layout.total, 0.0);
  for (const auto& [key, off] : layout.action_offsets) {
    const auto& row = action_rows_.at(key);
    std::copy(row.begin(), row.end(), flat.begin() + off);
  }
  for (const auto& [key, off] : layout.answer_offsets) {
    const auto& row = answer_rows_.at(key);
    std::copy(row.begin(), row.end(), flat.begin() + off);
  }
  return flat;
}

void PolicyParams::load_flat(const ParamLayout& layout, std::span<const double> values) {
  if (values.size() != layout.total) throw std::invalid_argument("load_flat: size mismatch");
  for (const auto& [key, off] : layout.action_offsets) {
    auto& row = action_rows_.at(key);
    std::copy(values.begin() + off, values.begin() + off + row.size(), row.begin());
  }
  for (const auto& [key, off] : layout.answer_offsets) {
    auto& row = answer_rows_.at(key);
    std::copy(values.begin() + off, values.begin() + off + row.size(), row.begin());
  }
}

void PolicyParams::apply_gradient_step(const ParamLayout& layout, std::span<const double> grad,
                                       double lr) {
  if (grad.size() != layout.total) throw std::invalid_argument("gradient size mismatch");
  for (const auto& [key, off] : layout.action_offsets) {
    auto& row = action_rows_.at(key);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] -= lr * grad[off + i];
  }
  for (const auto& [key, off] : layout.answer_offsets) {
    auto& row = answer_rows_.at(key);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] -= lr * grad[off + i];
  }
}

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'T', 'G', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void PolicyParams::save_checkpoint(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_u32(os, 1);  // version
  write_u64(os, spec_.content_hash());
  write_u64(os, action_rows_.size());
  for (const auto& [key, row] : action_rows_) {
    write_u32(os, static_cast<std::uint32_t>(key.turn_index));
    write_u32(os, key.evidence_mask);
    write_doubles(os, row);
  }
  write_u64(os, answer_rows_.size());
  for (const auto& [key, row] : answer_rows_) {
    write_u32(os, static_cast<std::uint32_t>(key.query_id.size()));
    os.write(key.query_id.data(), static_cast<std::streamsize>(key.query_id.size()));
    write_u32(os, key.evidence_mask);
    write_u32(os, key.misled_mask);
    write_doubles(os, row);
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

PolicyParams PolicyParams::load_checkpoint(const std::string& path, const EnvSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const std::uint32_t version = read_u32(is);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  const std::uint64_t hash = read_u64(is);
  if (hash != spec.content_hash())
    throw std::runtime_error("checkpoint env-spec hash mismatch: " + path);

  PolicyParams params(spec);
  const std::uint64_t n_action = read_u64(is);
  for (std::uint64_t i = 0; i < n_action; ++i) {
    ActionKey key;
    key.turn_index = static_cast<int>(read_u32(is));
    key.evidence_mask = read_u32(is);
    std::vector<double> row(static_cast<std::size_t>(spec.num_facts) + 1);
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    params.action_rows_[key] = std::move(row);
  }
  const std::uint64_t n_answer = read_u64(is);
  for (std::uint64_t i = 0; i < n_answer; ++i) {
    AnswerKey key;
    const std::uint32_t len = read_u32(is);
    key.query_id.resize(len);
    is.read(key.query_id.data(), len);
    key.evidence_mask = read_u32(is);
    key.misled_mask = read_u32(is);
    std::vector<double> row(static_cast<std::size_t>(spec.answer_length) * spec.vocab_size);
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    params.answer_rows_[key] = std::move(row);
  }
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  return params;
}

Query generate_task(const EnvSpec& spec, std::uint64_t task_seed) {
  RngStream rng(derive_seed(task_seed, "task-target"));
  Query q;
  q.env_seed = task_seed;
  q.id = "task-" + std::to_string(task_seed);
  q.target_answer.tokens.resize(spec.answer_length);
  for (int j = 0; j < spec.answer_length; ++j)
    q.target_answer.tokens[j] = static_cast<int>(rng.below(spec.vocab_size));
  return q;
}

namespace {

// Observation content for fact k: a fact marker plus a value token about
// answer position (k mod L). Truthful queries reveal the target token;
// misleading ones a corrupted token (never equal to the target).
std::vector<int> observation_tokens(const EnvSpec& spec, const Query& query, int fact,
                                    bool truthful) {
  const int pos = fact % spec.answer_length;
  const int target = query.target_answer.tokens[pos];
  int value = target;
  if (!truthful) value = (target + 1 + fact % (spec.vocab_size - 1)) % spec.vocab_size;
  return {spec.observation_marker(fact), value};
}

}  // namespace

StepResult step(const EvidenceState& state, int fact, const EnvSpec& spec, const Query& query,
                RngStream& rng) {
  if (state.turn_count >= spec.max_turns)
    throw std::logic_error("step: acting at or beyond max_turns");
  if (fact < 0 || fact >= spec.num_facts) throw std::logic_error("step: fact out of range");

  StepResult out;
  out.next_state = state;
  out.next_state.turn_count = state.turn_count + 1;
  const std::uint32_t bit = 1u << fact;
  if (state.evidence_mask & bit) {
    out.observation = observation_tokens(spec, query, fact, /*truthful=*/true);
  } else if (state.misled_mask & bit) {
    out.observation = observation_tokens(spec, query, fact, /*truthful=*/false);
  } else {
    const bool misled = rng.bernoulli(spec.noise_prob);
    if (misled)
      out.next_state.misled_mask |= bit;
    else
      out.next_state.evidence_mask |= bit;
    out.observation = observation_tokens(spec, query, fact, /*truthful=*/!misled);
  }
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double max_logit = logits[0];
  for (double v : logits) max_logit = std::max(max_logit, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - max_logit);
  const double log_z = max_logit + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  auto ls = log_softmax(logits);
  for (double& v : ls) v = std::exp(v);
  return ls;
}

std::vector<double> action_logprobs(PolicyParams& params, const ActionKey& key) {
  return log_softmax(params.action_row(key));
}

double answer_conditional_prob(PolicyParams& params, const Query& query,
                               const EvidenceState& state, const AnswerTokens& answer) {
  const EnvSpec& spec = params.spec();
  if (answer.length() != spec.answer_length)
    throw std::invalid_argument("answer length does not match spec");
  const AnswerKey key{query.id, state.evidence_mask, state.misled_mask};
  const std::vector<double>& row = params.answer_row(key, query);
  const int V = spec.vocab_size;
  double sum_logp = 0.0;
  for (int j = 0; j < spec.answer_length; ++j) {
    std::span<const double> logits(row.data() + static_cast<std::size_t>(j) * V, V);
    sum_logp += log_softmax(logits)[answer.tokens[j]];
  }
  return std::exp(sum_logp / spec.answer_length);
}

std::vector<TurnContext> reconstruct_contexts(const EnvSpec& spec, const Query& query,
                                              const Rollout& rollout) {
  std::vector<TurnContext> out;
  EvidenceState state;
  const int target_len = query.target_answer.length();
  for (const Turn& turn : rollout.turns) {
    TurnContext ctx;
    ctx.turn_index = turn.index;
    ctx.before = state;
    ctx.is_final = turn.is_final;
    ctx.forced_answer = turn.is_final && turn.index == spec.max_turns;
    if (!turn.is_final) {
      if (turn.generated_tokens.size() != 1)
        throw std::runtime_error("process turn must contain exactly one action token");
      const int token = turn.generated_tokens[0];
      const int fact = token - spec.vocab_size;
      if (fact < 0 || fact >= spec.num_facts)
        throw std::runtime_error("process turn token is not a query action");
      if (!turn.observation.has_value() || turn.observation->size() != 2 ||
          (*turn.observation)[0] != spec.observation_marker(fact))
        throw std::runtime_error("observation does not match queried fact");
      const std::uint32_t bit = 1u << fact;
      if (!(state.evidence_mask & bit) && !(state.misled_mask & bit)) {
        const int value = (*turn.observation)[1];
        const int truth = query.target_answer.tokens[fact % target_len];
        if (value == truth)
          state.evidence_mask |= bit;
        else
          state.misled_mask |= bit;
      }
      state.turn_count += 1;
    }
    out.push_back(ctx);
  }
  return out;
}

namespace {

// Splits a final turn's generated tokens into (answer action, payload
// positions). Layout: ANSWER, THINK_O, THINK_C, ANS_O, BOX_O, a_1..a_L,
// BOX_C, ANS_C.
struct FinalTurnView {
  int answer_action_pos = 0;
  int payload_begin = 5;
  int payload_len = 0;
};

FinalTurnView final_turn_view(const EnvSpec& spec, const Turn& turn) {
  FinalTurnView v;
  v.payload_len = static_cast<int>(turn.generated_tokens.size()) - 7;
  if (v.payload_len != spec.answer_length ||
      turn.generated_tokens[0] != spec.answer_action_token())
    throw std::runtime_error("final turn does not match the answer block layout");
  return v;
}

}  // namespace

std::vector<double> turn_token_logprobs(PolicyParams& params, const Query& query,
                                        const TurnContext& ctx, const Turn& turn) {
  const EnvSpec& spec = params.spec();
  std::vector<double> out(turn.generated_tokens.size(), 0.0);
  if (!ctx.is_final) {
    const int fact = turn.generated_tokens[0] - spec.vocab_size;
    out[0] = action_logprobs(params, ActionKey{ctx.turn_index, ctx.before.evidence_mask})[fact];
    return out;
  }
  const FinalTurnView v = final_turn_view(spec, turn);
  if (!ctx.forced_answer) {
    out[v.answer_action_pos] =
        action_logprobs(params,
                        ActionKey{ctx.turn_index, ctx.before.evidence_mask})[spec.num_facts];
  }
  const AnswerKey key{query.id, ctx.before.evidence_mask, ctx.before.misled_mask};
  const std::vector<double>& row = params.answer_row(key, query);
  const int V = spec.vocab_size;
  for (int j = 0; j < v.payload_len; ++j) {
    std::span<const double> logits(row.data() + static_cast<std::size_t>(j) * V, V);
    out[v.payload_begin + j] = log_softmax(logits)[turn.generated_tokens[v.payload_begin + j]];
  }
  return out;
}

void accumulate_turn_logprob_grad(PolicyParams& params, const ParamLayout& layout,
                                  const Query& query, const TurnContext& ctx, const Turn& turn,
                                  double coeff, std::span<double> grad) {
  const EnvSpec& spec = params.spec();
  auto action_offset = [&](const ActionKey& key) -> std::size_t {
    auto it = std::lower_bound(layout.action_offsets.begin(), layout.action_offsets.end(), key,
                               [](const auto& p, const ActionKey& k) { return p.first < k; });
    if (it == layout.action_offsets.end() || it->first != key)
      throw std::runtime_error("action key missing from layout");
    return it->second;
  };
  auto answer_offset = [&](const AnswerKey& key) -> std::size_t {
    auto it = std::lower_bound(layout.answer_offsets.begin(), layout.answer_offsets.end(), key,
                               [](const auto& p, const AnswerKey& k) { return p.first < k; });
    if (it == layout.answer_offsets.end() || it->first != key)
      throw std::runtime_error("answer key missing from layout");
    return it->second;
  };

  // Softmax gradient per sampled token: onehot(token) - probs on the row.
  auto add_row_grad = [&](std::span<const double> logits, int token, std::size_t base) {
    const std::vector<double> probs = softmax(logits);
    for (std::size_t a = 0; a < probs.size(); ++a) grad[base + a] -= coeff * probs[a];
    grad[base + token] += coeff;
  };

  if (!ctx.is_final) {
    const int fact = turn.generated_tokens[0] - spec.vocab_size;
    const ActionKey key{ctx.turn_index, ctx.before.evidence_mask};
    add_row_grad(params.action_row(key), fact, action_offset(key));
    return;
  }
  const FinalTurnView v = final_turn_view(spec, turn);
  if (!ctx.forced_answer) {
    const ActionKey key{ctx.turn_index, ctx.before.evidence_mask};
    add_row_grad(params.action_row(key), spec.num_facts, action_offset(key));
  }
  const AnswerKey key{query.id, ctx.before.evidence_mask, ctx.before.misled_mask};
  const std::vector<double>& row = params.answer_row(key, query);
  const std::size_t base = answer_offset(key);
  const int V = spec.vocab_size;
  for (int j = 0; j < v.payload_len; ++j) {
    std::span<const double> logits(row.data() + static_cast<std::size_t>(j) * V, V);
    add_row_grad(logits, turn.generated_tokens[v.payload_begin + j],
                 base + static_cast<std::size_t>(j) * V);
  }
}

Rollout rollout_episode(PolicyParams& params, const EnvSpec& spec, const Query& query,
                        RngStream& rng) {
  const FormatSchema& schema = spec.effective_schema();
  Rollout rollout;
  rollout.query_id = query.id;
  EvidenceState state;

  for (int t = 1; t <= spec.max_turns; ++t) {
    const ActionKey akey{t, state.evidence_mask};
    const bool forced = (t == spec.max_turns);
    int action = spec.num_facts;  // ANSWER
    std::vector<double> alp;
    if (!forced) {
      alp = action_logprobs(params, akey);
      std::vector<double> probs(alp.size());
      for (std::size_t i = 0; i < alp.size(); ++i) probs[i] = std::exp(alp[i]);
      action = static_cast<int>(rng.categorical(probs));
    }

    Turn turn;
    turn.index = t;
    if (action < spec.num_facts) {
      turn.generated_tokens = {spec.query_action_token(action)};
      turn.token_logprobs_old = {alp[action]};
      StepResult sr = step(state, action, spec, query, rng);
      turn.observation = std::move(sr.observation);
      state = sr.next_state;
      rollout.turns.push_back(std::move(turn));
      continue;
    }

    // Answer turn: sample L payload tokens from the answer head and wrap them
    // in the response schema. Scaffold tokens are emitted with probability 1.
    turn.is_final = true;
    const AnswerKey key{query.id, state.evidence_mask, state.misled_mask};
    const std::vector<double>& row = params.answer_row(key, query);
    const int V = spec.vocab_size;
    std::vector<int> payload(spec.answer_length);
    std::vector<double> payload_logp(spec.answer_length);
    for (int j = 0; j < spec.answer_length; ++j) {
      std::span<const double> logits(row.data() + static_cast<std::size_t>(j) * V, V);
      const std::vector<double> probs = softmax(logits);
      payload[j] = static_cast<int>(rng.categorical(probs));
      payload_logp[j] = std::log(probs[payload[j]]);
    }
    turn.generated_tokens = {spec.answer_action_token(), schema.think_open, schema.think_close,
                             schema.answer_open, schema.box_open};
    turn.token_logprobs_old = {forced ? 0.0 : alp[spec.num_facts], 0.0, 0.0, 0.0, 0.0};
    for (int j = 0; j < spec.answer_length; ++j) {
      turn.generated_tokens.push_back(payload[j]);
      turn.token_logprobs_old.push_back(payload_logp[j]);
    }
    turn.generated_tokens.push_back(schema.box_close);
    turn.generated_tokens.push_back(schema.answer_close);
    turn.token_logprobs_old.push_back(0.0);
    turn.token_logprobs_old.push_back(0.0);

    // The answer action token is not part of the parsed response body.
    const FormattedResponse resp =
        parse_format(std::span<const int>(turn.generated_tokens).subspan(1), schema,
                     spec.vocab_size);
    rollout.final_prediction = resp.boxed_payload;
    rollout.outcome_reward = composite_reward(resp, query.target_answer);
    rollout.turns.push_back(std::move(turn));
    break;
  }
  return rollout;
}

double policy_entropy(PolicyParams& params, std::span<const ActionKey> keys) {
  if (keys.empty()) return 0.0;
  double total = 0.0;
  for (const ActionKey& key : keys) {
    const std::vector<double> lp = action_logprobs(params, key);
    double h = 0.0;
    for (double v : lp) h -= std::exp(v) * v;
    total += h;
  }
  return total / static_cast<double>(keys.size());
}

}  // namespace a2tgpo
