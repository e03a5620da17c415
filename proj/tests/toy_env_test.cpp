#include "doctest.h"

#include <cmath>
#include <set>
#include <stdexcept>

#include "a2tgpo/toy_env.hpp"

using namespace a2tgpo;

namespace {

EnvSpec small_spec() {
  EnvSpec spec;
  spec.num_facts = 3;
  spec.answer_length = 2;
  spec.vocab_size = 5;
  spec.max_turns = 4;
  spec.noise_prob = 0.25;
  spec.seed = 11;
  return spec;
}

// Central finite differences of a scalar function of the flat params.
template <typename F>
std::vector<double> finite_diff(PolicyParams& params, const ParamLayout& layout, F f,
                                double h = 1e-5) {
  std::vector<double> theta = params.flatten(layout);
  std::vector<double> grad(layout.total);
  for (std::size_t i = 0; i < layout.total; ++i) {
    const double orig = theta[i];
    theta[i] = orig + h;
    params.load_flat(layout, theta);
    const double up = f();
    theta[i] = orig - h;
    params.load_flat(layout, theta);
    const double down = f();
    theta[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  params.load_flat(layout, theta);
  return grad;
}

}  // namespace

TEST_CASE("generate_task is deterministic and respects the domain") {
  const EnvSpec spec = small_spec();
  CHECK(generate_task(spec, 5) == generate_task(spec, 5));

  EnvSpec tiny = spec;
  tiny.answer_length = 1;
  tiny.vocab_size = 2;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const int tok = generate_task(tiny, s).target_answer.tokens[0];
    CHECK((tok == 0 || tok == 1));
  }
}

TEST_CASE("distinct task seeds give mostly distinct targets") {
  const EnvSpec spec = EnvSpec{};  // V=16, L=3: collision prob per pair = 16^-3
  std::set<std::vector<int>> targets;
  for (std::uint64_t s = 0; s < 100; ++s)
    targets.insert(generate_task(spec, s).target_answer.tokens);
  // Brute-force collision count: expect ~C(100,2)/4096 = 1.2 collisions.
  CHECK(targets.size() >= 95);
  CHECK(targets.size() == 100);  // frozen for the default spec and seeds 0..99
}

TEST_CASE("step sets evidence or misled bits by the noise draw") {
  EnvSpec spec = small_spec();
  const Query q = generate_task(spec, 3);
  EvidenceState state;

  spec.noise_prob = 0.0;
  RngStream rng_a(1);
  const StepResult truthful = step(state, 2, spec, q, rng_a);
  CHECK(truthful.next_state.evidence_mask == (1u << 2));
  CHECK(truthful.next_state.misled_mask == 0);
  CHECK(truthful.next_state.turn_count == 1);
  CHECK(truthful.observation[0] == spec.observation_marker(2));
  CHECK(truthful.observation[1] == q.target_answer.tokens[2 % spec.answer_length]);

  spec.noise_prob = 0.999999;  // noise_prob is exclusive of 1; this forces the misled branch
  RngStream rng_b(1);
  const StepResult misled = step(state, 2, spec, q, rng_b);
  CHECK(misled.next_state.misled_mask == (1u << 2));
  CHECK(misled.next_state.evidence_mask == 0);
  CHECK(misled.observation[1] != q.target_answer.tokens[2 % spec.answer_length]);
}

TEST_CASE("step at the turn cap is a protocol error") {
  const EnvSpec spec = small_spec();
  const Query q = generate_task(spec, 3);
  EvidenceState state;
  state.turn_count = spec.max_turns;
  RngStream rng(1);
  CHECK_THROWS_AS(step(state, 0, spec, q, rng), std::logic_error);
}

TEST_CASE("re-querying a resolved fact replays the recorded observation") {
  EnvSpec spec = small_spec();
  spec.noise_prob = 0.0;
  const Query q = generate_task(spec, 3);
  RngStream rng(1);
  const StepResult first = step(EvidenceState{}, 1, spec, q, rng);
  const StepResult again = step(first.next_state, 1, spec, q, rng);
  CHECK(again.observation == first.observation);
  CHECK(again.next_state.evidence_mask == first.next_state.evidence_mask);
  CHECK(again.next_state.misled_mask == first.next_state.misled_mask);
}

TEST_CASE("fresh action state is uniform over K+1 actions") {
  EnvSpec spec = small_spec();  // K=3 => 4 actions
  PolicyParams params(spec);
  const auto lp = action_logprobs(params, ActionKey{1, 0});
  REQUIRE(lp.size() == 4);
  for (double v : lp) CHECK(v == doctest::Approx(std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("softmax of logits (1,0,0,0) puts e/(e+3) on the first action") {
  EnvSpec spec = small_spec();
  PolicyParams params(spec);
  params.action_row(ActionKey{1, 0}) = {1.0, 0.0, 0.0, 0.0};
  const auto lp = action_logprobs(params, ActionKey{1, 0});
  const double expected = std::exp(1.0) / (std::exp(1.0) + 3.0);
  CHECK(std::exp(lp[0]) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("softmax normalizes to 1 within 1e-12") {
  EnvSpec spec = small_spec();
  PolicyParams params(spec);
  RngStream rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    ActionKey key{1 + static_cast<int>(rng.below(4)), static_cast<std::uint32_t>(rng.below(8))};
    auto& row = params.action_row(key);
    for (double& v : row) v = (rng.next_double() - 0.5) * 10.0;
    double total = 0.0;
    for (double lp : action_logprobs(params, key)) total += std::exp(lp);
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("uniform answer head gives 1/V for any answer length") {
  EnvSpec spec = small_spec();
  spec.vocab_size = 4;
  PolicyParams params(spec);
  const Query q = generate_task(spec, 1);
  // No evidence: the boost construction leaves the row at zero logits.
  const double p = answer_conditional_prob(params, q, EvidenceState{}, q.target_answer);
  CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("answer_conditional_prob matches hand-set per-token probabilities") {
  EnvSpec spec = small_spec();
  spec.answer_length = 2;
  spec.vocab_size = 5;
  PolicyParams params(spec);
  Query q = generate_task(spec, 1);
  q.target_answer.tokens = {0, 0};

  auto set_per_token_prob = [&](double p) {
    const AnswerKey key{q.id, 0, 0};
    auto& row = params.answer_row(key, q);
    // logit a with zeros elsewhere: p = e^a / (e^a + V - 1).
    const double a = std::log(p * (spec.vocab_size - 1) / (1.0 - p));
    for (int j = 0; j < spec.answer_length; ++j) {
      for (int v = 0; v < spec.vocab_size; ++v)
        row[j * spec.vocab_size + v] = (v == 0) ? a : 0.0;
    }
  };

  set_per_token_prob(0.5);
  CHECK(answer_conditional_prob(params, q, EvidenceState{}, q.target_answer) ==
        doctest::Approx(0.5).epsilon(1e-12));
  set_per_token_prob(0.8);
  CHECK(answer_conditional_prob(params, q, EvidenceState{}, q.target_answer) ==
        doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("answer probability is invariant to permuting equal-prob tokens") {
  EnvSpec spec = small_spec();
  PolicyParams params(spec);
  Query q = generate_task(spec, 1);
  q.target_answer.tokens = {1, 2};
  const double p1 = answer_conditional_prob(params, q, EvidenceState{}, AnswerTokens{{1, 2}});
  const double p2 = answer_conditional_prob(params, q, EvidenceState{}, AnswerTokens{{2, 1}});
  CHECK(p1 == doctest::Approx(p2).epsilon(1e-15));
}

TEST_CASE("answer probability is strictly monotone in evidence inclusion") {
  EnvSpec spec = small_spec();
  spec.noise_prob = 0.0;
  PolicyParams params(spec);
  const Query q = generate_task(spec, 7);
  // All subset pairs A < B over the 3 facts.
  for (std::uint32_t a = 0; a < 8; ++a) {
    for (std::uint32_t b = 0; b < 8; ++b) {
      if ((a & b) != a || a == b) continue;
      const double pa =
          answer_conditional_prob(params, q, EvidenceState{a, 0, 0}, q.target_answer);
      const double pb =
          answer_conditional_prob(params, q, EvidenceState{b, 0, 0}, q.target_answer);
      CHECK(pa < pb);
    }
  }
}

TEST_CASE("rollout respects forced termination rules") {
  EnvSpec spec = small_spec();
  PolicyParams params(spec);
  const Query q = generate_task(spec, 2);

  // All action mass on ANSWER at turn 1.
  params.action_row(ActionKey{1, 0}) = {-100.0, -100.0, -100.0, 100.0};
  RngStream rng1(5);
  const Rollout immediate = rollout_episode(params, spec, q, rng1);
  CHECK(immediate.total_turns() == 1);
  CHECK(immediate.turns[0].is_final);

  // Zero ANSWER mass everywhere: the cap forces an answer at T_max.
  PolicyParams stubborn(spec);
  for (int t = 1; t <= spec.max_turns; ++t)
    for (std::uint32_t m = 0; m < 8; ++m)
      stubborn.action_row(ActionKey{t, m}) = {0.0, 0.0, 0.0, -1e9};
  RngStream rng2(6);
  const Rollout capped = rollout_episode(stubborn, spec, q, rng2);
  CHECK(capped.total_turns() == spec.max_turns);
  CHECK(capped.turns.back().is_final);
  // The forced answer action was not sampled from the policy.
  CHECK(capped.turns.back().token_logprobs_old[0] == 0.0);
}

TEST_CASE("rollouts are bit-identical under the same stream") {
  EnvSpec spec = small_spec();
  PolicyParams params(spec);
  const Query q = generate_task(spec, 2);
  RngStream a(123), b(123);
  CHECK(rollout_episode(params, spec, q, a) == rollout_episode(params, spec, q, b));
}

TEST_CASE("rollouts produce valid groups and parseable final turns") {
  EnvSpec spec = small_spec();
  PolicyParams params(spec);
  const Query q = generate_task(spec, 9);
  RolloutGroup group;
  group.query_id = q.id;
  for (int i = 0; i < 8; ++i) {
    RngStream rng(1000 + i);
    group.rollouts.push_back(rollout_episode(params, spec, q, rng));
  }
  CHECK(validate_rollout_group(group).empty());
  for (const Rollout& r : group.rollouts) {
    REQUIRE(r.final_prediction.has_value());
    CHECK((r.outcome_reward == 0.0 || r.outcome_reward == 1.0));
  }
}

TEST_CASE("analytic turn gradient matches central finite differences") {
  EnvSpec spec = small_spec();
  RngStream seed_rng(42);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    PolicyParams params(spec);
    const Query q = generate_task(spec, seed_rng.below(1000));
    RngStream rng(seed_rng.next_u64());
    const Rollout rollout = rollout_episode(params, spec, q, rng);
    const auto contexts = reconstruct_contexts(spec, q, rollout);

    // Perturb all materialized rows so the state is generic.
    ParamLayout layout = params.layout();
    std::vector<double> theta = params.flatten(layout);
    for (double& v : theta) v += (rng.next_double() - 0.5) * 2.0;
    params.load_flat(layout, theta);

    const std::size_t k = rng.below(rollout.turns.size());
    auto sum_logp = [&]() {
      double total = 0.0;
      for (double lp : turn_token_logprobs(params, q, contexts[k], rollout.turns[k])) total += lp;
      return total;
    };
    std::vector<double> analytic(layout.total, 0.0);
    accumulate_turn_logprob_grad(params, layout, q, contexts[k], rollout.turns[k], 1.0, analytic);
    const std::vector<double> numeric = finite_diff(params, layout, sum_logp);

    double scale = 1.0;
    for (double v : analytic) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < layout.total; ++i)
      worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("gradient rows sum to zero and untouched rows stay zero") {
  EnvSpec spec = small_spec();
  PolicyParams params(spec);
  const Query q = generate_task(spec, 2);
  RngStream rng(7);
  const Rollout rollout = rollout_episode(params, spec, q, rng);
  const auto contexts = reconstruct_contexts(spec, q, rollout);
  // Materialize an extra unrelated row, then take the layout.
  params.action_row(ActionKey{1, 7});
  const ParamLayout layout = params.layout();

  std::vector<double> grad(layout.total, 0.0);
  accumulate_turn_logprob_grad(params, layout, q, contexts[0], rollout.turns[0], 1.0, grad);

  for (const auto& [key, off] : layout.action_offsets) {
    double row_sum = 0.0;
    bool any = false;
    for (int a = 0; a <= spec.num_facts; ++a) {
      row_sum += grad[off + a];
      any = any || grad[off + a] != 0.0;
    }
    if (any) CHECK(std::abs(row_sum) < 1e-12);  // softmax rows sum to zero
    if (key == ActionKey{1, 7}) CHECK(!any);    // unvisited row gets no gradient
  }
}

TEST_CASE("checkpoints round-trip and reject mismatched specs") {
  EnvSpec spec = small_spec();
  PolicyParams params(spec);
  const Query q = generate_task(spec, 2);
  RngStream rng(3);
  rollout_episode(params, spec, q, rng);

  const std::string path = "/tmp/a2tgpo_test_ckpt.bin";
  params.save_checkpoint(path);
  const PolicyParams loaded = PolicyParams::load_checkpoint(path, spec);
  CHECK(loaded.action_rows() == params.action_rows());
  CHECK(loaded.answer_rows() == params.answer_rows());

  EnvSpec other = spec;
  other.vocab_size += 1;
  CHECK_THROWS_AS(PolicyParams::load_checkpoint(path, other), std::runtime_error);
}

TEST_CASE("policy entropy bounds") {
  EnvSpec spec = small_spec();
  PolicyParams params(spec);
  const ActionKey uniform{1, 0};
  params.action_row(uniform);
  std::vector<ActionKey> keys{uniform};
  CHECK(policy_entropy(params, keys) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  params.action_row(ActionKey{2, 0}) = {1000.0, 0.0, 0.0, 0.0};
  keys = {ActionKey{2, 0}};
  CHECK(policy_entropy(params, keys) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(policy_entropy(params, keys) >= 0.0);
}
