#include "a2tgpo/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace a2tgpo {

void ClipSpec::validate() const {
  if (!(eps_low > 0.0)) throw std::invalid_argument("clip.eps_low must be > 0");
  if (!(eps_high > 0.0)) throw std::invalid_argument("clip.eps_high must be > 0");
  if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("clip.beta must be in [0, 1)");
}

void TrainConfig::validate() const {
  if (group_size < 1) throw std::invalid_argument("train.group_size must be >= 1");
  if (prompts_per_step < 1) throw std::invalid_argument("train.prompts_per_step must be >= 1");
  if (mini_batch_prompts < 1) throw std::invalid_argument("train.mini_batch_prompts must be >= 1");
  if (prompts_per_step % mini_batch_prompts != 0)
    throw std::invalid_argument("train.mini_batch_prompts must divide train.prompts_per_step");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train.learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("train.momentum must be in [0, 1)");
  if (total_steps < 0) throw std::invalid_argument("train.total_steps must be >= 0");
  if (num_tasks < prompts_per_step)
    throw std::invalid_argument("train.num_tasks must be >= train.prompts_per_step");
  credit.validate();
  clip.validate();
}

double turn_ratio(PolicyParams& params_new, const Query& query, const TurnContext& ctx,
                  const Turn& turn) {
  if (turn.generated_tokens.empty()) throw std::invalid_argument("turn_ratio: empty turn");
  const std::vector<double> lp_new = turn_token_logprobs(params_new, query, ctx, turn);
  double sum = 0.0;
  for (std::size_t k = 0; k < lp_new.size(); ++k)
    sum += lp_new[k] - turn.token_logprobs_old[k];
  return std::exp(sum / static_cast<double>(lp_new.size()));
}

double clip_scale(double normalized_ig, double beta) {
  // 2*sigmoid(x) - 1 == tanh(x/2), computed through tanh for symmetry.
  return 1.0 + beta * std::tanh(0.5 * normalized_ig);
}

void annotate_clip_scales(AdvantageBatch& batch, const ClipSpec& clip) {
  for (auto& row : batch.rollouts) {
    for (TurnCredit& tc : row) {
      if (!clip.adaptive) {
        tc.clip_scale = 1.0;
      } else {
        // Final turns carry no IG; normalized_ig is 0 there, giving c = 1.
        tc.clip_scale = clip_scale(tc.normalized_ig, clip.beta);
      }
    }
  }
}

LossGrad loss_and_grad(std::span<const LossInput> inputs, const ClipSpec& clip,
                       PolicyParams& params, const ParamLayout& layout) {
  LossGrad out;
  out.grad.assign(layout.total, 0.0);
  if (inputs.empty()) return out;
  const double inv_prompts = 1.0 / static_cast<double>(inputs.size());

  for (const LossInput& input : inputs) {
    const RolloutGroup& group = *input.group;
    const AdvantageBatch& adv = *input.advantages;
    const double inv_g = 1.0 / static_cast<double>(group.size());
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      const Rollout& rollout = group.rollouts[i];
      const std::vector<TurnContext> contexts =
          reconstruct_contexts(params.spec(), *input.query, rollout);
      std::size_t model_tokens = 0;
      for (const Turn& t : rollout.turns) model_tokens += t.generated_tokens.size();
      const double inv_m = 1.0 / static_cast<double>(model_tokens);

      for (std::size_t k = 0; k < rollout.turns.size(); ++k) {
        const Turn& turn = rollout.turns[k];
        const TurnCredit& tc = adv.rollouts[i][k];
        const double s = turn_ratio(params, *input.query, contexts[k], turn);
        const double lo = 1.0 - tc.clip_scale * clip.eps_low;
        const double hi = 1.0 + tc.clip_scale * clip.eps_high;
        const double s_clipped = std::clamp(s, lo, hi);
        const double a = tc.advantage;
        const double term = std::min(s * a, s_clipped * a);
        if (!std::isfinite(s) || !std::isfinite(term))
          throw std::runtime_error("non-finite loss term at rollout " + std::to_string(i) +
                                   " turn " + std::to_string(turn.index));
        const double tokens = static_cast<double>(turn.generated_tokens.size());
        out.loss -= inv_prompts * inv_g * inv_m * tokens * term;
        out.turns_total += 1;

        const bool clipped_branch = s * a > s_clipped * a;  // ties keep the ratio branch
        if (clipped_branch) {
          out.turns_clipped += 1;
        } else if (a != 0.0) {
          const double coeff = -inv_prompts * inv_g * inv_m * a * s;
          accumulate_turn_logprob_grad(params, layout, *input.query, contexts[k], turn, coeff,
                                       out.grad);
        }
      }
    }
  }
  return out;
}

namespace {

std::vector<std::optional<double>> position_vector(const DistributionStats& stats,
                                                   int max_turns, bool ig) {
  std::vector<std::optional<double>> out(max_turns);
  for (const PositionStats& ps : stats.per_position) {
    if (ps.turn_index < 1 || ps.turn_index > max_turns) continue;
    if (ig) {
      if (ps.ig_count > 0) out[ps.turn_index - 1] = ps.ig_mean;
    } else {
      if (ps.count > 0) out[ps.turn_index - 1] = ps.adv_mean;
    }
  }
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const EnvSpec& spec) {
  cfg.validate();
  spec.validate();

  std::vector<Query> tasks;
  tasks.reserve(cfg.num_tasks);
  for (int i = 0; i < cfg.num_tasks; ++i)
    tasks.push_back(generate_task(spec, derive_seed(spec.seed, "task", i)));

  TrainResult result{PolicyParams(spec), {}};
  PolicyParams& params = result.params;
  const bool uses_ig = cfg.credit.method != CreditMethod::GRPO;

  // Momentum buffers share the row keying of the parameter tables.
  std::map<ActionKey, std::vector<double>> vel_action;
  std::map<AnswerKey, std::vector<double>> vel_answer;

  for (int step = 1; step <= cfg.total_steps; ++step) {
    const auto t_start = std::chrono::steady_clock::now();
    const std::uint64_t step_seed = derive_seed(cfg.seed, "step", step);

    // Prompt subset for the step (without replacement, order-stable).
    RngStream prompt_rng(derive_seed(step_seed, "prompts"));
    std::vector<int> pool(cfg.num_tasks);
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<int> chosen;
    for (int i = 0; i < cfg.prompts_per_step; ++i) {
      const std::size_t j = static_cast<std::size_t>(prompt_rng.below(pool.size()));
      chosen.push_back(pool[j]);
      pool.erase(pool.begin() + j);
    }

    // Stage 1: rollouts under the frozen pre-step policy.
    std::vector<RolloutGroup> groups(chosen.size());
    std::set<ActionKey> visited;
    double reward_sum = 0.0;
    double em_sum = 0.0;
    double turns_sum = 0.0;
    for (std::size_t p = 0; p < chosen.size(); ++p) {
      const Query& query = tasks[chosen[p]];
      groups[p].query_id = query.id;
      for (int i = 0; i < cfg.group_size; ++i) {
        RngStream stream(derive_seed(step_seed, "rollout", query.id, i));
        Rollout r = rollout_episode(params, spec, query, stream);
        reward_sum += r.outcome_reward;
        em_sum += (r.outcome_reward == 1.0) ? 1.0 : 0.0;
        turns_sum += r.total_turns();
        for (const TurnContext& ctx : reconstruct_contexts(spec, query, r))
          if (!ctx.forced_answer) visited.insert(ActionKey{ctx.turn_index, ctx.before.evidence_mask});
        groups[p].rollouts.push_back(std::move(r));
      }
    }
    const double n_rollouts = static_cast<double>(chosen.size() * cfg.group_size);

    // Stage 2+3: information gain and advantages, before any update.
    std::vector<IgTable> ig_tables(chosen.size());
    std::vector<AdvantageBatch> batches(chosen.size());
    for (std::size_t p = 0; p < chosen.size(); ++p) {
      const Query& query = tasks[chosen[p]];
      if (uses_ig) {
        ig_tables[p] = compute_ig_table(groups[p], params, query);
      } else {
        ig_tables[p].query_id = groups[p].query_id;
        for (const Rollout& r : groups[p].rollouts)
          ig_tables[p].rows.emplace_back(r.total_turns() - 1, 0.0);
        ig_tables[p].final_prefix_prob.assign(groups[p].rollouts.size(), 0.0);
      }
      batches[p] = assemble_advantages(groups[p], ig_tables[p], cfg.credit);
      annotate_clip_scales(batches[p], cfg.clip);
    }

    MetricsRecord rec;
    rec.step = step;
    rec.method = to_string(cfg.credit.method);
    rec.mean_reward = reward_sum / n_rollouts;
    rec.em_rate = em_sum / n_rollouts;
    rec.mean_turns = turns_sum / n_rollouts;
    const DistributionStats stats = advantage_distribution_stats(batches);
    rec.adv_min = stats.adv_min;
    rec.adv_max = stats.adv_max;
    rec.adv_mean = stats.adv_mean;
    rec.max_abs_process_adv = stats.max_abs_process_adv;
    rec.per_position_adv_mean = position_vector(stats, spec.max_turns, /*ig=*/false);
    rec.per_position_ig_mean = position_vector(stats, spec.max_turns, /*ig=*/true);
    std::vector<ActionKey> visited_keys(visited.begin(), visited.end());
    rec.entropy = policy_entropy(params, visited_keys);

    // Stage 4: one pass of prompt-level mini-batches.
    RngStream shuffle_rng(derive_seed(step_seed, "shuffle"));
    std::vector<std::size_t> order(chosen.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    const ParamLayout layout = params.layout();
    const int n_chunks = cfg.prompts_per_step / cfg.mini_batch_prompts;
    double loss_sum = 0.0;
    long clip_hits = 0;
    long clip_turns = 0;
    for (int c = 0; c < n_chunks; ++c) {
      std::vector<LossInput> inputs;
      for (int k = 0; k < cfg.mini_batch_prompts; ++k) {
        const std::size_t p = order[c * cfg.mini_batch_prompts + k];
        inputs.push_back(LossInput{&groups[p], &tasks[chosen[p]], &batches[p]});
      }
      LossGrad lg = loss_and_grad(inputs, cfg.clip, params, layout);
      loss_sum += lg.loss;
      clip_hits += lg.turns_clipped;
      clip_turns += lg.turns_total;

      if (cfg.momentum > 0.0) {
        // v = momentum * v + g; theta -= lr * v, row-keyed so the buffers
        // survive table growth across steps.
        for (const auto& [key, off] : layout.action_offsets) {
          auto& v = vel_action.try_emplace(key, std::vector<double>(layout.action_row_size, 0.0))
                        .first->second;
          for (int j = 0; j < layout.action_row_size; ++j) {
            v[j] = cfg.momentum * v[j] + lg.grad[off + j];
            lg.grad[off + j] = v[j];
          }
        }
        for (const auto& [key, off] : layout.answer_offsets) {
          auto& v = vel_answer.try_emplace(key, std::vector<double>(layout.answer_row_size, 0.0))
                        .first->second;
          for (int j = 0; j < layout.answer_row_size; ++j) {
            v[j] = cfg.momentum * v[j] + lg.grad[off + j];
            lg.grad[off + j] = v[j];
          }
        }
      }
      params.apply_gradient_step(layout, lg.grad, cfg.learning_rate);
    }
    rec.loss = loss_sum / static_cast<double>(n_chunks);
    rec.clip_rate = clip_turns > 0 ? static_cast<double>(clip_hits) / clip_turns : 0.0;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            t_start)
                      .count();
    result.metrics.push_back(std::move(rec));
  }
  return result;
}

}  // namespace a2tgpo
