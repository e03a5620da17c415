#pragma once

#include <cstdint>
#include <span>

#include "a2tgpo/credit.hpp"
#include "a2tgpo/metrics.hpp"
#include "a2tgpo/toy_env.hpp"

namespace a2tgpo {

// Base asymmetric clipping bounds plus the IG-adaptive scale strength.
struct ClipSpec {
  double eps_low = 3e-3;
  double eps_high = 4e-3;
  double beta = 0.3;
  bool adaptive = true;

  void validate() const;
};

struct TrainConfig {
  int group_size = 16;       // G rollouts per prompt
  int prompts_per_step = 8;  // batch
  int mini_batch_prompts = 2;
  double learning_rate = 0.5;
  double momentum = 0.0;
  int total_steps = 300;
  std::uint64_t seed = 7;
  int num_tasks = 16;  // training prompt pool size
  CreditConfig credit;
  ClipSpec clip;

  void validate() const;
};

// Length-normalized geometric mean of the per-token new/old probability
// ratios within a turn: exp((1/|y|) sum_k (log pi_new - log pi_old)).
// Throws std::invalid_argument on an empty turn.
double turn_ratio(PolicyParams& params_new, const Query& query, const TurnContext& ctx,
                  const Turn& turn);

// Sigmoid-gated clip-range multiplier: c = 1 + beta * (2 sigma(ig^) - 1),
// strictly increasing in ig^ and bounded in (1 - beta, 1 + beta).
double clip_scale(double normalized_ig, double beta);

// Fills TurnCredit::clip_scale for every turn. Final turns have no IG and use
// the neutral scale c(0) = 1; adaptive=false forces c = 1 everywhere.
void annotate_clip_scales(AdvantageBatch& batch, const ClipSpec& clip);

struct LossInput {
  const RolloutGroup* group = nullptr;
  const Query* query = nullptr;
  const AdvantageBatch* advantages = nullptr;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
  int turns_total = 0;
  int turns_clipped = 0;  // min() selected the clipped-constant branch
};

// Clipped turn-level policy loss over a mini-batch of prompts and its exact
// gradient in the layout's flat ordering. Advantages, normalized IG and clip
// scales are consumed as frozen constants; the gradient flows only through
// the turn ratios of unclipped turns (ties at the boundary take the unclipped
// subgradient). Throws std::runtime_error on non-finite intermediates.
LossGrad loss_and_grad(std::span<const LossInput> inputs, const ClipSpec& clip,
                       PolicyParams& params, const ParamLayout& layout);

struct TrainResult {
  PolicyParams params;
  std::vector<MetricsRecord> metrics;
};

// Full training loop: per step, sample prompts, roll out G trajectories per
// prompt under the frozen pre-step policy, compute rewards, the IG table and
// advantages, then run one pass of mini-batch gradient descent on the clipped
// loss. Deterministic given (cfg.seed, spec).
TrainResult train(const TrainConfig& cfg, const EnvSpec& spec);

}  // namespace a2tgpo
