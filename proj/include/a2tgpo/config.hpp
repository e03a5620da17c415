#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "a2tgpo/optimizer.hpp"
#include "a2tgpo/theory_lab.hpp"
#include "a2tgpo/toy_env.hpp"

namespace a2tgpo {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TheoryConfig {
  std::int64_t pooled_trials = 100000;
  int pooled_group_size = 16384;
  std::vector<double> pooled_means = {0.5, 0.1};
  double pooled_sigma = 0.1;
  std::int64_t tg_trials = 2000;
  std::int64_t variance_trials = 200000;
  double variance_rho = 0.2;
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  EnvSpec env;
  TrainConfig train;
  TheoryConfig theory;
  std::string output_dir = "out";
  std::vector<std::string> methods = {"GRPO", "IGPO_POOLED", "A2TGPO"};  // for `compare`

  void validate() const;
};

// Strict key-value configuration: JSON file with nested sections (env, train,
// credit, clip, format_schema, theory, compare). Every key is checked against
// the schema; unknown keys are hard errors naming the key path. A missing
// file or violated invariant raises ConfigError.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Effective-config dump; reloading the dump yields an equal config.
std::string dump_config(const ExperimentConfig& cfg);

// Known method names for `compare`. Variants map onto (credit, clip) knobs:
// A2TGPO_NO_RESCALE disables the sqrt(n) divisor, A2TGPO_FIXED_CLIP disables
// adaptive clipping.
struct MethodVariant {
  std::string name;
  CreditConfig credit;
  ClipSpec clip;
};
MethodVariant resolve_method_variant(const std::string& name, const CreditConfig& base_credit,
                                     const ClipSpec& base_clip);

}  // namespace a2tgpo
