#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "a2tgpo/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitVerification = 2;
constexpr int kExitIo = 3;

a2tgpo::ExperimentConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) return a2tgpo::ExperimentConfig{};
  return a2tgpo::load_config(config_path);
}

void apply_output_dir_override(a2tgpo::ExperimentConfig& cfg, const std::string& cli_out) {
  if (!cli_out.empty()) {
    cfg.output_dir = cli_out;
    return;
  }
  // Environment override applies to output_dir only.
  if (const char* env_out = std::getenv("A2TGPO_OUTPUT_DIR"); env_out && *env_out)
    cfg.output_dir = env_out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Turn-group policy optimization on a synthetic multi-turn tool-use environment"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string method = "A2TGPO";
  int steps = -1;
  long long seed = -1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--out", out_dir, "output directory (overrides config)");
  };

  CLI::App* cmd_train = app.add_subcommand("train", "run one training configuration");
  add_common(cmd_train);
  cmd_train->add_option("--method", method, "credit method or ablation variant");
  cmd_train->add_option("--steps", steps, "override train.total_steps");
  cmd_train->add_option("--seed", seed, "override train.seed");

  CLI::App* cmd_compare =
      app.add_subcommand("compare", "run every configured method under identical seeds");
  add_common(cmd_compare);
  cmd_compare->add_option("--steps", steps, "override train.total_steps");
  cmd_compare->add_option("--seed", seed, "override train.seed");

  CLI::App* cmd_theory = app.add_subcommand("verify-theory", "Monte Carlo estimator checks");
  add_common(cmd_theory);

  std::string group_file, ig_file;
  CLI::App* cmd_replay =
      app.add_subcommand("replay", "recompute advantages from stored rollouts and IG");
  add_common(cmd_replay);
  cmd_replay->add_option("--group", group_file, "rollout group file")->required();
  cmd_replay->add_option("--ig", ig_file, "IG table dump (default: <group>.ig.jsonl)");
  cmd_replay->add_option("--method", method, "credit method or ablation variant");

  std::string checkpoint;
  int diag_prompts = 4;
  CLI::App* cmd_diag =
      app.add_subcommand("diag-similarity", "intra- vs cross-position content similarity");
  add_common(cmd_diag);
  cmd_diag->add_option("--checkpoint", checkpoint, "policy checkpoint to load");
  cmd_diag->add_option("--prompts", diag_prompts, "number of prompts to sample");

  std::string metrics_file, csv_out;
  CLI::App* cmd_plot = app.add_subcommand("plot-data", "reshape a metrics log to long-form CSV");
  cmd_plot->add_option("--metrics", metrics_file, "metrics .jsonl file")->required();
  cmd_plot->add_option("--csv", csv_out, "output CSV path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    a2tgpo::ExperimentConfig cfg = load_or_default(config_path);
    apply_output_dir_override(cfg, out_dir);
    if (steps >= 0) cfg.train.total_steps = steps;
    if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);

    if (cmd_train->parsed()) {
      const a2tgpo::RunPaths paths = a2tgpo::run_train(cfg, method, &std::cerr);
      std::cout << "metrics: " << paths.metrics << "\ncheckpoint: " << paths.checkpoint << '\n';
      return kExitOk;
    }
    if (cmd_compare->parsed()) {
      const std::string summary = a2tgpo::run_compare(cfg, &std::cerr);
      std::cout << "summary: " << summary << '\n';
      return kExitOk;
    }
    if (cmd_theory->parsed()) {
      const bool ok = a2tgpo::run_verify_theory(cfg, std::cout);
      return ok ? kExitOk : kExitVerification;
    }
    if (cmd_replay->parsed()) {
      if (ig_file.empty()) {
        std::filesystem::path p(group_file);
        p.replace_extension();
        ig_file = p.string() + ".ig.jsonl";
      }
      const std::string out = a2tgpo::run_replay(group_file, ig_file, method, cfg);
      std::cout << "advantage dump: " << out << '\n';
      return kExitOk;
    }
    if (cmd_diag->parsed()) {
      a2tgpo::run_diag_similarity(cfg, checkpoint, diag_prompts, std::cout);
      return kExitOk;
    }
    if (cmd_plot->parsed()) {
      const std::string csv = a2tgpo::metrics_to_long_csv(a2tgpo::read_file(metrics_file));
      if (csv_out.empty())
        std::cout << csv;
      else
        a2tgpo::write_file(csv_out, csv);
      return kExitOk;
    }
  } catch (const a2tgpo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const a2tgpo::ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitOk;
}
