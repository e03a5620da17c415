#include "a2tgpo/harness.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "a2tgpo/ig_signal.hpp"

namespace a2tgpo {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open file for writing: " + path);
  os << content;
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string metrics_header_line(const std::string& method) {
  json j;
  j["record"] = "header";
  j["schema"] = "a2tgpo.metrics.v1";
  j["method"] = method;
  return j.dump();
}

std::string metrics_record_line(const MetricsRecord& rec) {
  json j;
  j["record"] = "step";
  j["step"] = rec.step;
  j["method"] = rec.method;
  j["mean_reward"] = rec.mean_reward;
  j["em_rate"] = rec.em_rate;
  j["loss"] = rec.loss;
  j["entropy"] = rec.entropy;
  j["adv_min"] = rec.adv_min;
  j["adv_max"] = rec.adv_max;
  j["adv_mean"] = rec.adv_mean;
  auto opt_array = [](const std::vector<std::optional<double>>& v) {
    json arr = json::array();
    for (const auto& x : v) {
      if (x.has_value())
        arr.push_back(*x);
      else
        arr.push_back(nullptr);
    }
    return arr;
  };
  j["per_position_adv_mean"] = opt_array(rec.per_position_adv_mean);
  j["per_position_ig_mean"] = opt_array(rec.per_position_ig_mean);
  j["mean_turns"] = rec.mean_turns;
  j["clip_rate"] = rec.clip_rate;
  j["max_abs_process_adv"] = rec.max_abs_process_adv;
  return j.dump();
}

std::vector<MetricsRecord> parse_metrics_log(const std::string& bytes) {
  std::vector<MetricsRecord> out;
  std::istringstream in(bytes);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.at("record") != "step") continue;
    MetricsRecord rec;
    rec.step = j.at("step").get<int>();
    rec.method = j.at("method").get<std::string>();
    rec.mean_reward = j.at("mean_reward").get<double>();
    rec.em_rate = j.at("em_rate").get<double>();
    rec.loss = j.at("loss").get<double>();
    rec.entropy = j.at("entropy").get<double>();
    rec.adv_min = j.at("adv_min").get<double>();
    rec.adv_max = j.at("adv_max").get<double>();
    rec.adv_mean = j.at("adv_mean").get<double>();
    auto opt_array = [](const json& arr) {
      std::vector<std::optional<double>> v;
      for (const auto& x : arr) {
        if (x.is_null())
          v.push_back(std::nullopt);
        else
          v.push_back(x.get<double>());
      }
      return v;
    };
    rec.per_position_adv_mean = opt_array(j.at("per_position_adv_mean"));
    rec.per_position_ig_mean = opt_array(j.at("per_position_ig_mean"));
    rec.mean_turns = j.at("mean_turns").get<double>();
    rec.clip_rate = j.at("clip_rate").get<double>();
    rec.max_abs_process_adv = j.at("max_abs_process_adv").get<double>();
    out.push_back(std::move(rec));
  }
  return out;
}

double final_window_em(const std::vector<MetricsRecord>& metrics, int window) {
  if (metrics.empty()) return 0.0;
  const std::size_t n = std::min<std::size_t>(window, metrics.size());
  double sum = 0.0;
  for (std::size_t i = metrics.size() - n; i < metrics.size(); ++i) sum += metrics[i].em_rate;
  return sum / static_cast<double>(n);
}

RunPaths run_train(const ExperimentConfig& cfg, const std::string& method_name,
                   std::ostream* progress) {
  cfg.validate();
  const MethodVariant variant =
      resolve_method_variant(method_name, cfg.train.credit, cfg.train.clip);
  TrainConfig tc = cfg.train;
  tc.credit = variant.credit;
  tc.clip = variant.clip;

  fs::create_directories(cfg.output_dir);
  RunPaths paths;
  paths.metrics = (fs::path(cfg.output_dir) / ("metrics_" + variant.name + ".jsonl")).string();
  paths.checkpoint = (fs::path(cfg.output_dir) / ("policy_" + variant.name + ".ckpt")).string();
  paths.effective_config =
      (fs::path(cfg.output_dir) / ("config_" + variant.name + ".json")).string();

  ExperimentConfig effective = cfg;
  effective.train = tc;
  write_file(paths.effective_config, dump_config(effective));

  TrainResult result = train(tc, cfg.env);

  std::ostringstream log;
  log << metrics_header_line(variant.name) << '\n';
  for (const MetricsRecord& rec : result.metrics) {
    MetricsRecord named = rec;
    named.method = variant.name;  // variant names distinguish ablations in dumps
    log << metrics_record_line(named) << '\n';
    if (progress && (rec.step % 50 == 0 || rec.step == 1)) {
      *progress << variant.name << " step " << rec.step << ": em=" << std::setprecision(3)
                << rec.em_rate << " reward=" << rec.mean_reward << " entropy=" << rec.entropy
                << " (" << std::setprecision(4) << rec.wall_ms << " ms)\n";
    }
  }
  write_file(paths.metrics, log.str());
  result.params.save_checkpoint(paths.checkpoint);
  return paths;
}

std::string run_compare(const ExperimentConfig& cfg, std::ostream* progress) {
  cfg.validate();
  json summary;
  summary["record"] = "compare_summary";
  json per_method = json::object();
  for (const std::string& name : cfg.methods) {
    const RunPaths paths = run_train(cfg, name, progress);
    const auto metrics = parse_metrics_log(read_file(paths.metrics));
    json m;
    m["final_window_em"] = final_window_em(metrics, 50);
    m["final_window_reward"] =
        [&] {
          if (metrics.empty()) return 0.0;
          const std::size_t n = std::min<std::size_t>(50, metrics.size());
          double s = 0.0;
          for (std::size_t i = metrics.size() - n; i < metrics.size(); ++i)
            s += metrics[i].mean_reward;
          return s / static_cast<double>(n);
        }();
    m["steps"] = metrics.size();
    m["metrics_file"] = fs::path(paths.metrics).filename().string();
    per_method[name] = m;
  }
  summary["methods"] = per_method;
  const std::string path = (fs::path(cfg.output_dir) / "summary.json").string();
  write_file(path, summary.dump(2) + "\n");
  return path;
}

bool run_verify_theory(const ExperimentConfig& cfg, std::ostream& table_out) {
  cfg.validate();
  bool all_pass = true;
  std::ostringstream records;

  auto report = [&](const std::string& experiment, const std::string& label, double empirical,
                    double analytic, double se) {
    // 3-SE acceptance band with an absolute floor for exact-zero identities.
    const double band = std::max(3.0 * se, 1e-12);
    const bool pass = std::abs(empirical - analytic) <= band;
    all_pass = all_pass && pass;
    table_out << std::left << std::setw(12) << experiment << std::setw(18) << label
              << std::setprecision(10) << "empirical=" << std::setw(16) << empirical
              << "analytic=" << std::setw(16) << analytic << "se=" << std::setw(14) << se
              << (pass ? "PASS" : "FAIL") << '\n';
    json j;
    j["record"] = "theory";
    j["experiment"] = experiment;
    j["label"] = label;
    j["empirical"] = empirical;
    j["analytic"] = analytic;
    j["se"] = se;
    j["pass"] = pass;
    records << j.dump() << '\n';
  };

  // Pooled positional bias vs turn-group normalization on the same data.
  HeteroIgModel pooled_model;
  for (double mu : cfg.theory.pooled_means)
    pooled_model.positions.push_back(
        PositionModel{mu, cfg.theory.pooled_sigma, cfg.theory.pooled_group_size});
  pooled_model.trials = cfg.theory.pooled_trials;
  pooled_model.seed = derive_seed(cfg.theory.seed, "pooled-bias");
  const auto bias_rows = pooled_bias_experiment(pooled_model);
  for (const PooledBiasRow& row : bias_rows) {
    report("pooled-bias", "pos " + std::to_string(row.position), row.empirical, row.analytic,
           row.standard_error);
    report("tg-norm", "pos " + std::to_string(row.position), row.tg_empirical, 0.0,
           row.tg_standard_error);
  }

  // Turn-group per-trial exact identities (includes a singleton position).
  HeteroIgModel tg_model;
  tg_model.positions = {PositionModel{0.5, 0.1, 8}, PositionModel{0.1, 0.1, 8},
                        PositionModel{0.3, 0.2, 1}};
  tg_model.trials = cfg.theory.tg_trials;
  tg_model.seed = derive_seed(cfg.theory.seed, "tg-identities");
  const TgUnbiasednessResult tg = tg_unbiasedness_experiment(tg_model);
  report("tg-exact", "max |mean|", tg.max_abs_mean, 0.0, 1e-12 / 3.0);
  report("tg-exact", "max |var-1|", tg.max_abs_var_minus_one, 0.0, 1e-10 / 3.0);
  report("tg-exact", "singleton", tg.max_abs_singleton, 0.0, 0.0);

  // Variance equalization under sqrt(n) rescaling.
  const int lengths[] = {1, 2, 4, 8, 16};
  CorrelatedRowModel iid_model;
  iid_model.rho = 0.0;
  iid_model.trials = cfg.theory.variance_trials;
  iid_model.seed = derive_seed(cfg.theory.seed, "var-eq-iid");
  for (const VarianceRow& row : variance_equalization_experiment(iid_model, lengths)) {
    report("var-eq", "rho=0 n=" + std::to_string(row.n), row.empirical_rescaled,
           row.analytic_rescaled, row.se_rescaled);
    if (row.n == 8)
      report("var-eq", "raw rho=0 n=8", row.empirical_unrescaled, row.analytic_unrescaled,
             row.se_unrescaled);
  }
  CorrelatedRowModel cor_model;
  cor_model.rho = cfg.theory.variance_rho;
  cor_model.trials = cfg.theory.variance_trials;
  cor_model.seed = derive_seed(cfg.theory.seed, "var-eq-cor");
  const int cor_lengths[] = {4};
  for (const VarianceRow& row : variance_equalization_experiment(cor_model, cor_lengths)) {
    report("var-eq", "rho=" + std::to_string(cor_model.rho).substr(0, 4) + " n=4",
           row.empirical_rescaled, row.analytic_rescaled, row.se_rescaled);
  }

  fs::create_directories(cfg.output_dir);
  write_file((fs::path(cfg.output_dir) / "theory.jsonl").string(), records.str());
  return all_pass;
}

std::string run_replay(const std::string& group_file, const std::string& ig_file,
                       const std::string& method_name, const ExperimentConfig& cfg) {
  const RolloutGroup group = deserialize_rollout_group(read_file(group_file));
  const IgTable ig = deserialize_ig_table(read_file(ig_file));
  if (ig.query_id != group.query_id)
    throw std::runtime_error("ig table query_id does not match rollout group");

  const MethodVariant variant =
      resolve_method_variant(method_name, cfg.train.credit, cfg.train.clip);
  AdvantageBatch batch = assemble_advantages(group, ig, variant.credit);
  annotate_clip_scales(batch, variant.clip);

  // Loss at theta == theta_old: every turn ratio is exactly 1, so the
  // objective reduces to the advantage-weighted token fractions.
  double loss = 0.0;
  const double inv_g = 1.0 / static_cast<double>(group.size());
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    std::size_t model_tokens = 0;
    for (const Turn& t : group.rollouts[i].turns) model_tokens += t.generated_tokens.size();
    for (std::size_t k = 0; k < group.rollouts[i].turns.size(); ++k) {
      const double tokens =
          static_cast<double>(group.rollouts[i].turns[k].generated_tokens.size());
      loss -= inv_g * (tokens / static_cast<double>(model_tokens)) *
              batch.rollouts[i][k].advantage;
    }
  }

  fs::create_directories(cfg.output_dir);
  const std::string out_path =
      (fs::path(cfg.output_dir) /
       (fs::path(group_file).stem().string() + ".adv_" + variant.name + ".jsonl"))
          .string();
  std::ostringstream out;
  out << serialize_advantage_batch(batch);
  json diag;
  diag["record"] = "replay_diag";
  diag["loss_at_theta_old"] = loss;
  const DistributionStats stats = advantage_distribution_stats({&batch, 1});
  diag["adv_min"] = stats.adv_min;
  diag["adv_max"] = stats.adv_max;
  diag["adv_mean"] = stats.adv_mean;
  out << diag.dump() << '\n';
  write_file(out_path, out.str());
  return out_path;
}

JaccardResult run_diag_similarity(const ExperimentConfig& cfg, const std::string& checkpoint,
                                  int num_prompts, std::ostream& out) {
  cfg.validate();
  PolicyParams params = checkpoint.empty()
                            ? PolicyParams(cfg.env)
                            : PolicyParams::load_checkpoint(checkpoint, cfg.env);
  std::vector<RolloutGroup> groups;
  for (int p = 0; p < num_prompts; ++p) {
    const Query query = generate_task(cfg.env, derive_seed(cfg.env.seed, "task", p));
    RolloutGroup group;
    group.query_id = query.id;
    for (int i = 0; i < cfg.train.group_size; ++i) {
      RngStream stream(derive_seed(cfg.train.seed, "diag-rollout", query.id, i));
      group.rollouts.push_back(rollout_episode(params, cfg.env, query, stream));
    }
    groups.push_back(std::move(group));
  }
  const JaccardResult result = jaccard_position_similarity(groups);
  out << "intra-position mean: " << result.intra_mean << " (" << result.intra_pairs
      << " pairs)\n";
  out << "cross-position mean: " << result.cross_mean << " (" << result.cross_pairs
      << " pairs)\n";
  for (std::size_t t = 0; t < result.per_position_intra.size(); ++t)
    if (result.per_position_intra[t] >= 0.0)
      out << "  turn " << (t + 1) << ": intra " << result.per_position_intra[t] << '\n';
  return result;
}

std::string metrics_to_long_csv(const std::string& metrics_text) {
  const auto records = parse_metrics_log(metrics_text);
  std::ostringstream out;
  out << "step,method,metric,value\n";
  auto emit = [&](int step, const std::string& method, const std::string& metric, double value) {
    out << step << ',' << method << ',' << metric << ',' << std::setprecision(17) << value
        << '\n';
  };
  for (const MetricsRecord& r : records) {
    emit(r.step, r.method, "mean_reward", r.mean_reward);
    emit(r.step, r.method, "em_rate", r.em_rate);
    emit(r.step, r.method, "loss", r.loss);
    emit(r.step, r.method, "entropy", r.entropy);
    emit(r.step, r.method, "adv_min", r.adv_min);
    emit(r.step, r.method, "adv_max", r.adv_max);
    emit(r.step, r.method, "adv_mean", r.adv_mean);
    emit(r.step, r.method, "mean_turns", r.mean_turns);
    emit(r.step, r.method, "clip_rate", r.clip_rate);
    emit(r.step, r.method, "max_abs_process_adv", r.max_abs_process_adv);
    for (std::size_t t = 0; t < r.per_position_adv_mean.size(); ++t)
      if (r.per_position_adv_mean[t].has_value())
        emit(r.step, r.method, "adv_mean_t" + std::to_string(t + 1),
             *r.per_position_adv_mean[t]);
    for (std::size_t t = 0; t < r.per_position_ig_mean.size(); ++t)
      if (r.per_position_ig_mean[t].has_value())
        emit(r.step, r.method, "ig_mean_t" + std::to_string(t + 1), *r.per_position_ig_mean[t]);
  }
  return out.str();
}

}  // namespace a2tgpo
