#include "a2tgpo/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace a2tgpo {

using json = nlohmann::json;

void ExperimentConfig::validate() const {
  try {
    env.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (methods.empty()) throw ConfigError("compare.methods must be non-empty");
  for (const std::string& m : methods)
    resolve_method_variant(m, train.credit, train.clip);  // throws on unknown names
  if (output_dir.empty()) throw ConfigError("output_dir must be non-empty");
  if (theory.pooled_trials < 1 || theory.tg_trials < 1 || theory.variance_trials < 1)
    throw ConfigError("theory trial counts must be >= 1");
  if (theory.pooled_group_size < 2) throw ConfigError("theory.pooled_group_size must be >= 2");
  if (theory.pooled_means.size() < 2)
    throw ConfigError("theory.pooled_means needs at least two positions");
}

namespace {

void reject_unknown_keys(const json& obj, const std::string& section,
                         const std::set<std::string>& known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) {
      const std::string path = section.empty() ? it.key() : section + "." + it.key();
      throw ConfigError("unknown config key: " + path);
    }
  }
}

template <typename T>
void read_field(const json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for " + section + "." + key + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be an object");

  ExperimentConfig cfg;
  reject_unknown_keys(root, "", {"env", "format_schema", "train", "credit", "clip", "theory",
                                 "output_dir", "compare"});

  if (root.contains("env")) {
    const json& e = root["env"];
    reject_unknown_keys(e, "env",
                        {"num_facts", "answer_length", "vocab_size", "max_turns", "noise_prob",
                         "seed", "evidence_boost"});
    read_field(e, "env", "num_facts", cfg.env.num_facts);
    read_field(e, "env", "answer_length", cfg.env.answer_length);
    read_field(e, "env", "vocab_size", cfg.env.vocab_size);
    read_field(e, "env", "max_turns", cfg.env.max_turns);
    read_field(e, "env", "noise_prob", cfg.env.noise_prob);
    read_field(e, "env", "seed", cfg.env.seed);
    read_field(e, "env", "evidence_boost", cfg.env.evidence_boost);
  }
  if (root.contains("format_schema")) {
    const json& f = root["format_schema"];
    reject_unknown_keys(f, "format_schema",
                        {"think_open", "think_close", "answer_open", "answer_close", "box_open",
                         "box_close"});
    FormatSchema s = cfg.env.default_schema();
    read_field(f, "format_schema", "think_open", s.think_open);
    read_field(f, "format_schema", "think_close", s.think_close);
    read_field(f, "format_schema", "answer_open", s.answer_open);
    read_field(f, "format_schema", "answer_close", s.answer_close);
    read_field(f, "format_schema", "box_open", s.box_open);
    read_field(f, "format_schema", "box_close", s.box_close);
    cfg.env.schema = s;
  }
  if (root.contains("train")) {
    const json& t = root["train"];
    reject_unknown_keys(t, "train",
                        {"group_size", "prompts_per_step", "mini_batch_prompts", "learning_rate",
                         "momentum", "total_steps", "seed", "num_tasks"});
    read_field(t, "train", "group_size", cfg.train.group_size);
    read_field(t, "train", "prompts_per_step", cfg.train.prompts_per_step);
    read_field(t, "train", "mini_batch_prompts", cfg.train.mini_batch_prompts);
    read_field(t, "train", "learning_rate", cfg.train.learning_rate);
    read_field(t, "train", "momentum", cfg.train.momentum);
    read_field(t, "train", "total_steps", cfg.train.total_steps);
    read_field(t, "train", "seed", cfg.train.seed);
    read_field(t, "train", "num_tasks", cfg.train.num_tasks);
  }
  if (root.contains("credit")) {
    const json& c = root["credit"];
    reject_unknown_keys(c, "credit", {"gamma", "method", "std_floor", "rescale"});
    read_field(c, "credit", "gamma", cfg.train.credit.gamma);
    read_field(c, "credit", "std_floor", cfg.train.credit.std_floor);
    read_field(c, "credit", "rescale", cfg.train.credit.rescale);
    if (c.contains("method")) {
      try {
        cfg.train.credit.method = credit_method_from_string(c.at("method").get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("credit.method: ") + e.what());
      }
    }
  }
  if (root.contains("clip")) {
    const json& c = root["clip"];
    reject_unknown_keys(c, "clip", {"eps_low", "eps_high", "beta", "adaptive"});
    read_field(c, "clip", "eps_low", cfg.train.clip.eps_low);
    read_field(c, "clip", "eps_high", cfg.train.clip.eps_high);
    read_field(c, "clip", "beta", cfg.train.clip.beta);
    read_field(c, "clip", "adaptive", cfg.train.clip.adaptive);
  }
  if (root.contains("theory")) {
    const json& t = root["theory"];
    reject_unknown_keys(t, "theory",
                        {"pooled_trials", "pooled_group_size", "pooled_means", "pooled_sigma",
                         "tg_trials", "variance_trials", "variance_rho", "seed"});
    read_field(t, "theory", "pooled_trials", cfg.theory.pooled_trials);
    read_field(t, "theory", "pooled_group_size", cfg.theory.pooled_group_size);
    read_field(t, "theory", "pooled_means", cfg.theory.pooled_means);
    read_field(t, "theory", "pooled_sigma", cfg.theory.pooled_sigma);
    read_field(t, "theory", "tg_trials", cfg.theory.tg_trials);
    read_field(t, "theory", "variance_trials", cfg.theory.variance_trials);
    read_field(t, "theory", "variance_rho", cfg.theory.variance_rho);
    read_field(t, "theory", "seed", cfg.theory.seed);
  }
  read_field(root, "", "output_dir", cfg.output_dir);
  if (root.contains("compare")) {
    const json& c = root["compare"];
    reject_unknown_keys(c, "compare", {"methods"});
    read_field(c, "compare", "methods", cfg.methods);
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
  json root;
  root["env"] = {{"num_facts", cfg.env.num_facts},
                 {"answer_length", cfg.env.answer_length},
                 {"vocab_size", cfg.env.vocab_size},
                 {"max_turns", cfg.env.max_turns},
                 {"noise_prob", cfg.env.noise_prob},
                 {"seed", cfg.env.seed},
                 {"evidence_boost", cfg.env.evidence_boost}};
  const FormatSchema s = cfg.env.effective_schema();
  root["format_schema"] = {{"think_open", s.think_open},   {"think_close", s.think_close},
                           {"answer_open", s.answer_open}, {"answer_close", s.answer_close},
                           {"box_open", s.box_open},       {"box_close", s.box_close}};
  root["train"] = {{"group_size", cfg.train.group_size},
                   {"prompts_per_step", cfg.train.prompts_per_step},
                   {"mini_batch_prompts", cfg.train.mini_batch_prompts},
                   {"learning_rate", cfg.train.learning_rate},
                   {"momentum", cfg.train.momentum},
                   {"total_steps", cfg.train.total_steps},
                   {"seed", cfg.train.seed},
                   {"num_tasks", cfg.train.num_tasks}};
  root["credit"] = {{"gamma", cfg.train.credit.gamma},
                    {"method", to_string(cfg.train.credit.method)},
                    {"std_floor", cfg.train.credit.std_floor},
                    {"rescale", cfg.train.credit.rescale}};
  root["clip"] = {{"eps_low", cfg.train.clip.eps_low},
                  {"eps_high", cfg.train.clip.eps_high},
                  {"beta", cfg.train.clip.beta},
                  {"adaptive", cfg.train.clip.adaptive}};
  root["theory"] = {{"pooled_trials", cfg.theory.pooled_trials},
                    {"pooled_group_size", cfg.theory.pooled_group_size},
                    {"pooled_means", cfg.theory.pooled_means},
                    {"pooled_sigma", cfg.theory.pooled_sigma},
                    {"tg_trials", cfg.theory.tg_trials},
                    {"variance_trials", cfg.theory.variance_trials},
                    {"variance_rho", cfg.theory.variance_rho},
                    {"seed", cfg.theory.seed}};
  root["output_dir"] = cfg.output_dir;
  root["compare"] = {{"methods", cfg.methods}};
  return root.dump(2) + "\n";
}

MethodVariant resolve_method_variant(const std::string& name, const CreditConfig& base_credit,
                                     const ClipSpec& base_clip) {
  MethodVariant v;
  v.name = name;
  v.credit = base_credit;
  v.clip = base_clip;
  if (name == "GRPO") {
    v.credit.method = CreditMethod::GRPO;
  } else if (name == "IGPO_POOLED") {
    v.credit.method = CreditMethod::IGPO_POOLED;
  } else if (name == "A2TGPO") {
    v.credit.method = CreditMethod::A2TGPO;
  } else if (name == "A2TGPO_NO_RESCALE") {
    v.credit.method = CreditMethod::A2TGPO;
    v.credit.rescale = false;
  } else if (name == "A2TGPO_FIXED_CLIP") {
    v.credit.method = CreditMethod::A2TGPO;
    v.clip.adaptive = false;
  } else {
    throw ConfigError("unknown method: " + name +
                      " (known: GRPO, IGPO_POOLED, A2TGPO, A2TGPO_NO_RESCALE, A2TGPO_FIXED_CLIP)");
  }
  return v;
}

}  // namespace a2tgpo
