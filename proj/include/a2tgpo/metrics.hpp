#pragma once

#include <optional>
#include <string>
#include <vector>

namespace a2tgpo {

// One training-step row of the metrics log. Wall time is console-only
// diagnostics: the persisted log must be byte-identical across seeded runs,
// so it never reaches the file (see harness).
struct MetricsRecord {
  int step = 0;
  std::string method;
  double mean_reward = 0.0;
  double em_rate = 0.0;
  double loss = 0.0;
  double entropy = 0.0;
  double adv_min = 0.0;
  double adv_max = 0.0;
  double adv_mean = 0.0;
  std::vector<std::optional<double>> per_position_adv_mean;
  std::vector<std::optional<double>> per_position_ig_mean;
  double mean_turns = 0.0;
  double clip_rate = 0.0;
  double max_abs_process_adv = 0.0;
  double wall_ms = 0.0;
};

// Stable line-delimited encoding (schema header + one record per line).
std::string metrics_header_line(const std::string& method);
std::string metrics_record_line(const MetricsRecord& rec);
std::vector<MetricsRecord> parse_metrics_log(const std::string& bytes);

}  // namespace a2tgpo
