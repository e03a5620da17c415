#include "a2tgpo/ig_signal.hpp"

#include <sstream>

#include "json.hpp"

namespace a2tgpo {

using json = nlohmann::json;

IgTable compute_ig_table(const RolloutGroup& group, PolicyParams& params, const Query& query) {
  const EnvSpec& spec = params.spec();
  IgTable table;
  table.query_id = group.query_id;

  EvidenceState initial;
  table.baseline_prob = answer_conditional_prob(params, query, initial, query.target_answer);

  for (const Rollout& rollout : group.rollouts) {
    const std::vector<TurnContext> contexts = reconstruct_contexts(spec, query, rollout);
    std::vector<double> row;
    double prev = table.baseline_prob;
    // The prefix state after turn t is the context the next turn starts in;
    // for the last process turn it is the final turn's state.
    for (std::size_t k = 0; k + 1 < contexts.size(); ++k) {
      const EvidenceState& after = contexts[k + 1].before;
      const double cur = answer_conditional_prob(params, query, after, query.target_answer);
      row.push_back(cur - prev);
      prev = cur;
    }
    table.final_prefix_prob.push_back(prev);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string serialize_ig_table(const IgTable& table) {
  std::ostringstream out;
  json header;
  header["record"] = "ig_header";
  header["query_id"] = table.query_id;
  header["baseline_prob"] = table.baseline_prob;
  header["rollouts"] = table.rows.size();
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    json jr;
    jr["record"] = "ig_row";
    jr["i"] = i;
    jr["igs"] = table.rows[i];
    jr["final_prefix_prob"] = table.final_prefix_prob[i];
    out << jr.dump() << '\n';
  }
  return out.str();
}

IgTable deserialize_ig_table(const std::string& bytes) {
  IgTable table;
  std::istringstream in(bytes);
  std::string line;
  std::size_t offset = 0;
  bool have_header = false;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      if (!have_header) {
        if (j.at("record") != "ig_header")
          throw ParseError("expected ig_header record", line_start);
        table.query_id = j.at("query_id").get<std::string>();
        table.baseline_prob = j.at("baseline_prob").get<double>();
        expected = j.at("rollouts").get<std::size_t>();
        have_header = true;
        continue;
      }
      if (j.at("record") != "ig_row") throw ParseError("expected ig_row record", line_start);
      table.rows.push_back(j.at("igs").get<std::vector<double>>());
      table.final_prefix_prob.push_back(j.at("final_prefix_prob").get<double>());
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_start);
    }
  }
  if (!have_header) throw ParseError("empty ig table", 0);
  if (table.rows.size() != expected)
    throw ParseError("truncated ig table: expected " + std::to_string(expected) + " rows, got " +
                         std::to_string(table.rows.size()),
                     offset);
  return table;
}

}  // namespace a2tgpo
