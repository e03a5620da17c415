#include "a2tgpo/core_types.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace a2tgpo {

using json = nlohmann::json;

ParseError::ParseError(std::string msg, std::size_t offset)
    : message("parse error at byte " + std::to_string(offset) + ": " + std::move(msg)),
      byte_offset(offset) {}

std::vector<std::string> validate_rollout_group(const RolloutGroup& group) {
  std::vector<std::string> out;
  auto fail = [&out](const std::string& msg) { out.push_back(msg); };

  if (group.query_id.empty()) fail("group: empty query_id");
  if (group.rollouts.empty()) fail("group: G == 0 (need at least one rollout)");

  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const Rollout& r = group.rollouts[i];
    const std::string tag = "rollout " + std::to_string(i);
    if (r.query_id != group.query_id)
      fail(tag + ": query_id mismatch ('" + r.query_id + "' vs group '" + group.query_id + "')");
    if (r.turns.empty()) {
      fail(tag + ": T == 0 (need at least one turn)");
      continue;
    }
    if (!std::isfinite(r.outcome_reward)) fail(tag + ": non-finite outcome_reward");
    int finals = 0;
    for (std::size_t k = 0; k < r.turns.size(); ++k) {
      const Turn& t = r.turns[k];
      const std::string ttag = tag + " turn " + std::to_string(t.index);
      if (t.index != static_cast<int>(k) + 1)
        fail(tag + ": turn index " + std::to_string(t.index) + " at position " +
             std::to_string(k + 1) + " (indices must run 1..T with no gaps)");
      if (t.is_final) ++finals;
      if (t.is_final && t.observation.has_value())
        fail(ttag + ": final turn carries an observation");
      if (t.generated_tokens.size() != t.token_logprobs_old.size())
        fail(ttag + ": token/logprob length mismatch (" +
             std::to_string(t.generated_tokens.size()) + " vs " +
             std::to_string(t.token_logprobs_old.size()) + ")");
      for (double lp : t.token_logprobs_old) {
        if (!(lp <= 0.0)) {  // also catches NaN
          fail(ttag + ": logprob > 0 (" + std::to_string(lp) + ")");
          break;
        }
      }
    }
    if (finals != 1)
      fail(tag + ": " + std::to_string(finals) + " final turns (need exactly one)");
    else if (!r.turns.back().is_final)
      fail(tag + ": final turn is not the last turn");
    if (r.final_prediction.has_value() && r.final_prediction->tokens.empty())
      fail(tag + ": empty final_prediction (answer length must be >= 1)");
  }
  return out;
}

namespace {

json turn_to_json(const Turn& t) {
  json j;
  j["record"] = "turn";
  j["index"] = t.index;
  j["generated"] = t.generated_tokens;
  j["logprobs"] = t.token_logprobs_old;
  j["is_final"] = t.is_final;
  if (t.observation.has_value())
    j["observation"] = *t.observation;
  else
    j["observation"] = nullptr;
  return j;
}

Turn turn_from_json(const json& j) {
  Turn t;
  t.index = j.at("index").get<int>();
  t.generated_tokens = j.at("generated").get<std::vector<int>>();
  t.token_logprobs_old = j.at("logprobs").get<std::vector<double>>();
  t.is_final = j.at("is_final").get<bool>();
  if (!j.at("observation").is_null())
    t.observation = j.at("observation").get<std::vector<int>>();
  return t;
}

}  // namespace

std::string serialize_rollout_group(const RolloutGroup& group) {
  std::ostringstream out;
  json header;
  header["record"] = "group";
  header["query_id"] = group.query_id;
  header["G"] = group.size();
  out << header.dump() << '\n';
  for (const Rollout& r : group.rollouts) {
    json jr;
    jr["record"] = "rollout";
    jr["query_id"] = r.query_id;
    jr["T"] = r.total_turns();
    jr["outcome_reward"] = r.outcome_reward;
    if (r.final_prediction.has_value())
      jr["final_prediction"] = r.final_prediction->tokens;
    else
      jr["final_prediction"] = nullptr;
    out << jr.dump() << '\n';
    for (const Turn& t : r.turns) out << turn_to_json(t).dump() << '\n';
  }
  return out.str();
}

RolloutGroup deserialize_rollout_group(const std::string& bytes) {
  RolloutGroup group;
  std::size_t pos = 0;
  std::size_t line_start = 0;

  auto next_line = [&](json& j) -> bool {
    while (pos < bytes.size()) {
      line_start = pos;
      std::size_t end = bytes.find('\n', pos);
      if (end == std::string::npos) end = bytes.size();
      std::string line = bytes.substr(pos, end - pos);
      pos = end < bytes.size() ? end + 1 : end;
      if (line.empty()) continue;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(e.what(), line_start + (e.byte > 0 ? e.byte - 1 : 0));
      }
      return true;
    }
    return false;
  };

  json j;
  if (!next_line(j)) throw ParseError("empty input, expected group header", 0);
  try {
    if (j.at("record") != "group") throw ParseError("expected group header record", line_start);
    group.query_id = j.at("query_id").get<std::string>();
    const int g = j.at("G").get<int>();
    if (g < 1) throw ParseError("group has G < 1", line_start);
    for (int i = 0; i < g; ++i) {
      if (!next_line(j))
        throw ParseError("truncated stream: expected rollout " + std::to_string(i), bytes.size());
      if (j.at("record") != "rollout") throw ParseError("expected rollout record", line_start);
      Rollout r;
      r.query_id = j.at("query_id").get<std::string>();
      r.outcome_reward = j.at("outcome_reward").get<double>();
      if (!j.at("final_prediction").is_null())
        r.final_prediction = AnswerTokens{j.at("final_prediction").get<std::vector<int>>()};
      const int turn_count = j.at("T").get<int>();
      if (turn_count < 1) throw ParseError("rollout has T < 1", line_start);
      for (int t = 0; t < turn_count; ++t) {
        if (!next_line(j))
          throw ParseError("truncated stream: expected turn " + std::to_string(t + 1),
                           bytes.size());
        if (j.at("record") != "turn") throw ParseError("expected turn record", line_start);
        r.turns.push_back(turn_from_json(j));
      }
      group.rollouts.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ParseError(e.what(), line_start);
  }

  auto violations = validate_rollout_group(group);
  if (!violations.empty())
    throw ParseError("deserialized group violates invariants: " + violations.front(), 0);
  return group;
}

}  // namespace a2tgpo
