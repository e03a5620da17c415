#include "a2tgpo/reward.hpp"

#include <algorithm>

namespace a2tgpo {

namespace {

// First index of `token` in [from, raw.size()), or npos.
std::size_t find_token(std::span<const int> raw, int token, std::size_t from) {
  for (std::size_t i = from; i < raw.size(); ++i)
    if (raw[i] == token) return i;
  return std::string::npos;
}

}  // namespace

FormattedResponse parse_format(std::span<const int> raw, const FormatSchema& schema,
                               int vocab_size) {
  FormattedResponse resp;
  resp.raw.assign(raw.begin(), raw.end());

  const std::size_t think_open = find_token(raw, schema.think_open, 0);
  if (think_open != std::string::npos &&
      find_token(raw, schema.think_close, think_open + 1) != std::string::npos)
    resp.has_think_block = true;

  // Scan answer blocks in order; the first one with a well-formed box wins.
  std::size_t cursor = 0;
  while (true) {
    const std::size_t open = find_token(raw, schema.answer_open, cursor);
    if (open == std::string::npos) break;
    const std::size_t close = find_token(raw, schema.answer_close, open + 1);
    if (close == std::string::npos) break;
    resp.has_answer_block = true;
    if (!resp.boxed_payload.has_value()) {
      const std::size_t box_open = find_token(raw, schema.box_open, open + 1);
      if (box_open != std::string::npos && box_open < close) {
        const std::size_t box_close = find_token(raw, schema.box_close, box_open + 1);
        if (box_close != std::string::npos && box_close < close && box_close > box_open + 1) {
          std::vector<int> payload(raw.begin() + box_open + 1, raw.begin() + box_close);
          const bool in_vocab = std::all_of(payload.begin(), payload.end(), [&](int t) {
            return t >= 0 && t < vocab_size;
          });
          if (in_vocab) resp.boxed_payload = AnswerTokens{std::move(payload)};
        }
      }
    }
    cursor = close + 1;
  }
  return resp;
}

int exact_match(const AnswerTokens& prediction, const AnswerTokens& target) {
  return prediction.tokens == target.tokens ? 1 : 0;
}

double composite_reward(const FormattedResponse& response, const AnswerTokens& target) {
  const bool format_ok =
      response.has_think_block && response.has_answer_block && response.boxed_payload.has_value();
  if (!format_ok) return -1.0;
  return static_cast<double>(exact_match(*response.boxed_payload, target));
}

}  // namespace a2tgpo
