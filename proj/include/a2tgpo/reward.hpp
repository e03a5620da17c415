#pragma once

#include <optional>
#include <span>

#include "a2tgpo/core_types.hpp"

namespace a2tgpo {

// Reserved marker token ids for the response schema. Configured per
// environment; ids must be distinct and outside the answer vocabulary.
struct FormatSchema {
  int think_open = 0;
  int think_close = 0;
  int answer_open = 0;
  int answer_close = 0;
  int box_open = 0;
  int box_close = 0;

  bool operator==(const FormatSchema&) const = default;
};

struct FormattedResponse {
  std::vector<int> raw;
  bool has_think_block = false;
  bool has_answer_block = false;
  std::optional<AnswerTokens> boxed_payload;
};

// Exact structural parse of a token sequence against the schema. No recovery
// heuristics: a block exists iff its open marker is later followed by its
// close marker; the payload comes from the first answer block that contains a
// well-formed, non-empty box whose tokens are all inside the answer
// vocabulary [0, vocab_size).
FormattedResponse parse_format(std::span<const int> raw, const FormatSchema& schema,
                               int vocab_size);

// 1 iff the sequences are identical (length and every token).
int exact_match(const AnswerTokens& prediction, const AnswerTokens& target);

// -1 on any format violation (missing block or missing payload), else the
// exact-match score in {0, 1}.
double composite_reward(const FormattedResponse& response, const AnswerTokens& target);

}  // namespace a2tgpo
