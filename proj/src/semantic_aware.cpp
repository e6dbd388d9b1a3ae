#include "vcap/semantic_aware.hpp"

#include <string>

#include "vcap/errors.hpp"

namespace vcap {

SemanticIds visual_action_attention(Tape& tape, ValueId visual_text, ValueId fused_action,
                                    const AttentionParamIds& p, ValueSource source) {
  const Matrix& c = tape.val(visual_text);
  const Matrix& a = tape.val(fused_action);
  if (c.rows != a.rows) {
    throw FrameCountMismatch("visual-text frames " + std::to_string(c.rows) +
                             " vs action frames " + std::to_string(a.rows));
  }
  if (c.rows == 0) throw DimensionMismatch("cross attention over zero frames");
  if (c.cols != tape.val(p.w_q).rows) throw DimensionMismatch("query projection width");
  ValueId kv = source == ValueSource::Action ? fused_action : visual_text;
  if (tape.val(kv).cols != tape.val(p.w_k).rows || tape.val(kv).cols != tape.val(p.w_v).rows) {
    throw DimensionMismatch("key/value projection width");
  }
  ValueId q = tape.matmul(visual_text, p.w_q);
  ValueId k = tape.matmul(kv, p.w_k);
  ValueId v = tape.matmul(kv, p.w_v);
  ValueId weights = tape.softmax_rows(tape.matmul(q, tape.transpose(k)), p.scale);
  ValueId b_seq = tape.matmul(weights, v);
  return SemanticIds{b_seq, tape.mean_rows(b_seq), weights};
}

SemanticActionFeatures visual_action_attention(const Matrix& visual_text,
                                               const Matrix& fused_action,
                                               const AttentionParams& p, ValueSource source) {
  Tape tape;
  auto ids = visual_action_attention(tape, tape.value(visual_text), tape.value(fused_action),
                                     put_on_tape(tape, p), source);
  return SemanticActionFeatures{tape.val(ids.b_seq), tape.val(ids.b_pooled).row(0),
                                tape.val(ids.weights)};
}

}  // namespace vcap
