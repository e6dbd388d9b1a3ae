#include "vcap/temporal_attention.hpp"

#include <cstdlib>
#include <string>

#include "vcap/errors.hpp"
#include "vcap/rng.hpp"

namespace vcap {

AttentionParams AttentionParams::seeded(std::size_t d_in, std::size_t d_k, std::size_t d_v,
                                        uint64_t seed) {
  return seeded_cross(d_in, d_in, d_k, d_v, seed);
}

AttentionParams AttentionParams::seeded_cross(std::size_t d_query_in, std::size_t d_kv_in,
                                              std::size_t d_k, std::size_t d_v, uint64_t seed) {
  AttentionParams p;
  p.w_q = seeded_init(d_query_in, d_k, stream_seed(seed, "w_q"), InitScheme::fan_in());
  p.w_k = seeded_init(d_kv_in, d_k, stream_seed(seed, "w_k"), InitScheme::fan_in());
  p.w_v = seeded_init(d_kv_in, d_v, stream_seed(seed, "w_v"), InitScheme::fan_in());
  p.scale = double(d_k);
  return p;
}

AttentionParamIds put_on_tape(Tape& tape, const AttentionParams& p) {
  AttentionParamIds ids;
  ids.w_q = tape.value(p.w_q);
  ids.w_k = tape.value(p.w_k);
  ids.w_v = tape.value(p.w_v);
  ids.scale = p.scale;
  return ids;
}

namespace {

void check_dims(const Matrix& seq, const Matrix& w_q, const Matrix& w_k) {
  if (seq.rows == 0) throw DimensionMismatch("attention over zero frames");
  if (seq.cols != w_q.rows || seq.cols != w_k.rows) {
    throw DimensionMismatch("attention input width " + std::to_string(seq.cols) +
                            " does not match projection rows");
  }
}

}  // namespace

AttentionIds long_term_attention(Tape& tape, ValueId action_seq, const AttentionParamIds& p) {
  check_dims(tape.val(action_seq), tape.val(p.w_q), tape.val(p.w_k));
  ValueId q = tape.matmul(action_seq, p.w_q);
  ValueId k = tape.matmul(action_seq, p.w_k);
  ValueId v = tape.matmul(action_seq, p.w_v);
  ValueId scores = tape.matmul(q, tape.transpose(k));
  ValueId weights = tape.softmax_rows(scores, p.scale);
  return AttentionIds{tape.matmul(weights, v), weights};
}

AttentionResult long_term_attention(const Matrix& action_seq, const AttentionParams& p) {
  Tape tape;
  auto ids = long_term_attention(tape, tape.value(action_seq), put_on_tape(tape, p));
  return AttentionResult{tape.val(ids.output), tape.val(ids.weights)};
}

Matrix window_mask(std::size_t frames, const WindowConfig& window) {
  Matrix mask(frames, frames);
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t j = 0; j < frames; ++j) {
      std::size_t dist = i > j ? i - j : j - i;
      if (dist > window.radius) continue;
      if (i == j && !window.include_self) continue;
      mask.at(i, j) = 1.0;
    }
    bool any = false;
    for (std::size_t j = 0; j < frames; ++j) any = any || mask.at(i, j) != 0.0;
    if (!any) {
      throw EmptyWindow("frame " + std::to_string(i) + " has no admissible neighbor (radius " +
                        std::to_string(window.radius) + ", include_self " +
                        (window.include_self ? "true" : "false") + ")");
    }
  }
  return mask;
}

AttentionIds short_term_attention(Tape& tape, ValueId action_seq, const AttentionParamIds& p,
                                  const WindowConfig& window) {
  check_dims(tape.val(action_seq), tape.val(p.w_q), tape.val(p.w_k));
  Matrix mask = window_mask(tape.val(action_seq).rows, window);
  ValueId q = tape.matmul(action_seq, p.w_q);
  ValueId k = tape.matmul(action_seq, p.w_k);
  ValueId v = tape.matmul(action_seq, p.w_v);
  ValueId scores = tape.matmul(q, tape.transpose(k));
  ValueId weights = tape.softmax_rows_masked(scores, mask, p.scale);
  return AttentionIds{tape.matmul(weights, v), weights};
}

AttentionResult short_term_attention(const Matrix& action_seq, const AttentionParams& p,
                                     const WindowConfig& window) {
  Tape tape;
  auto ids = short_term_attention(tape, tape.value(action_seq), put_on_tape(tape, p), window);
  return AttentionResult{tape.val(ids.output), tape.val(ids.weights)};
}

ValueId fuse_long_short(Tape& tape, ValueId m_long, ValueId m_short) {
  if (tape.val(m_long).cols != tape.val(m_short).cols) {
    throw DimensionMismatch("long/short value widths differ");
  }
  return tape.concat_rows(m_long, m_short);
}

FusedActionFeatures fuse_long_short(const Matrix& m_long, const Matrix& m_short) {
  if (m_long.cols != m_short.cols) throw DimensionMismatch("long/short value widths differ");
  return FusedActionFeatures{concat_rows(m_long, m_short), m_long.cols};
}

}  // namespace vcap
