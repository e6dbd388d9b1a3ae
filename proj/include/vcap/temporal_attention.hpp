#pragma once

#include <cstdint>

#include "vcap/matrix.hpp"
#include "vcap/tape.hpp"

namespace vcap {

// One learnable (W_q, W_k, W_v) triple. Attention logits are divided by
// sqrt(scale); scale defaults to the key width so logit variance stays flat
// as the width grows.
struct AttentionParams {
  Matrix w_q;  // d_in x d_k
  Matrix w_k;  // d_in x d_k
  Matrix w_v;  // d_in x d_v
  double scale = 1.0;

  static AttentionParams seeded(std::size_t d_in, std::size_t d_k, std::size_t d_v,
                                uint64_t seed);
  static AttentionParams seeded_cross(std::size_t d_query_in, std::size_t d_kv_in,
                                      std::size_t d_k, std::size_t d_v, uint64_t seed);
};

// Attention window over adjacent frames: frame i attends to
// {j : |i - j| <= radius}, minus i itself when include_self is false.
struct WindowConfig {
  std::size_t radius = 1;
  bool include_self = true;
};

struct AttentionResult {
  Matrix output;   // T x d_v, rows in the convex hull of the value rows
  Matrix weights;  // T x T, each row sums to 1
};

// Per-frame features concatenated from the whole-sequence pass and the
// windowed pass; the two halves stay recoverable.
struct FusedActionFeatures {
  Matrix fused;  // T x 2 d_v
  std::size_t half_dim = 0;

  Matrix long_half() const { return slice_cols(fused, 0, half_dim); }
  Matrix short_half() const { return slice_cols(fused, half_dim, 2 * half_dim); }
};

// Tape-resident parameter handles.
struct AttentionParamIds {
  ValueId w_q, w_k, w_v;
  double scale = 1.0;
};
AttentionParamIds put_on_tape(Tape& tape, const AttentionParams& p);

struct AttentionIds {
  ValueId output;
  ValueId weights;
};

// Each frame attends over the full sequence.
AttentionIds long_term_attention(Tape& tape, ValueId action_seq, const AttentionParamIds& p);
AttentionResult long_term_attention(const Matrix& action_seq, const AttentionParams& p);

// Attention restricted to the window; weights outside it are exact zeros.
AttentionIds short_term_attention(Tape& tape, ValueId action_seq, const AttentionParamIds& p,
                                  const WindowConfig& window);
AttentionResult short_term_attention(const Matrix& action_seq, const AttentionParams& p,
                                     const WindowConfig& window);

// 0/1 admissibility matrix for the window; throws EmptyWindow if some frame
// would be left with nothing to attend to.
Matrix window_mask(std::size_t frames, const WindowConfig& window);

ValueId fuse_long_short(Tape& tape, ValueId m_long, ValueId m_short);
FusedActionFeatures fuse_long_short(const Matrix& m_long, const Matrix& m_short);

}  // namespace vcap
