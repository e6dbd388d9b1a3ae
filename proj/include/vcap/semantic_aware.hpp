#pragma once

#include "vcap/matrix.hpp"
#include "vcap/tape.hpp"
#include "vcap/temporal_attention.hpp"

namespace vcap {

// Where the attention values come from. Action follows the equations (keys and
// values from the fused action features); VisualText is the prose reading kept
// behind a switch for comparison runs.
enum class ValueSource { Action, VisualText };

struct SemanticActionFeatures {
  Matrix b_seq;                  // T x d_v
  std::vector<double> b_pooled;  // column means of b_seq
  Matrix weights;                // T x T cross-attention weights
};

struct SemanticIds {
  ValueId b_seq;
  ValueId b_pooled;  // 1 x d_v
  ValueId weights;
};

// Cross attention: queries from the visual-text rows, keys/values from the
// fused action rows (or from the visual-text rows under ValueSource::VisualText).
SemanticIds visual_action_attention(Tape& tape, ValueId visual_text, ValueId fused_action,
                                    const AttentionParamIds& p,
                                    ValueSource source = ValueSource::Action);
SemanticActionFeatures visual_action_attention(const Matrix& visual_text,
                                               const Matrix& fused_action,
                                               const AttentionParams& p,
                                               ValueSource source = ValueSource::Action);

}  // namespace vcap
