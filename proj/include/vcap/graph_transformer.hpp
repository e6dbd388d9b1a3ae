#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vcap/graph.hpp"
#include "vcap/matrix.hpp"
#include "vcap/tape.hpp"

namespace vcap {

// Relation slots for the per-edge-type attention. Self loops get their own
// projections so isolated nodes still transform.
enum class Relation : std::size_t { Self = 0, ObjObj = 1, ActAct = 2, ObjAct = 3 };
constexpr std::size_t kRelationCount = 4;

struct RelationTriple {
  Matrix w_q, w_k, w_v;
};

struct GraphLayerParams {
  std::array<RelationTriple, kRelationCount> relations;
  Matrix w_out;  // d_g x d_g message projection before the residual
};

struct GraphTransformerParams {
  Matrix w_in_object;  // d_obj x d_g
  Matrix w_in_action;  // d_act x d_g
  std::vector<GraphLayerParams> layers;
  Matrix w_proj;  // d_g x d_g output projection
  std::size_t key_dim = 0;

  static GraphTransformerParams seeded(std::size_t d_obj, std::size_t d_act, std::size_t d_g,
                                       std::size_t d_k, std::size_t layer_count, uint64_t seed);
  std::vector<std::pair<std::string, Matrix*>> parameters();
};

struct GraphFeatures {
  Matrix node_features;   // one row per node, aligned with graph.nodes order
  Matrix frame_sequence;  // T x d_g, row t = mean of frame t's node outputs
};

struct GraphEncodeIds {
  ValueId node_features;
  ValueId frame_sequence;
};

struct GraphTransformerParamIds {
  ValueId w_in_object, w_in_action;
  struct Layer {
    std::array<std::array<ValueId, 3>, kRelationCount> relations;  // q, k, v
    ValueId w_out;
  };
  std::vector<Layer> layers;
  ValueId w_proj;
  std::size_t key_dim = 0;
};
GraphTransformerParamIds put_on_tape(Tape& tape, const GraphTransformerParams& p);

// Encode the graph. When action_node_feats is given, the feature of each
// action node is taken from row `frame` of that tape value (the graph must
// then hold exactly one action node per frame), which lets gradients flow
// back into whatever produced those rows; object node features always come
// from the graph itself. Attention logits of similarity edges are offset by
// log(weight); structural and self slots get offset 0.
GraphEncodeIds graph_transformer_encode(Tape& tape, const TemporalGraph& graph,
                                        const GraphTransformerParamIds& p,
                                        std::optional<ValueId> action_node_feats = std::nullopt);
GraphFeatures graph_transformer_encode(const TemporalGraph& graph,
                                       const GraphTransformerParams& p);

}  // namespace vcap
