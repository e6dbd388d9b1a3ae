#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vcap/matrix.hpp"

namespace vcap {

enum class NodeKind { Object, Action };
enum class EdgeType { ObjObj, ActAct, ObjAct };

struct GraphNode {
  int id = -1;
  int frame = -1;
  NodeKind kind = NodeKind::Object;
  int slot = -1;  // object slot within the frame; -1 for action nodes
  std::vector<double> feature;
};

// Similarity edges (obj-obj) carry the cosine value; structural edges
// (act-act chain, intra-frame obj-act) carry weight 1.
struct GraphEdge {
  int src = -1;
  int dst = -1;
  EdgeType type = EdgeType::ObjObj;
  double weight = 1.0;
};

// Heterogeneous temporal graph over one video. Edge locality is structural:
// obj-obj and act-act edges connect frames t and t+1 only, obj-act edges stay
// inside one frame.
struct TemporalGraph {
  std::size_t frame_count = 0;
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  std::vector<std::string> diagnostics;  // e.g. zero-vector cosine warnings

  const GraphNode* find(int id) const;
  std::size_t index_of(int id) const;  // position in nodes, throws if absent
  // Throws FrameRangeMismatch/DimMismatch if a structural invariant is broken.
  void check_structure() const;
};

struct ObjectGraphConfig {
  double theta = 0.5;  // cosine link threshold
  std::size_t top_k = 1;  // best next-frame matches kept per object
};

// Cross-frame object links by cosine similarity; absent objects produce no
// nodes. A zero feature vector makes the similarity 0 and leaves a diagnostic.
TemporalGraph build_object_graph(const std::vector<Matrix>& object_feats,
                                 const std::vector<std::vector<uint8_t>>& object_mask,
                                 const ObjectGraphConfig& cfg = {});

// One action node per frame, chained t -> t+1 with weight 1.
TemporalGraph build_action_graph(const Matrix& action_seq);

// Union of the two graphs plus intra-frame links from each frame's action
// node to every present object node of that frame.
TemporalGraph merge_graphs(const TemporalGraph& object_graph, const TemporalGraph& action_graph);

// Lossless JSON round-trip; DOT is for visualization only.
std::string export_graph_json(const TemporalGraph& g);
TemporalGraph import_graph_json(const std::string& text);
std::string export_graph_dot(const TemporalGraph& g);

// cosine(a, b); sets *degenerate when either vector is all zero (result 0).
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b,
                         bool* degenerate = nullptr);

// Number of graph build/merge/encode calls since process start. Inference
// must leave this untouched; tests assert on the delta.
uint64_t graph_op_count();

namespace detail {
void bump_graph_op_count();
}

}  // namespace vcap
