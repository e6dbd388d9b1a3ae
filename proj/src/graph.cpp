#include "vcap/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vcap/errors.hpp"

namespace vcap {

namespace {
std::atomic<uint64_t> g_graph_ops{0};

const char* edge_type_name(EdgeType t) {
  switch (t) {
    case EdgeType::ObjObj: return "obj-obj";
    case EdgeType::ActAct: return "act-act";
    case EdgeType::ObjAct: return "obj-act";
  }
  return "?";
}

EdgeType edge_type_from_name(const std::string& s) {
  if (s == "obj-obj") return EdgeType::ObjObj;
  if (s == "act-act") return EdgeType::ActAct;
  if (s == "obj-act") return EdgeType::ObjAct;
  throw DimMismatch("unknown edge type '" + s + "'");
}
}  // namespace

uint64_t graph_op_count() { return g_graph_ops.load(); }
void detail::bump_graph_op_count() { g_graph_ops.fetch_add(1); }

const GraphNode* TemporalGraph::find(int id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

std::size_t TemporalGraph::index_of(int id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return i;
  throw DimMismatch("node id " + std::to_string(id) + " not in graph");
}

void TemporalGraph::check_structure() const {
  for (const auto& e : edges) {
    const GraphNode* a = find(e.src);
    const GraphNode* b = find(e.dst);
    if (!a || !b) throw DimMismatch("edge endpoint missing");
    switch (e.type) {
      case EdgeType::ObjObj:
        if (a->kind != NodeKind::Object || b->kind != NodeKind::Object ||
            b->frame != a->frame + 1)
          throw FrameRangeMismatch("obj-obj edge must link consecutive frames");
        break;
      case EdgeType::ActAct:
        if (a->kind != NodeKind::Action || b->kind != NodeKind::Action ||
            b->frame != a->frame + 1)
          throw FrameRangeMismatch("act-act edge must link consecutive frames");
        break;
      case EdgeType::ObjAct:
        if (a->frame != b->frame) throw FrameRangeMismatch("obj-act edge must stay in one frame");
        if (a->kind == b->kind) throw FrameRangeMismatch("obj-act edge must mix node kinds");
        break;
    }
  }
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b,
                         bool* degenerate) {
  if (a.size() != b.size()) throw DimensionMismatch("cosine of different lengths");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

TemporalGraph build_object_graph(const std::vector<Matrix>& object_feats,
                                 const std::vector<std::vector<uint8_t>>& object_mask,
                                 const ObjectGraphConfig& cfg) {
  detail::bump_graph_op_count();
  if (object_feats.size() != object_mask.size())
    throw DimMismatch("object mask frame count differs from features");
  TemporalGraph g;
  g.frame_count = object_feats.size();

  // node per present object, ids assigned frame-major
  std::vector<std::vector<int>> node_of(g.frame_count);  // frame -> slot -> id (-1 absent)
  int next_id = 0;
  for (std::size_t t = 0; t < g.frame_count; ++t) {
    const Matrix& frame = object_feats[t];
    if (object_mask[t].size() != frame.rows) throw DimMismatch("mask width differs from slots");
    node_of[t].assign(frame.rows, -1);
    for (std::size_t n = 0; n < frame.rows; ++n) {
      if (!object_mask[t][n]) continue;
      GraphNode node;
      node.id = next_id++;
      node.frame = int(t);
      node.kind = NodeKind::Object;
      node.slot = int(n);
      node.feature = frame.row(n);
      g.nodes.push_back(std::move(node));
      node_of[t][n] = g.nodes.back().id;
    }
  }

  // cosine links into the next frame, thresholded then truncated to the
  // top_k best matches per source object
  for (std::size_t t = 0; t + 1 < g.frame_count; ++t) {
    for (std::size_t n = 0; n < node_of[t].size(); ++n) {
      if (node_of[t][n] < 0) continue;
      const auto src_feat = object_feats[t].row(n);
      std::vector<std::pair<double, std::size_t>> candidates;  // (sim, slot)
      for (std::size_t m = 0; m < node_of[t + 1].size(); ++m) {
        if (node_of[t + 1][m] < 0) continue;
        bool degenerate = false;
        double sim = cosine_similarity(src_feat, object_feats[t + 1].row(m), &degenerate);
        if (degenerate) {
          g.diagnostics.push_back("zero-vector cosine at frame " + std::to_string(t) +
                                  " slot " + std::to_string(n) + " -> frame " +
                                  std::to_string(t + 1) + " slot " + std::to_string(m) +
                                  "; similarity taken as 0");
        }
        if (sim >= cfg.theta) candidates.emplace_back(sim, m);
      }
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      if (candidates.size() > cfg.top_k) candidates.resize(cfg.top_k);
      for (const auto& [sim, m] : candidates) {
        g.edges.push_back(GraphEdge{node_of[t][n], node_of[t + 1][m], EdgeType::ObjObj, sim});
      }
    }
  }
  return g;
}

TemporalGraph build_action_graph(const Matrix& action_seq) {
  detail::bump_graph_op_count();
  TemporalGraph g;
  g.frame_count = action_seq.rows;
  for (std::size_t t = 0; t < action_seq.rows; ++t) {
    GraphNode node;
    node.id = int(t);
    node.frame = int(t);
    node.kind = NodeKind::Action;
    node.slot = -1;
    node.feature = action_seq.row(t);
    g.nodes.push_back(std::move(node));
    if (t + 1 < action_seq.rows)
      g.edges.push_back(GraphEdge{int(t), int(t + 1), EdgeType::ActAct, 1.0});
  }
  return g;
}

TemporalGraph merge_graphs(const TemporalGraph& object_graph, const TemporalGraph& action_graph) {
  detail::bump_graph_op_count();
  if (object_graph.frame_count != action_graph.frame_count) {
    throw FrameRangeMismatch("object graph spans " + std::to_string(object_graph.frame_count) +
                             " frames, action graph " +
                             std::to_string(action_graph.frame_count));
  }
  TemporalGraph g;
  g.frame_count = object_graph.frame_count;
  g.nodes = object_graph.nodes;
  g.edges = object_graph.edges;
  g.diagnostics = object_graph.diagnostics;

  int offset = 0;
  for (const auto& n : object_graph.nodes) offset = std::max(offset, n.id + 1);

  for (const auto& n : action_graph.nodes) {
    GraphNode copy = n;
    copy.id += offset;
    g.nodes.push_back(std::move(copy));
  }
  for (const auto& e : action_graph.edges) {
    GraphEdge copy = e;
    copy.src += offset;
    copy.dst += offset;
    g.edges.push_back(copy);
  }

  // intra-frame action -> object links
  for (const auto& act : action_graph.nodes) {
    for (const auto& obj : object_graph.nodes) {
      if (obj.frame == act.frame)
        g.edges.push_back(GraphEdge{act.id + offset, obj.id, EdgeType::ObjAct, 1.0});
    }
  }
  return g;
}

std::string export_graph_json(const TemporalGraph& g) {
  nlohmann::json doc;
  doc["frame_count"] = g.frame_count;
  doc["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    doc["nodes"].push_back({{"id", n.id},
                            {"frame", n.frame},
                            {"kind", n.kind == NodeKind::Object ? "object" : "action"},
                            {"slot", n.slot},
                            {"feature", n.feature}});
  }
  doc["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges) {
    doc["edges"].push_back(
        {{"src", e.src}, {"dst", e.dst}, {"type", edge_type_name(e.type)}, {"weight", e.weight}});
  }
  return doc.dump(2);
}

TemporalGraph import_graph_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DimMismatch(std::string("graph JSON parse: ") + e.what());
  }
  TemporalGraph g;
  try {
    g.frame_count = doc.at("frame_count").get<std::size_t>();
    for (const auto& jn : doc.at("nodes")) {
      GraphNode n;
      n.id = jn.at("id").get<int>();
      n.frame = jn.at("frame").get<int>();
      n.kind = jn.at("kind").get<std::string>() == "object" ? NodeKind::Object : NodeKind::Action;
      n.slot = jn.at("slot").get<int>();
      n.feature = jn.at("feature").get<std::vector<double>>();
      g.nodes.push_back(std::move(n));
    }
    for (const auto& je : doc.at("edges")) {
      GraphEdge e;
      e.src = je.at("src").get<int>();
      e.dst = je.at("dst").get<int>();
      e.type = edge_type_from_name(je.at("type").get<std::string>());
      e.weight = je.at("weight").get<double>();
      g.edges.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DimMismatch(std::string("graph JSON fields: ") + e.what());
  }
  return g;
}

std::string export_graph_dot(const TemporalGraph& g) {
  std::ostringstream out;
  out << "graph temporal_objects_action {\n";
  out << "  rankdir=LR;\n";
  for (const auto& n : g.nodes) {
    out << "  n" << n.id << " [label=\""
        << (n.kind == NodeKind::Object ? "obj" : "act") << " t=" << n.frame;
    if (n.kind == NodeKind::Object) out << " s=" << n.slot;
    out << "\", shape=" << (n.kind == NodeKind::Object ? "ellipse" : "box") << "];\n";
  }
  for (const auto& e : g.edges) {
    out << "  n" << e.src << " -- n" << e.dst << " [label=\"" << e.weight << "\"";
    if (e.type == EdgeType::ObjAct) out << ", style=dashed";
    out << "];\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace vcap
