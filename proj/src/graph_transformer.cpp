#include "vcap/graph_transformer.hpp"

#include <algorithm>
#include <cmath>

#include "vcap/errors.hpp"
#include "vcap/rng.hpp"

namespace vcap {

namespace {
constexpr double kWeightFloor = 1e-8;  // guards log of tiny/negative similarity weights

const char* relation_tag(std::size_t r) {
  switch (Relation(r)) {
    case Relation::Self: return "self";
    case Relation::ObjObj: return "obj_obj";
    case Relation::ActAct: return "act_act";
    case Relation::ObjAct: return "obj_act";
  }
  return "?";
}

Relation relation_of(EdgeType t) {
  switch (t) {
    case EdgeType::ObjObj: return Relation::ObjObj;
    case EdgeType::ActAct: return Relation::ActAct;
    case EdgeType::ObjAct: return Relation::ObjAct;
  }
  return Relation::Self;
}

struct Neighbor {
  std::size_t pos;     // index into graph.nodes
  std::size_t rel;     // relation slot
  double logit_offset;
};
}  // namespace

GraphTransformerParams GraphTransformerParams::seeded(std::size_t d_obj, std::size_t d_act,
                                                      std::size_t d_g, std::size_t d_k,
                                                      std::size_t layer_count, uint64_t seed) {
  if (layer_count == 0) throw DimensionMismatch("graph transformer needs at least one layer");
  GraphTransformerParams p;
  p.key_dim = d_k;
  p.w_in_object = seeded_init(d_obj, d_g, stream_seed(seed, "w_in_object"), InitScheme::fan_in());
  p.w_in_action = seeded_init(d_act, d_g, stream_seed(seed, "w_in_action"), InitScheme::fan_in());
  for (std::size_t l = 0; l < layer_count; ++l) {
    GraphLayerParams layer;
    for (std::size_t r = 0; r < kRelationCount; ++r) {
      std::string base = "layer" + std::to_string(l) + "." + relation_tag(r);
      layer.relations[r].w_q = seeded_init(d_g, d_k, stream_seed(seed, base + ".w_q"),
                                           InitScheme::fan_in());
      layer.relations[r].w_k = seeded_init(d_g, d_k, stream_seed(seed, base + ".w_k"),
                                           InitScheme::fan_in());
      layer.relations[r].w_v = seeded_init(d_g, d_g, stream_seed(seed, base + ".w_v"),
                                           InitScheme::fan_in());
    }
    layer.w_out = seeded_init(d_g, d_g, stream_seed(seed, "layer" + std::to_string(l) + ".w_out"),
                              InitScheme::fan_in());
    p.layers.push_back(std::move(layer));
  }
  p.w_proj = seeded_init(d_g, d_g, stream_seed(seed, "w_proj"), InitScheme::fan_in());
  return p;
}

std::vector<std::pair<std::string, Matrix*>> GraphTransformerParams::parameters() {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.emplace_back("graph.w_in_object", &w_in_object);
  out.emplace_back("graph.w_in_action", &w_in_action);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t r = 0; r < kRelationCount; ++r) {
      std::string base = "graph.layer" + std::to_string(l) + "." + relation_tag(r);
      out.emplace_back(base + ".w_q", &layers[l].relations[r].w_q);
      out.emplace_back(base + ".w_k", &layers[l].relations[r].w_k);
      out.emplace_back(base + ".w_v", &layers[l].relations[r].w_v);
    }
    out.emplace_back("graph.layer" + std::to_string(l) + ".w_out", &layers[l].w_out);
  }
  out.emplace_back("graph.w_proj", &w_proj);
  return out;
}

GraphTransformerParamIds put_on_tape(Tape& tape, const GraphTransformerParams& p) {
  GraphTransformerParamIds ids;
  ids.key_dim = p.key_dim;
  ids.w_in_object = tape.value(p.w_in_object);
  ids.w_in_action = tape.value(p.w_in_action);
  for (const auto& layer : p.layers) {
    GraphTransformerParamIds::Layer lid;
    for (std::size_t r = 0; r < kRelationCount; ++r) {
      lid.relations[r][0] = tape.value(layer.relations[r].w_q);
      lid.relations[r][1] = tape.value(layer.relations[r].w_k);
      lid.relations[r][2] = tape.value(layer.relations[r].w_v);
    }
    lid.w_out = tape.value(layer.w_out);
    ids.layers.push_back(lid);
  }
  ids.w_proj = tape.value(p.w_proj);
  return ids;
}

GraphEncodeIds graph_transformer_encode(Tape& tape, const TemporalGraph& graph,
                                        const GraphTransformerParamIds& p,
                                        std::optional<ValueId> action_node_feats) {
  detail::bump_graph_op_count();
  if (graph.nodes.empty()) throw EmptyGraph("cannot encode a graph without nodes");
  if (p.layers.empty()) throw DimensionMismatch("graph transformer needs at least one layer");

  const std::size_t n = graph.nodes.size();
  const std::size_t d_g = tape.val(p.w_in_object).cols;

  // id -> position lookup
  std::vector<std::size_t> obj_pos, act_pos;
  for (std::size_t i = 0; i < n; ++i) {
    (graph.nodes[i].kind == NodeKind::Object ? obj_pos : act_pos).push_back(i);
  }

  // project object and action features into the shared width, then reorder
  // rows back into graph.nodes order
  std::vector<ValueId> parts;
  if (!obj_pos.empty()) {
    Matrix feats(obj_pos.size(), graph.nodes[obj_pos[0]].feature.size());
    for (std::size_t r = 0; r < obj_pos.size(); ++r) {
      const auto& f = graph.nodes[obj_pos[r]].feature;
      if (f.size() != feats.cols) throw DimMismatch("object node feature widths differ");
      std::copy(f.begin(), f.end(), feats.row_ptr(r));
    }
    parts.push_back(tape.matmul(tape.value(std::move(feats)), p.w_in_object));
  }
  if (!act_pos.empty()) {
    ValueId act_feats;
    if (action_node_feats) {
      std::vector<std::size_t> frames;
      for (std::size_t i : act_pos) {
        if (graph.nodes[i].frame < 0 ||
            std::size_t(graph.nodes[i].frame) >= tape.val(*action_node_feats).rows)
          throw DimMismatch("action node frame outside supplied feature rows");
        frames.push_back(std::size_t(graph.nodes[i].frame));
      }
      act_feats = tape.gather_rows(*action_node_feats, frames);
    } else {
      Matrix feats(act_pos.size(), graph.nodes[act_pos[0]].feature.size());
      for (std::size_t r = 0; r < act_pos.size(); ++r) {
        const auto& f = graph.nodes[act_pos[r]].feature;
        if (f.size() != feats.cols) throw DimMismatch("action node feature widths differ");
        std::copy(f.begin(), f.end(), feats.row_ptr(r));
      }
      act_feats = tape.value(std::move(feats));
    }
    parts.push_back(tape.matmul(act_feats, p.w_in_action));
  }
  ValueId stacked = parts.size() == 1 ? parts[0] : tape.stack_rows_many(parts);
  std::vector<std::size_t> order(n);
  for (std::size_t r = 0; r < obj_pos.size(); ++r) order[obj_pos[r]] = r;
  for (std::size_t r = 0; r < act_pos.size(); ++r) order[act_pos[r]] = obj_pos.size() + r;
  ValueId h = tape.gather_rows(stacked, order);

  // undirected neighborhoods with relation slots and logit offsets
  std::vector<std::vector<Neighbor>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i) nbrs[i].push_back({i, std::size_t(Relation::Self), 0.0});
  for (const auto& e : graph.edges) {
    std::size_t a = graph.index_of(e.src);
    std::size_t b = graph.index_of(e.dst);
    double offset =
        e.type == EdgeType::ObjObj ? std::log(std::max(e.weight, kWeightFloor)) : 0.0;
    std::size_t rel = std::size_t(relation_of(e.type));
    nbrs[a].push_back({b, rel, offset});
    nbrs[b].push_back({a, rel, offset});
  }
  for (auto& list : nbrs) {
    std::sort(list.begin(), list.end(), [](const Neighbor& x, const Neighbor& y) {
      return x.rel != y.rel ? x.rel < y.rel : x.pos < y.pos;
    });
  }

  double scale = double(p.key_dim == 0 ? d_g : p.key_dim);
  for (const auto& layer : p.layers) {
    std::array<ValueId, kRelationCount> q, k, v;
    for (std::size_t r = 0; r < kRelationCount; ++r) {
      q[r] = tape.matmul(h, layer.relations[r][0]);
      k[r] = tape.matmul(h, layer.relations[r][1]);
      v[r] = tape.matmul(h, layer.relations[r][2]);
    }
    std::vector<ValueId> message_rows;
    message_rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      // score pieces grouped per relation slot; neighbor order is canonical
      std::vector<ValueId> logit_parts, value_parts;
      Matrix offsets(1, nbrs[i].size());
      std::size_t filled = 0;
      std::size_t start = 0;
      while (start < nbrs[i].size()) {
        std::size_t end = start;
        while (end < nbrs[i].size() && nbrs[i][end].rel == nbrs[i][start].rel) ++end;
        std::size_t rel = nbrs[i][start].rel;
        std::vector<std::size_t> idx;
        for (std::size_t j = start; j < end; ++j) {
          idx.push_back(nbrs[i][j].pos);
          offsets.at(0, filled++) = nbrs[i][j].logit_offset;
        }
        ValueId qi = tape.slice_rows(q[rel], i, i + 1);
        ValueId keys = tape.gather_rows(k[rel], idx);
        logit_parts.push_back(tape.matmul(qi, tape.transpose(keys)));
        value_parts.push_back(tape.gather_rows(v[rel], idx));
        start = end;
      }
      ValueId logits = logit_parts[0];
      for (std::size_t j = 1; j < logit_parts.size(); ++j)
        logits = tape.concat_rows(logits, logit_parts[j]);
      logits = tape.add(logits, tape.value(std::move(offsets)));
      ValueId alpha = tape.softmax_rows(logits, scale);
      ValueId values =
          value_parts.size() == 1 ? value_parts[0] : tape.stack_rows_many(value_parts);
      message_rows.push_back(tape.matmul(alpha, values));
    }
    ValueId messages = tape.stack_rows_many(message_rows);
    h = tape.rms_norm_rows(tape.add(h, tape.matmul(messages, layer.w_out)));
  }

  ValueId out_nodes = tape.matmul(h, p.w_proj);

  // per-frame mean pooling; a frame without nodes pools to a zero row
  std::vector<ValueId> frame_rows;
  for (std::size_t t = 0; t < graph.frame_count; ++t) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
      if (graph.nodes[i].frame == int(t)) idx.push_back(i);
    if (idx.empty()) {
      frame_rows.push_back(tape.value(Matrix(1, d_g)));
    } else {
      frame_rows.push_back(tape.mean_rows(tape.gather_rows(out_nodes, idx)));
    }
  }
  ValueId frame_seq = frame_rows.empty() ? tape.value(Matrix(0, d_g))
                                         : tape.stack_rows_many(frame_rows);
  return GraphEncodeIds{out_nodes, frame_seq};
}

GraphFeatures graph_transformer_encode(const TemporalGraph& graph,
                                       const GraphTransformerParams& p) {
  Tape tape;
  auto ids = graph_transformer_encode(tape, graph, put_on_tape(tape, p));
  return GraphFeatures{tape.val(ids.node_features), tape.val(ids.frame_sequence)};
}

}  // namespace vcap
