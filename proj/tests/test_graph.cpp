#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "vcap/errors.hpp"
#include "vcap/features.hpp"
#include "vcap/graph.hpp"
#include "vcap/graph_transformer.hpp"
#include "vcap/rng.hpp"

using namespace vcap;

namespace {

Matrix rnd(std::size_t r, std::size_t c, uint64_t seed) {
  return seeded_init(r, c, seed, InitScheme::uniform(1.0));
}

// random per-frame object features with a sprinkling of absent slots
void random_objects(uint64_t seed, std::size_t frames, std::size_t slots, std::size_t dim,
                    std::vector<Matrix>* feats, std::vector<std::vector<uint8_t>>* mask) {
  SplitMix64 rng(seed);
  for (std::size_t t = 0; t < frames; ++t) {
    feats->push_back(rnd(slots, dim, stream_seed(seed, "f" + std::to_string(t))));
    std::vector<uint8_t> row(slots, 1);
    for (std::size_t s = 1; s < slots; ++s) row[s] = rng.next_double() < 0.8;
    mask->push_back(row);
  }
}

GraphTransformerParams identity_params() {
  GraphTransformerParams p;
  p.key_dim = 1;
  p.w_in_object = Matrix::from_rows({{1}});
  p.w_in_action = Matrix::from_rows({{1}});
  GraphLayerParams layer;
  for (std::size_t r = 0; r < kRelationCount; ++r) {
    layer.relations[r].w_q = Matrix::from_rows({{1}});
    layer.relations[r].w_k = Matrix::from_rows({{1}});
    layer.relations[r].w_v = Matrix::from_rows({{1}});
  }
  layer.w_out = Matrix::from_rows({{1}});
  p.layers.push_back(layer);
  p.w_proj = Matrix::from_rows({{1}});
  return p;
}

}  // namespace

TEST_CASE("identical consecutive object vectors link with weight 1") {
  std::vector<Matrix> feats{Matrix::from_rows({{1, 2, 2}}), Matrix::from_rows({{1, 2, 2}})};
  std::vector<std::vector<uint8_t>> mask{{1}, {1}};
  auto g = build_object_graph(feats, mask, ObjectGraphConfig{0.5, 1});
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0].type == EdgeType::ObjObj);
  CHECK(g.edges[0].weight == doctest::Approx(1.0).epsilon(1e-12));
  g.check_structure();
}

TEST_CASE("orthogonal vectors fall below the threshold") {
  std::vector<Matrix> feats{Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0, 1}})};
  std::vector<std::vector<uint8_t>> mask{{1}, {1}};
  auto g = build_object_graph(feats, mask, ObjectGraphConfig{0.5, 1});
  CHECK(g.edges.empty());
  CHECK(g.nodes.size() == 2);
}

TEST_CASE("single frame has nodes but no cross-frame edges") {
  std::vector<Matrix> feats{rnd(3, 4, 1)};
  std::vector<std::vector<uint8_t>> mask{{1, 1, 0}};
  auto g = build_object_graph(feats, mask, {});
  CHECK(g.nodes.size() == 2);  // absent slot produces no node
  CHECK(g.edges.empty());
}

TEST_CASE("zero vectors degrade to similarity 0 with a diagnostic") {
  std::vector<Matrix> feats{Matrix::from_rows({{0, 0}}), Matrix::from_rows({{1, 1}})};
  std::vector<std::vector<uint8_t>> mask{{1}, {1}};
  auto g = build_object_graph(feats, mask, ObjectGraphConfig{0.5, 1});
  CHECK(g.edges.empty());
  CHECK(!g.diagnostics.empty());
}

TEST_CASE("action graph is a chain with the given features") {
  Matrix b = rnd(4, 3, 9);
  auto g = build_action_graph(b);
  CHECK(g.nodes.size() == 4);
  CHECK(g.edges.size() == 3);
  for (const auto& e : g.edges) {
    CHECK(e.type == EdgeType::ActAct);
    CHECK(e.weight == 1.0);
  }
  for (std::size_t t = 0; t < 4; ++t) CHECK(g.nodes[t].feature == b.row(t));
  g.check_structure();

  auto single = build_action_graph(rnd(1, 3, 10));
  CHECK(single.nodes.size() == 1);
  CHECK(single.edges.empty());
}

TEST_CASE("merge adds one obj-act edge per present object") {
  std::vector<Matrix> feats;
  std::vector<std::vector<uint8_t>> mask;
  random_objects(21, 5, 3, 4, &feats, &mask);
  auto obj = build_object_graph(feats, mask, ObjectGraphConfig{0.3, 2});
  auto act = build_action_graph(rnd(5, 3, 22));
  auto merged = merge_graphs(obj, act);
  merged.check_structure();

  std::size_t present = 0;
  for (const auto& row : mask) present += std::size_t(std::count(row.begin(), row.end(), 1));
  CHECK(merged.edges.size() == obj.edges.size() + act.edges.size() + present);

  for (std::size_t t = 0; t < 5; ++t) {
    std::size_t frame_links = 0;
    for (const auto& e : merged.edges)
      if (e.type == EdgeType::ObjAct && merged.find(e.src)->frame == int(t)) ++frame_links;
    CHECK(frame_links == std::size_t(std::count(mask[t].begin(), mask[t].end(), 1)));
  }

  CHECK_THROWS_AS(merge_graphs(obj, build_action_graph(rnd(4, 3, 23))), FrameRangeMismatch);
}

TEST_CASE("raising the cosine threshold never adds edges") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    std::vector<Matrix> feats;
    std::vector<std::vector<uint8_t>> mask;
    random_objects(seed, 4, 3, 4, &feats, &mask);
    std::set<std::pair<int, int>> previous;
    bool first = true;
    for (double theta : {-1.0, -0.25, 0.1, 0.4, 0.8, 0.99}) {
      auto g = build_object_graph(feats, mask, ObjectGraphConfig{theta, 2});
      std::set<std::pair<int, int>> edges;
      for (const auto& e : g.edges) edges.insert({e.src, e.dst});
      if (!first) {
        for (const auto& e : edges) CHECK(previous.count(e) == 1);
      }
      previous = edges;
      first = false;
    }
  }
}

TEST_CASE("json export round trips exactly") {
  std::vector<Matrix> feats;
  std::vector<std::vector<uint8_t>> mask;
  random_objects(31, 3, 2, 3, &feats, &mask);
  auto obj = build_object_graph(feats, mask, ObjectGraphConfig{0.2, 2});
  auto merged = merge_graphs(obj, build_action_graph(rnd(3, 2, 32)));

  auto back = import_graph_json(export_graph_json(merged));
  CHECK(back.frame_count == merged.frame_count);
  REQUIRE(back.nodes.size() == merged.nodes.size());
  REQUIRE(back.edges.size() == merged.edges.size());
  for (std::size_t i = 0; i < merged.nodes.size(); ++i) {
    CHECK(back.nodes[i].id == merged.nodes[i].id);
    CHECK(back.nodes[i].frame == merged.nodes[i].frame);
    CHECK(back.nodes[i].kind == merged.nodes[i].kind);
    CHECK(back.nodes[i].slot == merged.nodes[i].slot);
    CHECK(back.nodes[i].feature == merged.nodes[i].feature);
  }
  for (std::size_t i = 0; i < merged.edges.size(); ++i) {
    CHECK(back.edges[i].src == merged.edges[i].src);
    CHECK(back.edges[i].dst == merged.edges[i].dst);
    CHECK(back.edges[i].type == merged.edges[i].type);
    CHECK(back.edges[i].weight == merged.edges[i].weight);
  }
}

TEST_CASE("dot export lists one statement per node, empty graph stays valid") {
  auto g = build_action_graph(rnd(3, 2, 41));
  std::string dot = export_graph_dot(g);
  std::size_t statements = 0;
  for (std::size_t pos = 0; (pos = dot.find("[label", pos)) != std::string::npos; ++pos)
    ++statements;
  CHECK(statements == g.nodes.size() + g.edges.size());

  TemporalGraph empty;
  CHECK(import_graph_json(export_graph_json(empty)).nodes.empty());
  CHECK(export_graph_dot(empty).find("{") != std::string::npos);
}

TEST_CASE("encode rejects the empty graph") {
  TemporalGraph empty;
  auto p = GraphTransformerParams::seeded(3, 3, 3, 2, 1, 51);
  CHECK_THROWS_AS(graph_transformer_encode(empty, p), EmptyGraph);
}

TEST_CASE("isolated node repeats the self-only transform") {
  std::vector<Matrix> feats{rnd(1, 3, 61)};
  std::vector<std::vector<uint8_t>> mask{{1}};
  auto g = build_object_graph(feats, mask, {});
  REQUIRE(g.nodes.size() == 1);

  std::size_t layers = 2;
  auto p = GraphTransformerParams::seeded(3, 3, 3, 2, layers, 62);
  auto enc = graph_transformer_encode(g, p);

  // independent re-computation: alpha over a single neighbor is 1
  Matrix h = matmul(Matrix(1, 3, g.nodes[0].feature), p.w_in_object);
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix msg = matmul(matmul(h, p.layers[l].relations[0].w_v), p.layers[l].w_out);
    Matrix pre = add(h, msg);
    double ms = 0.0;
    for (double v : pre.data) ms += v * v;
    double inv = 1.0 / std::sqrt(ms / double(pre.cols) + 1e-8);
    h = scale(pre, inv);
  }
  Matrix expected = matmul(h, p.w_proj);
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(enc.node_features.data[i] == doctest::Approx(expected.data[i]).epsilon(1e-9));
  // frame pooling over the single node
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(enc.frame_sequence.data[i] == doctest::Approx(expected.data[i]).epsilon(1e-9));
}

TEST_CASE("zero features propagate to zero output") {
  std::vector<Matrix> feats{Matrix(2, 3), Matrix(2, 3)};
  std::vector<std::vector<uint8_t>> mask{{1, 1}, {1, 1}};
  auto obj = build_object_graph(feats, mask, ObjectGraphConfig{-2.0, 2});  // zero sims still link
  auto merged = merge_graphs(obj, build_action_graph(Matrix(2, 3)));
  auto p = GraphTransformerParams::seeded(3, 3, 3, 2, 2, 71);
  auto enc = graph_transformer_encode(merged, p);
  for (double v : enc.node_features.data) CHECK(v == 0.0);
  for (double v : enc.frame_sequence.data) CHECK(v == 0.0);
}

TEST_CASE("path graph hand example") {
  // objects a-b-c across three frames, scalar features, identity projections
  double fa = 0.9, fb = 0.0, fc = 0.3;
  TemporalGraph g;
  g.frame_count = 3;
  g.nodes = {{0, 0, NodeKind::Object, 0, {fa}},
             {1, 1, NodeKind::Object, 0, {fb}},
             {2, 2, NodeKind::Object, 0, {fc}}};
  g.edges = {{0, 1, EdgeType::ObjObj, 1.0}, {1, 2, EdgeType::ObjObj, 1.0}};
  g.check_structure();

  auto enc = graph_transformer_encode(g, identity_params());

  auto rms = [](double x) { return x / std::sqrt(x * x + 1e-8); };
  // node b: neighbors {self=0, a, c}, all logits fb*f = 0 -> uniform weights
  double msg_b = (fb + fa + fc) / 3.0;
  CHECK(enc.node_features.at(1, 0) == doctest::Approx(rms(fb + msg_b)).epsilon(1e-12));
  // node a: neighbors {self, b}; logits [fa*fa, fa*fb] with scale 1
  double ea = std::exp(fa * fa), eb = std::exp(fa * fb);
  double msg_a = (ea * fa + eb * fb) / (ea + eb);
  CHECK(enc.node_features.at(0, 0) == doctest::Approx(rms(fa + msg_a)).epsilon(1e-12));
}

TEST_CASE("node relabeling produces an isomorphic encoding") {
  std::vector<Matrix> feats;
  std::vector<std::vector<uint8_t>> mask;
  random_objects(81, 3, 2, 3, &feats, &mask);
  auto obj = build_object_graph(feats, mask, ObjectGraphConfig{0.0, 2});
  auto merged = merge_graphs(obj, build_action_graph(rnd(3, 3, 82)));
  auto p = GraphTransformerParams::seeded(3, 3, 3, 2, 1, 83);
  auto base = graph_transformer_encode(merged, p);

  // reverse node order and shift every id
  TemporalGraph shuffled;
  shuffled.frame_count = merged.frame_count;
  std::size_t n = merged.nodes.size();
  std::vector<std::size_t> new_pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    GraphNode node = merged.nodes[n - 1 - i];
    node.id += 100;
    shuffled.nodes.push_back(node);
    new_pos[n - 1 - i] = i;
  }
  for (GraphEdge e : merged.edges) {
    e.src += 100;
    e.dst += 100;
    shuffled.edges.push_back(e);
  }
  auto moved = graph_transformer_encode(shuffled, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < base.node_features.cols; ++c)
      CHECK(moved.node_features.at(new_pos[i], c) ==
            doctest::Approx(base.node_features.at(i, c)).epsilon(1e-9));
  for (std::size_t i = 0; i < base.frame_sequence.size(); ++i)
    CHECK(moved.frame_sequence.data[i] ==
          doctest::Approx(base.frame_sequence.data[i]).epsilon(1e-9));
}

TEST_CASE("graph ops bump the instrumentation counter") {
  uint64_t before = graph_op_count();
  auto g = build_action_graph(rnd(2, 2, 91));
  CHECK(graph_op_count() == before + 1);
  auto p = GraphTransformerParams::seeded(2, 2, 2, 2, 1, 92);
  graph_transformer_encode(g, p);
  CHECK(graph_op_count() == before + 2);
}
