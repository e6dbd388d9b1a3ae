#include "vcap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "vcap/errors.hpp"
#include "vcap/features.hpp"
#include "vcap/graph_transformer.hpp"
#include "vcap/rng.hpp"
#include "vcap/semantic_aware.hpp"
#include "vcap/tape.hpp"
#include "vcap/temporal_attention.hpp"
#include "vcap/training.hpp"

namespace vcap {

namespace {

// random bilinear probe turning a matrix output into a scalar; a plain sum
// would miss gradients that cancel across entries
struct Probe {
  Matrix left;   // 1 x rows
  Matrix right;  // cols x 1
};

Probe make_probe(std::size_t rows, std::size_t cols, uint64_t seed) {
  return Probe{seeded_init(1, rows, stream_seed(seed, "probe_left"), InitScheme::uniform(1.0)),
               seeded_init(cols, 1, stream_seed(seed, "probe_right"), InitScheme::uniform(1.0))};
}

ValueId apply_probe(Tape& tape, ValueId out, const Probe& probe) {
  return tape.matmul(tape.matmul(tape.value(probe.left), out), tape.value(probe.right));
}

// check one configuration: FD over the flattened parameters against the
// tape gradients, reading/writing the parameter matrices in place
double check_case(const std::vector<Matrix*>& params, const std::function<double()>& forward,
                  const std::function<std::vector<Matrix>()>& analytic, double eps) {
  std::vector<double> x;
  for (const Matrix* m : params) x.insert(x.end(), m->data.begin(), m->data.end());
  auto write = [&](const std::vector<double>& flat) {
    std::size_t k = 0;
    for (Matrix* m : params) {
      std::copy_n(flat.begin() + long(k), m->data.size(), m->data.begin());
      k += m->data.size();
    }
  };
  auto f = [&](const std::vector<double>& flat) {
    write(flat);
    return forward();
  };
  std::vector<double> fd = finite_diff_grad(f, x, eps);
  write(x);
  std::vector<Matrix> an = analytic();

  double worst = 0.0;
  std::size_t k = 0;
  for (const Matrix& g : an)
    for (double a : g.data) worst = std::max(worst, gradient_rel_err(a, fd[k++]));
  if (k != fd.size()) throw DimensionMismatch("analytic/FD gradient lengths differ");
  return worst;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, uint64_t seed, double spread = 1.0) {
  return seeded_init(rows, cols, seed, InitScheme::uniform(spread));
}

double temporal_case(uint64_t seed, double eps) {
  SplitMix64 rng(stream_seed(seed, "temporal_shape"));
  std::size_t frames = 2 + rng.next_below(5);
  std::size_t d_m = 3, d_k = 3, d_v = 3;
  Matrix m = random_matrix(frames, d_m, stream_seed(seed, "temporal_m"));
  AttentionParams long_p = AttentionParams::seeded(d_m, d_k, d_v, stream_seed(seed, "lp"));
  AttentionParams short_p = AttentionParams::seeded(d_m, d_k, d_v, stream_seed(seed, "sp"));
  WindowConfig window{1, true};
  Probe probe = make_probe(frames, 2 * d_v, seed);

  auto loss_on = [&](Tape& tape) {
    auto lt = long_term_attention(tape, tape.value(m), put_on_tape(tape, long_p));
    auto st = short_term_attention(tape, tape.value(m), put_on_tape(tape, short_p), window);
    return apply_probe(tape, fuse_long_short(tape, lt.output, st.output), probe);
  };
  std::vector<Matrix*> params{&long_p.w_q, &long_p.w_k, &long_p.w_v,
                              &short_p.w_q, &short_p.w_k, &short_p.w_v};
  auto forward = [&]() {
    Tape tape;
    return tape.val(loss_on(tape)).at(0, 0);
  };
  auto analytic = [&]() {
    Tape tape;
    // parameter leaves land on the tape in the same order as `params`
    std::vector<ValueId> ids;
    auto lt_ids = put_on_tape(tape, long_p);
    auto st_ids = put_on_tape(tape, short_p);
    ids = {lt_ids.w_q, lt_ids.w_k, lt_ids.w_v, st_ids.w_q, st_ids.w_k, st_ids.w_v};
    auto lt = long_term_attention(tape, tape.value(m), lt_ids);
    auto st = short_term_attention(tape, tape.value(m), st_ids, window);
    ValueId loss = apply_probe(tape, fuse_long_short(tape, lt.output, st.output), probe);
    tape.backward(loss);
    std::vector<Matrix> grads;
    for (ValueId id : ids) grads.push_back(tape.grad(id));
    return grads;
  };
  return check_case(params, forward, analytic, eps);
}

double semantic_case(uint64_t seed, double eps) {
  SplitMix64 rng(stream_seed(seed, "semantic_shape"));
  std::size_t frames = 2 + rng.next_below(4);
  std::size_t d_c = 3, d_a = 4, d_k = 3, d_v = 3;
  Matrix c = random_matrix(frames, d_c, stream_seed(seed, "sem_c"));
  Matrix a = random_matrix(frames, d_a, stream_seed(seed, "sem_a"));
  AttentionParams p = AttentionParams::seeded_cross(d_c, d_a, d_k, d_v,
                                                    stream_seed(seed, "sem_p"));
  Probe probe = make_probe(frames, d_v, seed);

  std::vector<Matrix*> params{&p.w_q, &p.w_k, &p.w_v};
  auto forward = [&]() {
    Tape tape;
    auto ids = visual_action_attention(tape, tape.value(c), tape.value(a), put_on_tape(tape, p));
    return tape.val(apply_probe(tape, ids.b_seq, probe)).at(0, 0);
  };
  auto analytic = [&]() {
    Tape tape;
    auto pid = put_on_tape(tape, p);
    auto ids = visual_action_attention(tape, tape.value(c), tape.value(a), pid);
    tape.backward(apply_probe(tape, ids.b_seq, probe));
    return std::vector<Matrix>{tape.grad(pid.w_q), tape.grad(pid.w_k), tape.grad(pid.w_v)};
  };
  return check_case(params, forward, analytic, eps);
}

double graph_case(uint64_t seed, double eps) {
  SynthDims dims{3, 3, 4};
  auto synth = synth_generate(seed, 3, 2, dims, SynthPattern::Burst);
  auto object_graph = build_object_graph(synth.bundle.object_feats, synth.bundle.object_mask,
                                         ObjectGraphConfig{0.3, 2});
  auto merged = merge_graphs(object_graph, build_action_graph(synth.bundle.action_feats));

  std::size_t d_act = 3, d_g = 3, d_k = 2;
  Matrix action_feats = random_matrix(3, d_act, stream_seed(seed, "graph_act"));
  GraphTransformerParams p = GraphTransformerParams::seeded(dims.object_dim, d_act, d_g, d_k, 1,
                                                            stream_seed(seed, "graph_p"));
  Probe probe = make_probe(3, d_g, seed);

  std::vector<Matrix*> params;
  for (auto& [name, mat] : p.parameters()) params.push_back(mat);
  auto forward = [&]() {
    Tape tape;
    auto enc = graph_transformer_encode(tape, merged, put_on_tape(tape, p),
                                        tape.value(action_feats));
    return tape.val(apply_probe(tape, enc.frame_sequence, probe)).at(0, 0);
  };
  auto analytic = [&]() {
    Tape tape;
    std::size_t first = tape.size();
    auto pid = put_on_tape(tape, p);
    std::size_t count = tape.size() - first;
    auto enc = graph_transformer_encode(tape, merged, pid, tape.value(action_feats));
    tape.backward(apply_probe(tape, enc.frame_sequence, probe));
    std::vector<Matrix> grads;
    for (std::size_t i = 0; i < count; ++i) grads.push_back(tape.grad(ValueId{first + i}));
    return grads;
  };
  return check_case(params, forward, analytic, eps);
}

double decoder_case(uint64_t seed, double eps) {
  DecoderConfig config;
  config.model_dim = 4;
  config.ff_dim = 6;
  config.blocks = 2;
  config.max_len = 8;
  std::size_t vocab = 7, d_vis = 3, frames = 2;
  DecoderParams p = DecoderParams::seeded(config, vocab, d_vis, stream_seed(seed, "dec_p"));
  Matrix visual = random_matrix(frames, d_vis, stream_seed(seed, "dec_vis"));
  std::vector<int> prefix{1, 5, 4};
  std::vector<int> targets{5, 4, 2};

  std::vector<Matrix*> params;
  for (auto& [name, mat] : p.parameters("")) params.push_back(mat);
  auto forward = [&]() {
    Tape tape;
    ValueId logits = decoder_forward(tape, tape.value(visual), prefix, put_on_tape(tape, p));
    return tape.val(tape.cross_entropy(logits, targets, 0)).at(0, 0);
  };
  auto analytic = [&]() {
    Tape tape;
    std::size_t first = tape.size();
    auto pid = put_on_tape(tape, p);
    std::size_t count = tape.size() - first;
    ValueId logits = decoder_forward(tape, tape.value(visual), prefix, pid);
    tape.backward(tape.cross_entropy(logits, targets, 0));
    std::vector<Matrix> grads;
    for (std::size_t i = 0; i < count; ++i) grads.push_back(tape.grad(ValueId{first + i}));
    return grads;
  };
  return check_case(params, forward, analytic, eps);
}

double cross_entropy_case(uint64_t seed, double eps) {
  Matrix logits = random_matrix(3, 5, stream_seed(seed, "ce_logits"), 2.0);
  std::vector<int> targets{4, 0, 2};  // middle position is PAD
  std::vector<Matrix*> params{&logits};
  auto forward = [&]() {
    Tape tape;
    return tape.val(tape.cross_entropy(tape.value(logits), targets, 0)).at(0, 0);
  };
  auto analytic = [&]() {
    Tape tape;
    ValueId id = tape.value(logits);
    tape.backward(tape.cross_entropy(id, targets, 0));
    return std::vector<Matrix>{tape.grad(id)};
  };
  return check_case(params, forward, analytic, eps);
}

double kl_case(uint64_t seed, double eps) {
  Matrix student = random_matrix(3, 5, stream_seed(seed, "kl_student"), 2.0);
  Matrix teacher = random_matrix(3, 5, stream_seed(seed, "kl_teacher"), 2.0);
  std::vector<uint8_t> valid{1, 1, 0};
  double tau = 1.5;
  std::vector<Matrix*> params{&student};
  auto forward = [&]() {
    Tape tape;
    return tape.val(tape.kl_teacher_student(tape.value(student), teacher, tau, valid)).at(0, 0);
  };
  auto analytic = [&]() {
    Tape tape;
    ValueId id = tape.value(student);
    tape.backward(tape.kl_teacher_student(id, teacher, tau, valid));
    return std::vector<Matrix>{tape.grad(id)};
  };
  return check_case(params, forward, analytic, eps);
}

double end_to_end_case(uint64_t seed, double eps) {
  TrainConfig config;
  config.seed = seed;
  config.dims.attention_key = 2;
  config.dims.attention_value = 2;
  config.dims.semantic_key = 3;
  config.dims.semantic_value = 3;
  config.dims.graph_dim = 3;
  config.dims.graph_key = 2;
  config.dims.decoder.model_dim = 3;
  config.dims.decoder.ff_dim = 4;
  config.dims.decoder.blocks = 1;
  config.dims.decoder.max_len = 8;

  SynthDims dims{3, 3, 4};
  auto synth = synth_generate(seed, 3, 2, dims, SynthPattern::Burst);
  Vocabulary vocab = Vocabulary::build({synth.caption}, 1);
  TrainedModel model = make_model(config, DataDims{3, 3, 4}, vocab);
  TemporalGraph merged = build_video_graph(synth.bundle, config);

  std::vector<int> ids = vocab.encode(synth.caption.captions[0]);
  std::vector<int> prefix{Vocabulary::kBos};
  prefix.insert(prefix.end(), ids.begin(), ids.end());
  std::vector<int> targets = ids;
  targets.push_back(Vocabulary::kEos);

  std::vector<Matrix*> params;
  for (auto& [name, mat] : model.teacher.parameters()) params.push_back(mat);
  auto forward = [&]() {
    Tape tape;
    return tape
        .val(teacher_loss_on_tape(tape, model, synth.bundle, merged, prefix, targets))
        .at(0, 0);
  };
  auto analytic = [&]() {
    Tape tape;
    std::vector<ValueId> ids_out;
    tape.backward(
        teacher_loss_on_tape(tape, model, synth.bundle, merged, prefix, targets, &ids_out));
    std::vector<Matrix> grads;
    for (ValueId id : ids_out) grads.push_back(tape.grad(id));
    return grads;
  };
  return check_case(params, forward, analytic, eps);
}

}  // namespace

double gradient_rel_err(double analytic, double numeric) {
  double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
  return std::fabs(analytic - numeric) / denom;
}

bool GradCheckReport::all_pass() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const GradCheckEntry& e) { return e.pass; });
}

GradCheckReport run_gradcheck(uint64_t seed, const GradCheckOptions& options) {
  struct Group {
    const char* name;
    double tolerance;
    double (*run)(uint64_t, double);
  };
  const Group groups[] = {
      {"temporal_attention", 1e-4, temporal_case},
      {"semantic_aware", 1e-4, semantic_case},
      {"graph_transformer", 1e-4, graph_case},
      {"decoder", 1e-4, decoder_case},
      {"loss_cross_entropy", 1e-4, cross_entropy_case},
      {"loss_kl_distillation", 1e-4, kl_case},
      {"end_to_end_teacher", 1e-3, end_to_end_case},
  };

  GradCheckReport report;
  for (const Group& group : groups) {
    GradCheckEntry entry;
    entry.group = group.name;
    entry.tolerance = group.tolerance;
    for (std::size_t round = 0; round < options.rounds; ++round) {
      uint64_t case_seed = stream_seed(seed, std::string(group.name) + "#" +
                                                 std::to_string(round));
      entry.max_rel_err = std::max(entry.max_rel_err, group.run(case_seed, options.eps));
    }
    if (options.corrupt && entry.group == "temporal_attention") entry.max_rel_err += 1.0;
    entry.pass = entry.max_rel_err <= entry.tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace vcap
