#include "vcap/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vcap/errors.hpp"
#include "vcap/rng.hpp"

namespace vcap {

namespace {

using nlohmann::json;

template <typename T>
void take(json& doc, const char* key, T& out) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw CorruptHeader(std::string("config key '") + key + "': " + e.what());
  }
  doc.erase(key);
}

void attention_params_into(std::vector<std::pair<std::string, Matrix*>>& out,
                           const std::string& base, AttentionParams& p) {
  out.emplace_back(base + ".w_q", &p.w_q);
  out.emplace_back(base + ".w_k", &p.w_k);
  out.emplace_back(base + ".w_v", &p.w_v);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw CorruptHeader(std::string("config JSON: ") + e.what());
  }
  if (!doc.is_object()) throw CorruptHeader("config must be a JSON object");

  TrainConfig c;
  take(doc, "learning_rate", c.learning_rate);
  take(doc, "epochs", c.epochs);
  take(doc, "lambda_kd", c.lambda_kd);
  take(doc, "tau", c.tau);
  take(doc, "seed", c.seed);
  take(doc, "window_radius", c.window.radius);
  take(doc, "window_include_self", c.window.include_self);
  take(doc, "theta", c.theta);
  take(doc, "top_k", c.top_k);
  take(doc, "graph_layers", c.graph_layers);
  take(doc, "disable_temporal", c.ablate.disable_temporal);
  take(doc, "disable_semantic", c.ablate.disable_semantic);
  take(doc, "checkpoint_every", c.checkpoint_every);
  take(doc, "min_freq", c.min_freq);
  if (doc.contains("dims")) {
    json dims = doc.at("dims");
    doc.erase("dims");
    if (!dims.is_object()) throw CorruptHeader("config 'dims' must be an object");
    take(dims, "attention_key", c.dims.attention_key);
    take(dims, "attention_value", c.dims.attention_value);
    take(dims, "semantic_key", c.dims.semantic_key);
    take(dims, "semantic_value", c.dims.semantic_value);
    take(dims, "graph_dim", c.dims.graph_dim);
    take(dims, "graph_key", c.dims.graph_key);
    take(dims, "decoder_dim", c.dims.decoder.model_dim);
    take(dims, "decoder_ff", c.dims.decoder.ff_dim);
    take(dims, "decoder_blocks", c.dims.decoder.blocks);
    take(dims, "max_len", c.dims.decoder.max_len);
    if (!dims.empty()) throw CorruptHeader("unknown config key 'dims." + dims.begin().key() + "'");
  }
  if (!doc.empty()) throw CorruptHeader("unknown config key '" + doc.begin().key() + "'");

  if (!(c.learning_rate > 0.0)) throw CorruptHeader("learning_rate must be positive");
  if (c.epochs == 0) throw CorruptHeader("epochs must be at least 1");
  if (c.lambda_kd < 0.0) throw CorruptHeader("lambda_kd must be nonnegative");
  if (!(c.tau > 0.0)) throw CorruptHeader("tau must be positive");
  if (c.graph_layers == 0) throw CorruptHeader("graph_layers must be at least 1");
  if (c.min_freq == 0) throw CorruptHeader("min_freq must be at least 1");
  return c;
}

std::string TrainConfig::to_json_text() const {
  json doc;
  doc["learning_rate"] = learning_rate;
  doc["epochs"] = epochs;
  doc["lambda_kd"] = lambda_kd;
  doc["tau"] = tau;
  doc["seed"] = seed;
  doc["window_radius"] = window.radius;
  doc["window_include_self"] = window.include_self;
  doc["theta"] = theta;
  doc["top_k"] = top_k;
  doc["graph_layers"] = graph_layers;
  doc["disable_temporal"] = ablate.disable_temporal;
  doc["disable_semantic"] = ablate.disable_semantic;
  doc["checkpoint_every"] = checkpoint_every;
  doc["min_freq"] = min_freq;
  doc["dims"] = {{"attention_key", dims.attention_key},
                 {"attention_value", dims.attention_value},
                 {"semantic_key", dims.semantic_key},
                 {"semantic_value", dims.semantic_value},
                 {"graph_dim", dims.graph_dim},
                 {"graph_key", dims.graph_key},
                 {"decoder_dim", dims.decoder.model_dim},
                 {"decoder_ff", dims.decoder.ff_dim},
                 {"decoder_blocks", dims.decoder.blocks},
                 {"max_len", dims.decoder.max_len}};
  return doc.dump();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "# config: " << config_echo << "\n";
  out << "epoch,teacher_ce,student_ce,kl,total\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << format_double(e.teacher_ce) << ',' << format_double(e.student_ce)
        << ',' << format_double(e.kl) << ',' << format_double(e.total) << "\n";
  }
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

std::vector<std::pair<std::string, Matrix*>> TeacherModel::parameters() {
  std::vector<std::pair<std::string, Matrix*>> out;
  if (long_attn) attention_params_into(out, "temporal.long", *long_attn);
  if (short_attn) attention_params_into(out, "temporal.short", *short_attn);
  if (semantic) attention_params_into(out, "semantic", *semantic);
  for (auto& [name, mat] : graph.parameters()) out.emplace_back(name, mat);
  for (auto& [name, mat] : decoder.parameters("teacher.")) out.emplace_back(name, mat);
  return out;
}

double cross_entropy_loss(const Matrix& logits, const std::vector<int>& targets, int pad_id) {
  Tape tape;
  return tape.val(tape.cross_entropy(tape.value(logits), targets, pad_id)).at(0, 0);
}

double kl_distillation_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                            double tau) {
  Tape tape;
  std::vector<uint8_t> valid(student_logits.rows, 1);
  return tape.val(tape.kl_teacher_student(tape.value(student_logits), teacher_logits, tau, valid))
      .at(0, 0);
}

double total_loss(double teacher_ce, double student_ce, double kl, double lambda_kd) {
  if (lambda_kd < 0.0) throw NonPositiveScale("lambda_kd must be nonnegative");
  return teacher_ce + student_ce + lambda_kd * kl;
}

TrainedModel make_model(const TrainConfig& config, const DataDims& dims,
                        const Vocabulary& vocab) {
  if (dims.object_dim == 0 || dims.action_dim == 0 || dims.visual_text_dim == 0)
    throw DimMismatch("feature dims must be positive");
  TrainedModel m;
  m.config = config;
  m.vocab = vocab;
  m.data_dims = dims;

  const ModelDims& md = config.dims;
  std::size_t fused_width = config.ablate.disable_temporal ? 2 * dims.action_dim
                                                           : 2 * md.attention_value;
  if (!config.ablate.disable_temporal) {
    m.teacher.long_attn = AttentionParams::seeded(dims.action_dim, md.attention_key,
                                                  md.attention_value,
                                                  stream_seed(config.seed, "temporal.long"));
    m.teacher.short_attn = AttentionParams::seeded(dims.action_dim, md.attention_key,
                                                   md.attention_value,
                                                   stream_seed(config.seed, "temporal.short"));
  }
  if (!config.ablate.disable_semantic) {
    m.teacher.semantic = AttentionParams::seeded_cross(dims.visual_text_dim, fused_width,
                                                       md.semantic_key, md.semantic_value,
                                                       stream_seed(config.seed, "semantic"));
  }
  std::size_t action_node_width = config.ablate.disable_semantic ? fused_width
                                                                 : md.semantic_value;
  m.teacher.graph = GraphTransformerParams::seeded(dims.object_dim, action_node_width,
                                                   md.graph_dim, md.graph_key,
                                                   config.graph_layers,
                                                   stream_seed(config.seed, "graph"));
  m.teacher.decoder = DecoderParams::seeded(md.decoder, vocab.size(),
                                            dims.visual_text_dim + md.graph_dim,
                                            stream_seed(config.seed, "teacher_decoder"));
  m.student = DecoderParams::seeded(md.decoder, vocab.size(), dims.visual_text_dim,
                                    stream_seed(config.seed, "student_decoder"));
  return m;
}

namespace {

struct TeacherIds {
  std::optional<AttentionParamIds> long_attn, short_attn, semantic;
  GraphTransformerParamIds graph;
  DecoderParamIds decoder;
};

TeacherIds put_teacher_on_tape(Tape& tape, const TeacherModel& model) {
  // mirror TeacherModel::parameters() order exactly; every call below records
  // leaf values only
  TeacherIds ids;
  if (model.long_attn) ids.long_attn = put_on_tape(tape, *model.long_attn);
  if (model.short_attn) ids.short_attn = put_on_tape(tape, *model.short_attn);
  if (model.semantic) ids.semantic = put_on_tape(tape, *model.semantic);
  ids.graph = put_on_tape(tape, model.graph);
  ids.decoder = put_on_tape(tape, model.decoder);
  return ids;
}

// per-frame decoder input: visual-text rows concatenated with the
// graph-transformer frame rows
ValueId teacher_visual_on_tape(Tape& tape, const TeacherIds& ids, ValueId action_in,
                               ValueId visual_text_in, const TemporalGraph& merged,
                               const TrainConfig& config) {
  ValueId a_fused;
  if (ids.long_attn) {
    auto lt = long_term_attention(tape, action_in, *ids.long_attn);
    auto st = short_term_attention(tape, action_in, *ids.short_attn, config.window);
    a_fused = fuse_long_short(tape, lt.output, st.output);
  } else {
    a_fused = tape.concat_rows(action_in, action_in);
  }
  ValueId action_nodes = a_fused;
  if (ids.semantic) {
    action_nodes = visual_action_attention(tape, visual_text_in, a_fused, *ids.semantic).b_seq;
  }
  auto enc = graph_transformer_encode(tape, merged, ids.graph, action_nodes);
  return tape.concat_rows(visual_text_in, enc.frame_sequence);
}

TemporalGraph build_merged_structure(const FeatureBundle& bundle, const TrainConfig& config) {
  auto object_graph = build_object_graph(bundle.object_feats, bundle.object_mask,
                                         ObjectGraphConfig{config.theta, config.top_k});
  // node features of the action chain are overridden on the tape path
  auto action_graph = build_action_graph(bundle.action_feats);
  return merge_graphs(object_graph, action_graph);
}

DataDims dataset_dims(const Dataset& dataset) {
  DataDims dims;
  dims.object_dim = dataset[0].bundle.object_feats[0].cols;
  dims.action_dim = dataset[0].bundle.action_feats.cols;
  dims.visual_text_dim = dataset[0].bundle.visual_text_feats.cols;
  for (const auto& ex : dataset) {
    ex.bundle.validate();
    if (ex.bundle.object_feats[0].cols != dims.object_dim ||
        ex.bundle.action_feats.cols != dims.action_dim ||
        ex.bundle.visual_text_feats.cols != dims.visual_text_dim)
      throw DimMismatch("feature dims differ across dataset");
  }
  return dims;
}

}  // namespace

void AdamOptimizer::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw DimensionMismatch("optimizer params vs grads");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows, p->cols);
      v_.emplace_back(p->rows, p->cols);
    }
  }
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, double(t_));
  double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = grads[i];
    if (!p.same_shape(g)) throw DimensionMismatch("gradient shape differs from parameter");
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      m_[i].data[j] = beta1_ * m_[i].data[j] + (1.0 - beta1_) * g.data[j];
      v_[i].data[j] = beta2_ * v_[i].data[j] + (1.0 - beta2_) * g.data[j] * g.data[j];
      double mhat = m_[i].data[j] / bc1;
      double vhat = v_[i].data[j] / bc2;
      p.data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const CheckpointHook& hook) {
  if (dataset.empty()) throw EmptyDataset("training needs at least one video");
  auto started = std::chrono::steady_clock::now();

  DataDims dims = dataset_dims(dataset);
  std::vector<CaptionRecord> records;
  for (const auto& ex : dataset) records.push_back(ex.record);
  Vocabulary vocab = Vocabulary::build(records, config.min_freq);

  TrainedModel model = make_model(config, dims, vocab);

  // fixed per-video state: graph structure and teacher-forcing sequences
  struct VideoState {
    TemporalGraph merged;
    std::vector<int> prefix;   // BOS + caption ids
    std::vector<int> targets;  // caption ids + EOS
    std::vector<uint8_t> valid;
  };
  std::vector<VideoState> videos;
  for (const auto& ex : dataset) {
    VideoState vs;
    vs.merged = build_merged_structure(ex.bundle, config);
    std::vector<int> ids = vocab.encode(ex.record.captions.at(0));
    std::size_t cap = config.dims.decoder.max_len - 1;
    if (ids.size() > cap) ids.resize(cap);
    vs.prefix.push_back(Vocabulary::kBos);
    vs.prefix.insert(vs.prefix.end(), ids.begin(), ids.end());
    vs.targets = ids;
    vs.targets.push_back(Vocabulary::kEos);
    vs.valid.assign(vs.targets.size(), 1);
    for (std::size_t i = 0; i < vs.targets.size(); ++i)
      if (vs.targets[i] == Vocabulary::kPad) vs.valid[i] = 0;
    videos.push_back(std::move(vs));
  }

  auto registry = model.teacher.parameters();
  for (auto& [name, mat] : model.student.parameters("student.")) registry.emplace_back(name, mat);
  std::vector<Matrix*> params;
  for (auto& [name, mat] : registry) params.push_back(mat);

  AdamOptimizer optimizer(config.learning_rate);
  TrainLog log;
  log.config_echo = config.to_json_text();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<Matrix> grads;
    for (Matrix* p : params) grads.emplace_back(p->rows, p->cols);
    EpochStats stats;
    stats.epoch = epoch;

    for (std::size_t v = 0; v < dataset.size(); ++v) {
      Tape tape;
      std::size_t first_param = tape.size();
      TeacherIds teacher_ids = put_teacher_on_tape(tape, model.teacher);
      std::size_t teacher_count = tape.size() - first_param;
      DecoderParamIds student_ids = put_on_tape(tape, model.student);
      std::size_t param_count = tape.size() - first_param;
      if (param_count != params.size())
        throw DimensionMismatch("parameter registry out of sync with tape layout");
      (void)teacher_count;

      ValueId action_in = tape.value(dataset[v].bundle.action_feats);
      ValueId visual_text_in = tape.value(dataset[v].bundle.visual_text_feats);
      ValueId teacher_visual = teacher_visual_on_tape(tape, teacher_ids, action_in,
                                                      visual_text_in, videos[v].merged, config);
      ValueId teacher_logits = decoder_forward(tape, teacher_visual, videos[v].prefix,
                                               teacher_ids.decoder);
      ValueId student_logits = decoder_forward(tape, visual_text_in, videos[v].prefix,
                                               student_ids);
      ValueId t_ce = tape.cross_entropy(teacher_logits, videos[v].targets, Vocabulary::kPad);
      ValueId s_ce = tape.cross_entropy(student_logits, videos[v].targets, Vocabulary::kPad);
      ValueId kl = tape.kl_teacher_student(student_logits, tape.val(teacher_logits), config.tau,
                                           videos[v].valid);
      ValueId total = tape.add(tape.add(t_ce, s_ce), tape.scale(kl, config.lambda_kd));

      double total_v = tape.val(total).at(0, 0);
      if (!std::isfinite(total_v))
        throw DivergedLoss("non-finite loss at epoch " + std::to_string(epoch));
      stats.teacher_ce += tape.val(t_ce).at(0, 0);
      stats.student_ce += tape.val(s_ce).at(0, 0);
      stats.kl += tape.val(kl).at(0, 0);
      stats.total += total_v;

      tape.backward(total);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& g = tape.grad(ValueId{first_param + i});
        for (std::size_t j = 0; j < g.data.size(); ++j) grads[i].data[j] += g.data[j];
      }
    }

    double inv = 1.0 / double(dataset.size());
    for (Matrix& g : grads)
      for (double& x : g.data) x *= inv;
    optimizer.step(params, grads);

    stats.teacher_ce *= inv;
    stats.student_ce *= inv;
    stats.kl *= inv;
    stats.total *= inv;
    log.epochs.push_back(stats);

    if (hook && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0)
      hook(epoch, model);
  }

  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return TrainResult{std::move(model), std::move(log)};
}

TemporalGraph build_video_graph(const FeatureBundle& bundle, const TrainConfig& config) {
  return build_merged_structure(bundle, config);
}

ValueId teacher_loss_on_tape(Tape& tape, const TrainedModel& model, const FeatureBundle& bundle,
                             const TemporalGraph& merged, const std::vector<int>& prefix,
                             const std::vector<int>& targets, std::vector<ValueId>* param_ids) {
  std::size_t first_param = tape.size();
  TeacherIds ids = put_teacher_on_tape(tape, model.teacher);
  std::size_t count = tape.size() - first_param;
  if (param_ids) {
    param_ids->clear();
    for (std::size_t i = 0; i < count; ++i) param_ids->push_back(ValueId{first_param + i});
  }
  ValueId visual = teacher_visual_on_tape(tape, ids, tape.value(bundle.action_feats),
                                          tape.value(bundle.visual_text_feats), merged,
                                          model.config);
  ValueId logits = decoder_forward(tape, visual, prefix, ids.decoder);
  return tape.cross_entropy(logits, targets, Vocabulary::kPad);
}

Matrix teacher_visual_input(const TrainedModel& model, const FeatureBundle& bundle) {
  Tape tape;
  TeacherIds ids = put_teacher_on_tape(tape, model.teacher);
  TemporalGraph merged = build_merged_structure(bundle, model.config);
  ValueId visual = teacher_visual_on_tape(tape, ids, tape.value(bundle.action_feats),
                                          tape.value(bundle.visual_text_feats), merged,
                                          model.config);
  return tape.val(visual);
}

std::string teacher_caption(const TrainedModel& model, const FeatureBundle& bundle,
                            std::size_t beam) {
  Matrix visual = teacher_visual_input(model, bundle);
  CaptionHypothesis hyp =
      beam <= 1 ? greedy_decode(visual, model.teacher.decoder, model.config.dims.decoder.max_len)
                : beam_decode(visual, model.teacher.decoder, beam,
                              model.config.dims.decoder.max_len);
  return model.vocab.decode(hyp.tokens);
}

std::string infer_caption(const DecoderParams& student, const Vocabulary& vocab,
                          const Matrix& visual_text, std::size_t beam) {
  CaptionHypothesis hyp = beam <= 1
                              ? greedy_decode(visual_text, student, student.config.max_len)
                              : beam_decode(visual_text, student, beam, student.config.max_len);
  return vocab.decode(hyp.tokens);
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  TensorArchive teacher;
  TeacherModel& t = const_cast<TrainedModel&>(model).teacher;
  for (auto& [name, mat] : t.parameters()) teacher.add_matrix(name, *mat);
  save_archive(teacher, dir / "teacher.vft");

  TensorArchive student;
  DecoderParams& s = const_cast<TrainedModel&>(model).student;
  for (auto& [name, mat] : s.parameters("student.")) student.add_matrix(name, *mat);
  save_archive(student, dir / "student.vft");

  nlohmann::json doc;
  doc["config"] = nlohmann::json::parse(model.config.to_json_text());
  std::vector<std::string> tokens(model.vocab.id_to_token.begin() + 4,
                                  model.vocab.id_to_token.end());
  doc["vocab"] = tokens;
  doc["data_dims"] = {{"object_dim", model.data_dims.object_dim},
                      {"action_dim", model.data_dims.action_dim},
                      {"visual_text_dim", model.data_dims.visual_text_dim}};
  std::ofstream out(dir / "model.json", std::ios::trunc);
  if (!out) throw IoError("cannot write '" + (dir / "model.json").string() + "'");
  out << doc.dump(2) << "\n";
}

namespace {

struct Sidecar {
  TrainConfig config;
  Vocabulary vocab;
  DataDims dims;
};

Sidecar load_sidecar(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw IoError("cannot open '" + (dir / "model.json").string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(std::string("model.json: ") + e.what());
  }
  Sidecar side;
  try {
    side.config = TrainConfig::from_json_text(doc.at("config").dump());
    side.vocab.id_to_token = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (const auto& tok : doc.at("vocab"))
      side.vocab.id_to_token.push_back(tok.get<std::string>());
    for (std::size_t i = 0; i < side.vocab.id_to_token.size(); ++i)
      side.vocab.token_to_id[side.vocab.id_to_token[i]] = int(i);
    side.dims.object_dim = doc.at("data_dims").at("object_dim").get<std::size_t>();
    side.dims.action_dim = doc.at("data_dims").at("action_dim").get<std::size_t>();
    side.dims.visual_text_dim = doc.at("data_dims").at("visual_text_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(std::string("model.json fields: ") + e.what());
  }
  return side;
}

void fill_from_archive(const TensorArchive& archive,
                       std::vector<std::pair<std::string, Matrix*>> params) {
  for (auto& [name, mat] : params) {
    Matrix loaded = archive.matrix(name);
    if (!loaded.same_shape(*mat))
      throw DimMismatch("checkpoint tensor '" + name + "' has unexpected shape");
    *mat = std::move(loaded);
  }
}

}  // namespace

TrainedModel load_checkpoint(const std::filesystem::path& dir) {
  Sidecar side = load_sidecar(dir);
  TrainedModel model = make_model(side.config, side.dims, side.vocab);
  fill_from_archive(load_archive(dir / "teacher.vft"), model.teacher.parameters());
  fill_from_archive(load_archive(dir / "student.vft"), model.student.parameters("student."));
  return model;
}

StudentCheckpoint load_student_checkpoint(const std::filesystem::path& dir) {
  Sidecar side = load_sidecar(dir);
  StudentCheckpoint ckpt;
  ckpt.config = side.config;
  ckpt.vocab = side.vocab;
  ckpt.decoder = DecoderParams::seeded(side.config.dims.decoder, side.vocab.size(),
                                       side.dims.visual_text_dim,
                                       stream_seed(side.config.seed, "student_decoder"));
  fill_from_archive(load_archive(dir / "student.vft"), ckpt.decoder.parameters("student."));
  return ckpt;
}

}  // namespace vcap
