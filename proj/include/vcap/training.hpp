#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vcap/caption_model.hpp"
#include "vcap/features.hpp"
#include "vcap/graph.hpp"
#include "vcap/graph_transformer.hpp"
#include "vcap/semantic_aware.hpp"
#include "vcap/temporal_attention.hpp"

namespace vcap {

struct AblationFlags {
  bool disable_temporal = false;  // feed the raw action rows, duplicated, as A_fused
  bool disable_semantic = false;  // feed A_fused rows as the action-node features
};

struct ModelDims {
  std::size_t attention_key = 16;
  std::size_t attention_value = 16;
  std::size_t semantic_key = 16;
  std::size_t semantic_value = 16;
  std::size_t graph_dim = 16;
  std::size_t graph_key = 16;
  DecoderConfig decoder;  // 128/256/2 blocks/max_len 20 defaults
};

struct TrainConfig {
  double learning_rate = 2e-3;
  std::size_t epochs = 500;
  double lambda_kd = 1.0;
  double tau = 1.0;
  uint64_t seed = 42;
  WindowConfig window;         // radius 1, include_self
  double theta = 0.5;
  std::size_t top_k = 1;
  std::size_t graph_layers = 1;
  AblationFlags ablate;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::size_t min_freq = 1;
  ModelDims dims;

  // Unknown keys are rejected; missing keys keep their defaults.
  static TrainConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double teacher_ce = 0.0;
  double student_ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

struct TrainLog {
  std::string config_echo;  // effective config, defaults filled in
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;

  void write_csv(const std::filesystem::path& path) const;
};

// Teacher network: the graph-transformer pipeline. Optional parts are absent
// under the matching ablation flag.
struct TeacherModel {
  std::optional<AttentionParams> long_attn;
  std::optional<AttentionParams> short_attn;
  std::optional<AttentionParams> semantic;
  GraphTransformerParams graph;
  DecoderParams decoder;

  std::vector<std::pair<std::string, Matrix*>> parameters();
};

struct DataDims {
  std::size_t object_dim = 0;
  std::size_t action_dim = 0;
  std::size_t visual_text_dim = 0;
};

struct TrainedModel {
  TeacherModel teacher;
  DecoderParams student;
  Vocabulary vocab;
  TrainConfig config;
  DataDims data_dims;
};

struct TrainExample {
  FeatureBundle bundle;
  CaptionRecord record;
};
using Dataset = std::vector<TrainExample>;

// ---- losses ----

// Mean over non-PAD positions of -log softmax(logits)[target].
double cross_entropy_loss(const Matrix& logits, const std::vector<int>& targets, int pad_id);
// tau^2-scaled mean KL(teacher || student) with temperature-softened rows; the
// teacher side is a constant.
double kl_distillation_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                            double tau);
double total_loss(double teacher_ce, double student_ce, double kl, double lambda_kd);

// ---- training ----

struct TrainResult {
  TrainedModel model;
  TrainLog log;
};

using CheckpointHook = std::function<void(std::size_t epoch, const TrainedModel&)>;

// Full-batch teacher/student training with knowledge distillation. Both
// networks step together each epoch with shared data; the object graph is
// built once per video, the action chain is re-encoded from the current
// behavior-semantic features every pass. Deterministic for a fixed seed.
TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const CheckpointHook& hook = nullptr);

// Builds a fresh seeded model for the given data dims (training start and
// checkpoint loading both go through here).
TrainedModel make_model(const TrainConfig& config, const DataDims& dims,
                        const Vocabulary& vocab);

// Frozen per-video graph: object graph merged with the action chain skeleton.
TemporalGraph build_video_graph(const FeatureBundle& bundle, const TrainConfig& config);

// Records the whole teacher pipeline for one video and returns the
// cross-entropy loss node. When param_ids is given it receives the tape
// handles of every teacher parameter, aligned with TeacherModel::parameters().
ValueId teacher_loss_on_tape(Tape& tape, const TrainedModel& model, const FeatureBundle& bundle,
                             const TemporalGraph& merged, const std::vector<int>& prefix,
                             const std::vector<int>& targets,
                             std::vector<ValueId>* param_ids = nullptr);

// Teacher-pipeline decoder input: per-frame concat of the visual-text row and
// the graph-transformer frame row.
Matrix teacher_visual_input(const TrainedModel& model, const FeatureBundle& bundle);
// Greedy/beam caption from the teacher pipeline (training-time network).
std::string teacher_caption(const TrainedModel& model, const FeatureBundle& bundle,
                            std::size_t beam = 1);

// Student-only caption from the visual-text rows; never touches graph code.
std::string infer_caption(const DecoderParams& student, const Vocabulary& vocab,
                          const Matrix& visual_text, std::size_t beam = 1);

// ---- checkpoints ----

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& dir);
TrainedModel load_checkpoint(const std::filesystem::path& dir);

struct StudentCheckpoint {
  DecoderParams decoder;
  Vocabulary vocab;
  TrainConfig config;
};
// Reads student.vft + model.json only; teacher tensors are never opened.
StudentCheckpoint load_student_checkpoint(const std::filesystem::path& dir);

// ---- optimizer ----

// Adam, beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr) : lr_(lr) {}
  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace vcap
