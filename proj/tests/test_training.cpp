#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "vcap/errors.hpp"
#include "vcap/gradcheck.hpp"
#include "vcap/rng.hpp"
#include "vcap/training.hpp"

using namespace vcap;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  static fs::path dir = [] {
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    fs::path p = fs::temp_directory_path() / ("vcap_training_" + std::to_string(stamp));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

TrainConfig tiny_config(std::size_t epochs, uint64_t seed = 7) {
  TrainConfig c;
  c.epochs = epochs;
  c.seed = seed;
  c.learning_rate = 5e-3;
  c.dims.attention_key = 4;
  c.dims.attention_value = 4;
  c.dims.semantic_key = 4;
  c.dims.semantic_value = 4;
  c.dims.graph_dim = 4;
  c.dims.graph_key = 4;
  c.dims.decoder.model_dim = 8;
  c.dims.decoder.ff_dim = 16;
  c.dims.decoder.blocks = 1;
  c.dims.decoder.max_len = 12;
  return c;
}

Dataset tiny_dataset(std::size_t videos, std::size_t frames = 4) {
  Dataset data;
  for (std::size_t i = 0; i < videos; ++i) {
    auto pattern = i % 3 == 0   ? SynthPattern::ConstantAction
                   : i % 3 == 1 ? SynthPattern::Drift
                                : SynthPattern::Burst;
    auto synth = synth_generate(100 + i, frames, 2, SynthDims{4, 4, 6}, pattern);
    data.push_back(TrainExample{std::move(synth.bundle), std::move(synth.caption)});
  }
  return data;
}

std::vector<double> all_param_values(TrainedModel& model) {
  std::vector<double> flat;
  for (auto& [name, mat] : model.teacher.parameters())
    flat.insert(flat.end(), mat->data.begin(), mat->data.end());
  for (auto& [name, mat] : model.student.parameters("student."))
    flat.insert(flat.end(), mat->data.begin(), mat->data.end());
  return flat;
}

}  // namespace

TEST_CASE("cross entropy closed forms") {
  // forcing probability ~1 on each target drives the loss to 0
  Matrix sharp(2, 4);
  sharp.at(0, 1) = 1000.0;
  sharp.at(1, 3) = 1000.0;
  CHECK(cross_entropy_loss(sharp, {1, 3}, 0) == doctest::Approx(0.0).epsilon(1e-12));

  Matrix uniform(3, 8);
  CHECK(cross_entropy_loss(uniform, {5, 1, 7}, 0) ==
        doctest::Approx(std::log(8.0)).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy_loss(uniform, {0, 0, 0}, 0), AllPadded);
  CHECK_THROWS_AS(cross_entropy_loss(uniform, {1, 2}, 0), LengthMismatch);
}

TEST_CASE("kl distillation closed forms") {
  Matrix logits = seeded_init(2, 5, 3, InitScheme::uniform(2.0));
  CHECK(kl_distillation_loss(logits, logits, 1.0) == doctest::Approx(0.0));

  Matrix teacher(1, 4);
  teacher.at(0, 2) = 1000.0;
  Matrix student(1, 4);
  CHECK(kl_distillation_loss(student, teacher, 1.0) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-9));

  CHECK_THROWS_AS(kl_distillation_loss(Matrix(2, 3), Matrix(2, 4), 1.0), ShapeMismatch);
}

TEST_CASE("total loss composition") {
  CHECK(total_loss(1.5, 2.5, 9.0, 0.0) == 4.0);
  CHECK(total_loss(0.0, 0.0, 0.0, 3.0) == 0.0);
  double lambda = 0.7;
  double base = total_loss(1.0, 1.0, 2.0, lambda);
  double bumped = total_loss(1.0, 1.0, 3.0, lambda);
  CHECK(bumped - base == doctest::Approx(lambda).epsilon(1e-12));
}

TEST_CASE("kl gradient never reaches the teacher") {
  DecoderConfig dc;
  dc.model_dim = 4;
  dc.ff_dim = 6;
  dc.blocks = 1;
  dc.max_len = 8;
  DecoderParams teacher = DecoderParams::seeded(dc, 7, 3, 11);
  DecoderParams student = DecoderParams::seeded(dc, 7, 3, 12);
  Matrix visual = seeded_init(2, 3, 13, InitScheme::uniform(1.0));
  std::vector<int> prefix{1, 4, 5};
  std::vector<uint8_t> valid{1, 1, 1};

  Tape tape;
  std::size_t t_first = tape.size();
  auto t_ids = put_on_tape(tape, teacher);
  std::size_t t_count = tape.size() - t_first;
  auto s_ids = put_on_tape(tape, student);
  std::size_t s_count = tape.size() - t_first - t_count;

  ValueId vis = tape.value(visual);
  ValueId t_logits = decoder_forward(tape, vis, prefix, t_ids);
  ValueId s_logits = decoder_forward(tape, vis, prefix, s_ids);
  ValueId kl = tape.kl_teacher_student(s_logits, tape.val(t_logits), 1.0, valid);
  tape.backward(kl);

  for (std::size_t i = 0; i < t_count; ++i)
    for (double g : tape.grad(ValueId{t_first + i}).data) CHECK(g == 0.0);
  double student_mass = 0.0;
  for (std::size_t i = 0; i < s_count; ++i)
    for (double g : tape.grad(ValueId{t_first + t_count + i}).data) student_mass += std::fabs(g);
  CHECK(student_mass > 0.0);
}

TEST_CASE("training is deterministic per seed") {
  Dataset data = tiny_dataset(3);
  TrainConfig config = tiny_config(5);
  auto a = train(config, data);
  auto b = train(config, data);
  CHECK(all_param_values(a.model) == all_param_values(b.model));
  REQUIRE(a.log.epochs.size() == 5);
  for (std::size_t e = 0; e < 5; ++e) {
    CHECK(a.log.epochs[e].total == b.log.epochs[e].total);
    CHECK(std::isfinite(a.log.epochs[e].total));
  }

  TrainConfig other = config;
  other.seed = 8;
  auto c = train(other, data);
  CHECK(all_param_values(a.model) != all_param_values(c.model));
}

TEST_CASE("loss drops on a tiny overfit run") {
  Dataset data = tiny_dataset(3);
  auto result = train(tiny_config(40), data);
  const auto& log = result.log.epochs;
  CHECK(log.back().total < log.front().total);
  CHECK(log.back().teacher_ce < log.front().teacher_ce);
  CHECK(log.back().student_ce < log.front().student_ce);
}

TEST_CASE("ablation flags strip the matching parameters") {
  Dataset data = tiny_dataset(2);
  TrainConfig config = tiny_config(2);
  config.ablate.disable_temporal = true;
  auto no_temporal = train(config, data);
  for (auto& [name, mat] : no_temporal.model.teacher.parameters())
    CHECK(name.find("temporal.") == std::string::npos);

  TrainConfig config2 = tiny_config(2);
  config2.ablate.disable_semantic = true;
  auto no_semantic = train(config2, data);
  for (auto& [name, mat] : no_semantic.model.teacher.parameters())
    CHECK(name.find("semantic.") == std::string::npos);

  TrainConfig both = tiny_config(2);
  both.ablate.disable_temporal = true;
  both.ablate.disable_semantic = true;
  auto stripped = train(both, data);
  CHECK(!stripped.log.epochs.empty());
}

TEST_CASE("empty dataset is rejected") {
  CHECK_THROWS_AS(train(tiny_config(1), Dataset{}), EmptyDataset);
}

TEST_CASE("student inference runs no graph code") {
  Dataset data = tiny_dataset(2);
  auto result = train(tiny_config(8), data);
  uint64_t before = graph_op_count();
  std::string caption = infer_caption(result.model.student, result.model.vocab,
                                      data[0].bundle.visual_text_feats);
  CHECK(graph_op_count() == before);
  std::string again = infer_caption(result.model.student, result.model.vocab,
                                    data[0].bundle.visual_text_feats);
  CHECK(caption == again);

  // the teacher pipeline does use graph code
  teacher_caption(result.model, data[0].bundle);
  CHECK(graph_op_count() > before);
}

TEST_CASE("checkpoint round trip") {
  Dataset data = tiny_dataset(2);
  auto result = train(tiny_config(4), data);
  fs::path dir = scratch_dir() / "ckpt";
  save_checkpoint(result.model, dir);

  TrainedModel loaded = load_checkpoint(dir);
  auto originals = result.model.teacher.parameters();
  auto restored = loaded.teacher.parameters();
  REQUIRE(originals.size() == restored.size());
  for (std::size_t i = 0; i < originals.size(); ++i) {
    CHECK(originals[i].first == restored[i].first);
    const Matrix& a = *originals[i].second;
    const Matrix& b = *restored[i].second;
    REQUIRE(a.same_shape(b));
    for (std::size_t j = 0; j < a.data.size(); ++j)
      CHECK(b.data[j] == double(float(a.data[j])));  // container stores f32
  }

  StudentCheckpoint student = load_student_checkpoint(dir);
  CHECK(student.vocab.id_to_token == result.model.vocab.id_to_token);
  std::string a = infer_caption(student.decoder, student.vocab,
                                data[1].bundle.visual_text_feats);
  std::string b = infer_caption(loaded.student, loaded.vocab,
                                data[1].bundle.visual_text_feats);
  CHECK(a == b);

  // a directory holding only the teacher side is not a student checkpoint
  fs::path partial = scratch_dir() / "teacher_only";
  fs::create_directories(partial);
  fs::copy_file(dir / "teacher.vft", partial / "teacher.vft");
  fs::copy_file(dir / "model.json", partial / "model.json");
  CHECK_THROWS_AS(load_student_checkpoint(partial), IoError);
}

TEST_CASE("config json round trip, defaults and rejection") {
  TrainConfig c = TrainConfig::from_json_text("{}");
  CHECK(c.epochs == 500);
  CHECK(c.lambda_kd == 1.0);
  CHECK(c.tau == 1.0);
  CHECK(c.dims.decoder.model_dim == 128);
  CHECK(c.dims.decoder.ff_dim == 256);
  CHECK(c.dims.decoder.blocks == 2);
  CHECK(c.dims.decoder.max_len == 20);

  TrainConfig d = TrainConfig::from_json_text("{\"epochs\": 3, \"dims\": {\"decoder_dim\": 16}}");
  CHECK(d.epochs == 3);
  CHECK(d.dims.decoder.model_dim == 16);

  TrainConfig back = TrainConfig::from_json_text(d.to_json_text());
  CHECK(back.epochs == d.epochs);
  CHECK(back.dims.decoder.model_dim == 16);

  CHECK_THROWS_AS(TrainConfig::from_json_text("{\"learning_rte\": 0.1}"), CorruptHeader);
  CHECK_THROWS_AS(TrainConfig::from_json_text("{\"epochs\": 0}"), CorruptHeader);
  CHECK_THROWS_AS(TrainConfig::from_json_text("{\"tau\": -1}"), CorruptHeader);
}

TEST_CASE("train log csv carries the config echo") {
  Dataset data = tiny_dataset(2);
  auto result = train(tiny_config(3), data);
  fs::path path = scratch_dir() / "log.csv";
  result.log.write_csv(path);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("# config: {", 0) == 0);
  std::getline(in, line);
  CHECK(line == "epoch,teacher_ce,student_ce,kl,total");
  std::size_t rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("gradient suite wiring passes on a single round") {
  GradCheckOptions options;
  options.rounds = 1;
  auto report = run_gradcheck(2024, options);
  REQUIRE(report.entries.size() == 7);
  for (const auto& e : report.entries) {
    INFO(e.group, " rel err ", e.max_rel_err);
    CHECK(e.pass);
  }
  CHECK(report.all_pass());

  GradCheckOptions bad = options;
  bad.corrupt = true;
  CHECK(!run_gradcheck(2024, bad).all_pass());
}
