#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vcap/errors.hpp"
#include "vcap/features.hpp"

using namespace vcap;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  static fs::path dir = [] {
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    fs::path p = fs::temp_directory_path() / ("vcap_features_" + std::to_string(stamp));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

bool bundles_equal(const FeatureBundle& a, const FeatureBundle& b) {
  if (a.video_id != b.video_id || a.frame_count() != b.frame_count()) return false;
  if (a.object_mask != b.object_mask) return false;
  for (std::size_t t = 0; t < a.frame_count(); ++t)
    if (a.object_feats[t].data != b.object_feats[t].data) return false;
  return a.action_feats.data == b.action_feats.data &&
         a.visual_text_feats.data == b.visual_text_feats.data;
}

}  // namespace

TEST_CASE("bundle save/load round trip") {
  auto synth = synth_generate(7, 5, 3, SynthDims{}, SynthPattern::Drift);
  fs::path path = scratch_dir() / (synth.bundle.video_id + ".vft");
  save_bundle(synth.bundle, path);
  FeatureBundle loaded = load_bundle(path);
  CHECK(bundles_equal(synth.bundle, loaded));
}

TEST_CASE("two saves are byte identical, save-load-save too") {
  auto synth = synth_generate(8, 4, 2, SynthDims{}, SynthPattern::Burst);
  fs::path p1 = scratch_dir() / "det1.vft";
  fs::path p2 = scratch_dir() / "det2.vft";
  save_bundle(synth.bundle, p1);
  save_bundle(synth.bundle, p2);
  CHECK(slurp(p1) == slurp(p2));

  FeatureBundle loaded = load_bundle(p1);
  fs::path p3 = scratch_dir() / "det3.vft";
  save_bundle(loaded, p3);
  CHECK(slurp(p1) == slurp(p3));
}

TEST_CASE("bad magic is rejected") {
  fs::path path = scratch_dir() / "magic.vft";
  auto synth = synth_generate(9, 3, 2, SynthDims{}, SynthPattern::ConstantAction);
  save_bundle(synth.bundle, path);
  std::string bytes = slurp(path);
  bytes[0] = 'X';
  bytes[1] = 'X';
  bytes[2] = 'X';
  bytes[3] = 'X';
  spit(path, bytes);
  CHECK_THROWS_AS(load_bundle(path), BadMagic);
}

TEST_CASE("truncated payload is rejected") {
  fs::path path = scratch_dir() / "trunc.vft";
  auto synth = synth_generate(10, 5, 2, SynthDims{}, SynthPattern::Drift);
  save_bundle(synth.bundle, path);
  std::string bytes = slurp(path);
  // drop one frame worth of the trailing visual_text payload
  spit(path, bytes.substr(0, bytes.size() - 4 * SynthDims{}.visual_text_dim));
  CHECK_THROWS_AS(load_bundle(path), CorruptHeader);
}

TEST_CASE("NaN entries are refused before write") {
  auto synth = synth_generate(11, 3, 2, SynthDims{}, SynthPattern::Drift);
  synth.bundle.action_feats.at(1, 1) = std::nan("");
  fs::path path = scratch_dir() / "nan.vft";
  CHECK_THROWS_AS(save_bundle(synth.bundle, path), NonFiniteValue);
  CHECK(!fs::exists(path));
}

TEST_CASE("fuzzed single-field corruptions never load") {
  auto synth = synth_generate(12, 4, 2, SynthDims{4, 4, 5}, SynthPattern::Burst);
  fs::path base = scratch_dir() / "fuzz_base.vft";
  save_bundle(synth.bundle, base);
  const std::string good = slurp(base);
  fs::path mutant = scratch_dir() / "fuzz_mutant.vft";

  auto expect_reject = [&](const std::string& bytes) {
    spit(mutant, bytes);
    bool threw = false;
    try {
      load_bundle(mutant);
    } catch (const Error&) {
      threw = true;
    }
    CHECK(threw);
  };

  // magic bytes
  for (std::size_t i = 0; i < 4; ++i) {
    std::string bytes = good;
    bytes[i] = char(bytes[i] ^ 0x5a);
    expect_reject(bytes);
  }

  // rank byte of the first tensor: magic(4) + count(4) + name_len(2) + "object"(6)
  std::size_t rank_pos = 4 + 4 + 2 + 6;
  for (uint8_t rank : {0, 2, 4, 9, 255}) {
    std::string bytes = good;
    bytes[rank_pos] = char(rank);
    expect_reject(bytes);
  }

  // dim fields of the first tensor
  for (std::size_t d = 0; d < 3; ++d) {
    for (int delta : {-1, 1, 7}) {
      std::string bytes = good;
      std::size_t pos = rank_pos + 1 + 4 * d;
      uint32_t dim = 0;
      for (int i = 0; i < 4; ++i) dim |= uint32_t(uint8_t(bytes[pos + i])) << (8 * i);
      uint32_t bad = uint32_t(int64_t(dim) + delta);
      for (int i = 0; i < 4; ++i) bytes[pos + i] = char((bad >> (8 * i)) & 0xff);
      expect_reject(bytes);
    }
  }

  // truncation at every boundary region
  for (std::size_t cut = 0; cut < good.size(); cut += 13) expect_reject(good.substr(0, cut));
  expect_reject(good.substr(0, good.size() - 1));
  // trailing garbage
  expect_reject(good + std::string(3, '\0'));
}

TEST_CASE("constant-action pattern repeats one action row") {
  auto synth = synth_generate(13, 6, 2, SynthDims{}, SynthPattern::ConstantAction);
  const Matrix& m = synth.bundle.action_feats;
  for (std::size_t t = 1; t < m.rows; ++t)
    for (std::size_t c = 0; c < m.cols; ++c) CHECK(m.at(t, c) == m.at(0, c));
  CHECK(synth.caption.captions[0].find("then") == std::string::npos);
}

TEST_CASE("burst differs from drift exactly on the burst frames") {
  SynthDims dims;
  auto drift = synth_generate(14, 8, 2, dims, SynthPattern::Drift);
  auto burst = synth_generate(14, 8, 2, dims, SynthPattern::Burst);
  CHECK(burst.burst_len > 0);
  for (std::size_t t = 0; t < 8; ++t) {
    double diff = 0.0;
    for (std::size_t c = 0; c < dims.action_dim; ++c)
      diff += std::fabs(burst.bundle.action_feats.at(t, c) - drift.bundle.action_feats.at(t, c));
    bool in_burst = t >= burst.burst_start && t < burst.burst_start + burst.burst_len;
    if (in_burst)
      CHECK(diff > 0.0);
    else
      CHECK(diff == 0.0);
  }
  // two-verb caption
  CHECK(burst.caption.captions[0].find("then") != std::string::npos);
}

TEST_CASE("synthetic generation is deterministic per seed") {
  auto a = synth_generate(15, 5, 3, SynthDims{}, SynthPattern::Burst);
  auto b = synth_generate(15, 5, 3, SynthDims{}, SynthPattern::Burst);
  CHECK(bundles_equal(a.bundle, b.bundle));
  CHECK(a.caption.captions == b.caption.captions);

  auto c = synth_generate(16, 5, 3, SynthDims{}, SynthPattern::Burst);
  CHECK(!bundles_equal(a.bundle, c.bundle));
}

TEST_CASE("pattern parsing") {
  CHECK(parse_pattern("constant-action") == SynthPattern::ConstantAction);
  CHECK(parse_pattern("drift") == SynthPattern::Drift);
  CHECK(parse_pattern("burst") == SynthPattern::Burst);
  CHECK_THROWS_AS(parse_pattern("zigzag"), BadPattern);
}

TEST_CASE("caption records round trip and reject duplicates") {
  std::vector<CaptionRecord> records{{"vid_a", {"a dog runs", "the dog is running"}},
                                     {"vid_b", {"a cat sleeps"}}};
  fs::path path = scratch_dir() / "caps.jsonl";
  save_caption_records(records, path);
  auto loaded = load_caption_records(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].video_id == "vid_a");
  CHECK(loaded[0].captions == records[0].captions);
  CHECK(loaded[1].captions == records[1].captions);

  records.push_back({"vid_a", {"dup"}});
  save_caption_records(records, path);
  CHECK_THROWS_AS(load_caption_records(path), CorruptHeader);

  spit(path, "{not json}\n");
  CHECK_THROWS_AS(load_caption_records(path), CorruptHeader);
}

TEST_CASE("load_visual_text wants the visual_text tensor") {
  TensorArchive archive;
  archive.add_matrix("action", Matrix::from_rows({{1, 2}, {3, 4}}));
  fs::path path = scratch_dir() / "partial.vft";
  save_archive(archive, path);
  CHECK_THROWS_AS(load_visual_text(path), MissingTensor);

  auto synth = synth_generate(17, 3, 2, SynthDims{}, SynthPattern::Drift);
  fs::path full = scratch_dir() / "full.vft";
  save_bundle(synth.bundle, full);
  Matrix c = load_visual_text(full);
  CHECK(c.rows == 3);
  CHECK(c.cols == SynthDims{}.visual_text_dim);
}

TEST_CASE("validation catches structural breakage") {
  auto synth = synth_generate(18, 4, 2, SynthDims{}, SynthPattern::Drift);
  FeatureBundle b = synth.bundle;
  b.action_feats = Matrix(3, b.action_feats.cols);  // frame count mismatch
  CHECK_THROWS_AS(b.validate(), DimMismatch);

  FeatureBundle b2 = synth.bundle;
  b2.object_mask[0].pop_back();
  CHECK_THROWS_AS(b2.validate(), DimMismatch);
}
