#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vcap/matrix.hpp"

namespace vcap {

// Named-tensor archive, the ".vft" container. Layout (little-endian, fixed):
//
//   magic "VFT1" (4 bytes)
//   u32 tensor_count
//   per tensor:
//     u16 name_length, UTF-8 name bytes
//     u8  rank
//     u32 dims[rank]
//     f32 payload, row-major
//
// Values are stored at 32-bit on disk and widened to 64-bit in memory.
struct NamedTensor {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> values;

  std::size_t elem_count() const;
};

struct TensorArchive {
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  const NamedTensor& require(const std::string& name) const;  // throws MissingTensor
  void add(const std::string& name, const std::vector<uint32_t>& dims,
           const std::vector<double>& values);
  void add_matrix(const std::string& name, const Matrix& m);
  Matrix matrix(const std::string& name) const;  // rank-2 tensors only
};

TensorArchive load_archive(const std::filesystem::path& path);
void save_archive(const TensorArchive& archive, const std::filesystem::path& path);

// Per-video precomputed features. The video id is the file stem; the archive
// itself carries only tensors.
struct FeatureBundle {
  std::string video_id;
  std::vector<Matrix> object_feats;            // T frames of N x d_o
  std::vector<std::vector<uint8_t>> object_mask;  // T x N presence
  Matrix action_feats;                         // T x d_m
  Matrix visual_text_feats;                    // T x d_c

  std::size_t frame_count() const { return object_feats.size(); }
  std::size_t object_count() const { return object_feats.empty() ? 0 : object_feats[0].rows; }
  // Throws DimMismatch / NonFiniteValue when the bundle breaks its invariants.
  void validate() const;
};

FeatureBundle load_bundle(const std::filesystem::path& path);
void save_bundle(const FeatureBundle& bundle, const std::filesystem::path& path);
// Reads only the visual-text tensor; the student inference path goes through
// here so it never touches object or action payloads.
Matrix load_visual_text(const std::filesystem::path& path);

struct CaptionRecord {
  std::string video_id;
  std::vector<std::string> captions;
};

// Line-delimited JSON: one {"video_id": ..., "captions": [...]} per line.
std::vector<CaptionRecord> load_caption_records(const std::filesystem::path& path);
void save_caption_records(const std::vector<CaptionRecord>& records,
                          const std::filesystem::path& path);

enum class SynthPattern { ConstantAction, Drift, Burst };
SynthPattern parse_pattern(const std::string& name);  // throws BadPattern
std::string pattern_name(SynthPattern p);

struct SynthDims {
  std::size_t object_dim = 6;
  std::size_t action_dim = 6;
  std::size_t visual_text_dim = 10;
};

struct SynthResult {
  FeatureBundle bundle;
  CaptionRecord caption;
  std::size_t burst_start = 0;  // Burst pattern only
  std::size_t burst_len = 0;
};

// Deterministic synthetic video. ConstantAction repeats one action vector;
// Drift rotates the action vector slowly across all frames; Burst is Drift
// plus a short injected event, and its caption carries a second verb. The
// drift portion of a Burst bundle is bit-identical to the Drift bundle for
// the same seed.
SynthResult synth_generate(uint64_t seed, std::size_t frames, std::size_t objects,
                           const SynthDims& dims, SynthPattern pattern);

}  // namespace vcap
