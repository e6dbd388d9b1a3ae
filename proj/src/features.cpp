#include "vcap/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vcap/errors.hpp"
#include "vcap/rng.hpp"

namespace vcap {

namespace {

constexpr char kMagic[4] = {'V', 'F', 'T', '1'};
constexpr std::size_t kMaxRank = 8;
constexpr std::size_t kMaxElems = 1u << 28;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw CorruptHeader("file truncated at byte " + std::to_string(pos));
  }
  uint8_t u8() {
    need(1);
    return uint8_t(buf[pos++]);
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(uint8_t(buf[pos])) | uint16_t(uint8_t(buf[pos + 1])) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

// Deterministic per-word embedding shared across all videos, so the same
// caption word always leaves the same trace in the features.
std::vector<double> word_embedding(const std::string& word, std::size_t dim) {
  SplitMix64 rng(stream_seed(0x5EEDBA5Eull, "embed:" + word));
  std::vector<double> v(dim);
  for (double& x : v) x = rng.next_symmetric(1.0);
  return v;
}

void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

// synthetic values materialize at container precision, so a bundle in memory
// equals itself after a save/load cycle
void quantize_f32(Matrix& m) {
  for (double& v : m.data) v = double(float(v));
}

const std::vector<std::string> kNouns = {"robot", "dog",   "bird", "car",
                                         "diver", "drone", "cat",  "panda"};
const std::vector<std::string> kConstVerbs = {"rests", "poses", "waits", "stands"};
const std::vector<std::string> kLongVerbs = {"wanders", "circles", "glides", "patrols"};
const std::vector<std::string> kBurstVerbs = {"jumps", "flashes", "spins", "kicks"};

}  // namespace

std::size_t NamedTensor::elem_count() const {
  std::size_t n = 1;
  for (uint32_t d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

const NamedTensor* TensorArchive::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor& TensorArchive::require(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (!t) throw MissingTensor("archive has no tensor named '" + name + "'");
  return *t;
}

void TensorArchive::add(const std::string& name, const std::vector<uint32_t>& dims,
                        const std::vector<double>& values) {
  NamedTensor t;
  t.name = name;
  t.dims = dims;
  t.values.reserve(values.size());
  for (double v : values) t.values.push_back(float(v));
  if (t.elem_count() != t.values.size())
    throw DimMismatch("tensor '" + name + "' dims do not match payload size");
  tensors.push_back(std::move(t));
}

void TensorArchive::add_matrix(const std::string& name, const Matrix& m) {
  add(name, {uint32_t(m.rows), uint32_t(m.cols)}, m.data);
}

Matrix TensorArchive::matrix(const std::string& name) const {
  const NamedTensor& t = require(name);
  if (t.dims.size() != 2) throw DimMismatch("tensor '" + name + "' is not rank 2");
  Matrix m(t.dims[0], t.dims[1]);
  for (std::size_t i = 0; i < t.values.size(); ++i) m.data[i] = double(t.values[i]);
  return m;
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();

  Reader r{buf};
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw BadMagic("'" + path.string() + "' does not start with VFT1");
  r.pos = 4;

  TensorArchive archive;
  uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    uint16_t name_len = r.u16();
    if (name_len == 0) throw CorruptHeader("empty tensor name");
    t.name = r.bytes(name_len);
    uint8_t rank = r.u8();
    if (rank == 0 || rank > kMaxRank)
      throw CorruptHeader("tensor '" + t.name + "' has rank " + std::to_string(rank));
    std::size_t elems = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      uint32_t dim = r.u32();
      if (dim == 0) throw CorruptHeader("tensor '" + t.name + "' has a zero dimension");
      t.dims.push_back(dim);
      elems *= dim;
      if (elems > kMaxElems) throw CorruptHeader("tensor '" + t.name + "' is implausibly large");
    }
    t.values.reserve(elems);
    for (std::size_t e = 0; e < elems; ++e) t.values.push_back(r.f32());
    archive.tensors.push_back(std::move(t));
  }
  if (r.pos != buf.size()) throw CorruptHeader("trailing bytes after last tensor");
  return archive;
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, uint32_t(archive.tensors.size()));
  for (const auto& t : archive.tensors) {
    if (t.name.size() > 0xffff) throw IoError("tensor name too long");
    put_u16(out, uint16_t(t.name.size()));
    out.append(t.name);
    out.push_back(char(t.dims.size()));
    for (uint32_t d : t.dims) put_u32(out, d);
    for (float v : t.values) put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("short write to '" + path.string() + "'");
}

void FeatureBundle::validate() const {
  std::size_t t_count = frame_count();
  if (t_count == 0) throw DimMismatch("bundle has no frames");
  if (object_count() == 0) throw DimMismatch("bundle has no object slots");
  if (object_mask.size() != t_count) throw DimMismatch("object mask frame count");
  std::size_t n = object_count(), d_o = object_feats[0].cols;
  for (std::size_t t = 0; t < t_count; ++t) {
    if (object_feats[t].rows != n || object_feats[t].cols != d_o)
      throw DimMismatch("object feature dims differ across frames");
    if (object_mask[t].size() != n) throw DimMismatch("object mask width");
    for (std::size_t s = 0; s < n; ++s) {
      if (!object_mask[t][s]) continue;
      for (std::size_t c = 0; c < d_o; ++c)
        if (!std::isfinite(object_feats[t].at(s, c)))
          throw NonFiniteValue("object feature at frame " + std::to_string(t));
    }
  }
  if (action_feats.rows != t_count) throw DimMismatch("action frame count");
  if (visual_text_feats.rows != t_count) throw DimMismatch("visual-text frame count");
  if (!action_feats.all_finite()) throw NonFiniteValue("action features");
  if (!visual_text_feats.all_finite()) throw NonFiniteValue("visual-text features");
}

FeatureBundle load_bundle(const std::filesystem::path& path) {
  TensorArchive archive = load_archive(path);
  const NamedTensor& obj = archive.require("object");
  const NamedTensor& mask = archive.require("object_mask");

  FeatureBundle b;
  b.video_id = path.stem().string();
  if (obj.dims.size() != 3) throw DimMismatch("'object' must be rank 3 (frames, slots, dim)");
  if (mask.dims.size() != 2) throw DimMismatch("'object_mask' must be rank 2");
  std::size_t t_count = obj.dims[0], n = obj.dims[1], d_o = obj.dims[2];
  if (mask.dims[0] != t_count || mask.dims[1] != n)
    throw DimMismatch("'object_mask' dims must match 'object' frames and slots");

  for (std::size_t t = 0; t < t_count; ++t) {
    Matrix frame(n, d_o);
    for (std::size_t i = 0; i < n * d_o; ++i)
      frame.data[i] = double(obj.values[t * n * d_o + i]);
    b.object_feats.push_back(std::move(frame));
    std::vector<uint8_t> row(n);
    for (std::size_t s = 0; s < n; ++s) {
      float mv = mask.values[t * n + s];
      if (mv != 0.0f && mv != 1.0f) throw DimMismatch("'object_mask' entries must be 0 or 1");
      row[s] = mv != 0.0f;
    }
    b.object_mask.push_back(std::move(row));
  }
  b.action_feats = archive.matrix("action");
  b.visual_text_feats = archive.matrix("visual_text");
  b.validate();
  return b;
}

void save_bundle(const FeatureBundle& bundle, const std::filesystem::path& path) {
  bundle.validate();
  std::size_t t_count = bundle.frame_count(), n = bundle.object_count();
  std::size_t d_o = bundle.object_feats[0].cols;

  TensorArchive archive;
  std::vector<double> obj;
  obj.reserve(t_count * n * d_o);
  for (const Matrix& frame : bundle.object_feats)
    obj.insert(obj.end(), frame.data.begin(), frame.data.end());
  archive.add("object", {uint32_t(t_count), uint32_t(n), uint32_t(d_o)}, obj);

  std::vector<double> mask;
  mask.reserve(t_count * n);
  for (const auto& row : bundle.object_mask)
    for (uint8_t m : row) mask.push_back(m ? 1.0 : 0.0);
  archive.add("object_mask", {uint32_t(t_count), uint32_t(n)}, mask);

  archive.add_matrix("action", bundle.action_feats);
  archive.add_matrix("visual_text", bundle.visual_text_feats);
  save_archive(archive, path);
}

Matrix load_visual_text(const std::filesystem::path& path) {
  TensorArchive archive = load_archive(path);
  Matrix c = archive.matrix("visual_text");
  if (!c.all_finite()) throw NonFiniteValue("visual-text features");
  return c;
}

std::vector<CaptionRecord> load_caption_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<CaptionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
      CaptionRecord rec;
      rec.video_id = doc.at("video_id").get<std::string>();
      rec.captions = doc.at("captions").get<std::vector<std::string>>();
      if (rec.captions.empty())
        throw CorruptHeader(path.string() + ":" + std::to_string(line_no) + ": no captions");
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw CorruptHeader(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t j = i + 1; j < records.size(); ++j)
      if (records[i].video_id == records[j].video_id)
        throw CorruptHeader("duplicate video_id '" + records[i].video_id + "'");
  return records;
}

void save_caption_records(const std::vector<CaptionRecord>& records,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& rec : records) {
    nlohmann::json doc{{"video_id", rec.video_id}, {"captions", rec.captions}};
    out << doc.dump() << "\n";
  }
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

SynthPattern parse_pattern(const std::string& name) {
  if (name == "constant-action") return SynthPattern::ConstantAction;
  if (name == "drift") return SynthPattern::Drift;
  if (name == "burst") return SynthPattern::Burst;
  throw BadPattern("unknown pattern '" + name +
                   "' (expected constant-action, drift or burst)");
}

std::string pattern_name(SynthPattern p) {
  switch (p) {
    case SynthPattern::ConstantAction: return "constant-action";
    case SynthPattern::Drift: return "drift";
    case SynthPattern::Burst: return "burst";
  }
  return "?";
}

SynthResult synth_generate(uint64_t seed, std::size_t frames, std::size_t objects,
                           const SynthDims& dims, SynthPattern pattern) {
  if (frames == 0 || objects == 0) throw DimMismatch("frames and objects must be positive");

  SplitMix64 cap_rng(stream_seed(seed, "caption"));
  std::size_t noun_idx = cap_rng.next_below(kNouns.size());
  std::size_t verb_idx = cap_rng.next_below(4);  // const or long verb, by pattern
  SplitMix64 burst_rng(stream_seed(seed, "burst"));
  std::size_t bverb_idx = burst_rng.next_below(kBurstVerbs.size());

  const std::string& noun = kNouns[noun_idx];
  std::string main_verb = pattern == SynthPattern::ConstantAction ? kConstVerbs[verb_idx]
                                                                  : kLongVerbs[verb_idx];

  SynthResult result;
  char idbuf[32];
  std::snprintf(idbuf, sizeof idbuf, "v%06llu", static_cast<unsigned long long>(seed));
  result.bundle.video_id = idbuf;
  result.caption.video_id = idbuf;
  std::string text = "a " + noun + " " + main_verb;
  if (pattern == SynthPattern::Burst) text += " then " + kBurstVerbs[bverb_idx];
  result.caption.captions.push_back(text);

  // action features
  SplitMix64 drift_rng(stream_seed(seed, "drift"));
  std::vector<double> plane_u(dims.action_dim), plane_v(dims.action_dim);
  for (double& x : plane_u) x = drift_rng.next_symmetric(1.0);
  for (double& x : plane_v) x = drift_rng.next_symmetric(1.0);
  SplitMix64 sig_rng(stream_seed(seed, "action-sig"));
  std::vector<double> action_sig(dims.action_dim);
  for (double& x : action_sig) x = sig_rng.next_symmetric(1.0);

  std::size_t burst_len = std::max<std::size_t>(1, frames / 4);
  std::size_t burst_start = 0;
  if (frames > burst_len + 1)
    burst_start = 1 + burst_rng.next_below(frames - burst_len - 1);
  result.burst_start = burst_start;
  result.burst_len = burst_len;

  std::vector<double> verb_emb = word_embedding(main_verb, dims.action_dim);
  std::vector<double> bverb_emb = word_embedding(kBurstVerbs[bverb_idx], dims.action_dim);

  Matrix action(frames, dims.action_dim);
  double omega = frames > 1 ? (0.5 + 0.15 * double(verb_idx)) * 3.14159265358979 / double(frames)
                            : 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> m(dims.action_dim, 0.0);
    axpy(m, 0.8, verb_emb);
    axpy(m, 0.2, action_sig);
    if (pattern != SynthPattern::ConstantAction) {
      axpy(m, std::cos(omega * double(t)), plane_u);
      axpy(m, std::sin(omega * double(t)), plane_v);
    }
    if (pattern == SynthPattern::Burst && t >= burst_start && t < burst_start + burst_len) {
      axpy(m, 1.5, bverb_emb);
    }
    std::copy(m.begin(), m.end(), action.row_ptr(t));
  }
  quantize_f32(action);
  result.bundle.action_feats = std::move(action);

  // object features: noun-flavored base per slot plus small per-frame jitter,
  // so same-slot neighbors in consecutive frames stay near cosine 1
  std::vector<double> noun_emb_o = word_embedding(noun, dims.object_dim);
  SplitMix64 obj_rng(stream_seed(seed, "objects"));
  std::vector<std::vector<double>> slot_base(objects);
  for (std::size_t s = 0; s < objects; ++s) {
    slot_base[s] = word_embedding("slot:" + std::to_string(s), dims.object_dim);
    for (double& x : slot_base[s]) x *= 0.5;
    axpy(slot_base[s], 0.9, noun_emb_o);
  }
  SplitMix64 mask_rng(stream_seed(seed, "mask"));
  for (std::size_t t = 0; t < frames; ++t) {
    Matrix frame(objects, dims.object_dim);
    std::vector<uint8_t> present(objects, 1);
    for (std::size_t s = 0; s < objects; ++s) {
      if (s > 0 && mask_rng.next_double() < 0.15) present[s] = 0;
      for (std::size_t c = 0; c < dims.object_dim; ++c) {
        frame.at(s, c) = present[s] ? slot_base[s][c] + 0.05 * obj_rng.next_symmetric(1.0) : 0.0;
      }
    }
    quantize_f32(frame);
    result.bundle.object_feats.push_back(std::move(frame));
    result.bundle.object_mask.push_back(std::move(present));
  }

  // visual-text features carry the whole caption so the plain visual-text
  // decoder has enough signal on its own
  std::vector<double> noun_emb_c = word_embedding(noun, dims.visual_text_dim);
  std::vector<double> verb_emb_c = word_embedding(main_verb, dims.visual_text_dim);
  std::vector<double> bverb_emb_c = word_embedding(kBurstVerbs[bverb_idx], dims.visual_text_dim);
  std::vector<double> ramp = word_embedding("time-ramp", dims.visual_text_dim);
  SplitMix64 csig_rng(stream_seed(seed, "visual-sig"));
  std::vector<double> video_sig(dims.visual_text_dim);
  for (double& x : video_sig) x = csig_rng.next_symmetric(1.0);

  Matrix visual(frames, dims.visual_text_dim);
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> c(dims.visual_text_dim, 0.0);
    axpy(c, 0.8, noun_emb_c);
    axpy(c, 0.8, verb_emb_c);
    if (pattern == SynthPattern::Burst) {
      bool in_burst = t >= burst_start && t < burst_start + burst_len;
      axpy(c, in_burst ? 1.0 : 0.3, bverb_emb_c);
    }
    axpy(c, 0.2 * double(t) / double(frames), ramp);
    axpy(c, 0.15, video_sig);
    std::copy(c.begin(), c.end(), visual.row_ptr(t));
  }
  quantize_f32(visual);
  result.bundle.visual_text_feats = std::move(visual);

  result.bundle.validate();
  return result;
}

}  // namespace vcap
