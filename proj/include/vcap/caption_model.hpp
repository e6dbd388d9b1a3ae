#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vcap/features.hpp"
#include "vcap/matrix.hpp"
#include "vcap/tape.hpp"

namespace vcap {

// lowercase, strip punctuation, split on whitespace
std::vector<std::string> tokenize(const std::string& text);

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  std::size_t size() const { return id_to_token.size(); }
  int encode_token(const std::string& token) const;
  std::vector<int> encode(const std::string& sentence) const;
  std::string decode(const std::vector<int>& ids) const;  // specials skipped

  // Tokens below min_freq fall back to UNK. Ids are assigned by descending
  // corpus frequency, ties broken lexicographically, after the four specials.
  static Vocabulary build(const std::vector<CaptionRecord>& corpus, std::size_t min_freq);
};

struct DecoderConfig {
  std::size_t model_dim = 128;
  std::size_t ff_dim = 256;
  std::size_t blocks = 2;
  std::size_t max_len = 20;
};

struct DecoderBlockParams {
  Matrix self_wq, self_wk, self_wv, self_wo;
  Matrix cross_wq, cross_wk, cross_wv, cross_wo;
  Matrix ff_w1, ff_b1, ff_w2, ff_b2;
};

// Causal transformer decoder over token prefixes with cross attention on a
// per-frame visual sequence.
struct DecoderParams {
  DecoderConfig config;
  std::size_t visual_dim = 0;
  Matrix embedding;    // |V| x d
  Matrix visual_proj;  // visual_dim x d
  std::vector<DecoderBlockParams> blocks;
  Matrix out_proj;  // d x |V|

  static DecoderParams seeded(const DecoderConfig& config, std::size_t vocab_size,
                              std::size_t visual_dim, uint64_t seed);
  std::vector<std::pair<std::string, Matrix*>> parameters(const std::string& prefix);
};

struct DecoderParamIds {
  ValueId embedding;
  ValueId visual_proj;
  struct Block {
    ValueId self_wq, self_wk, self_wv, self_wo;
    ValueId cross_wq, cross_wk, cross_wv, cross_wo;
    ValueId ff_w1, ff_b1, ff_w2, ff_b2;
  };
  std::vector<Block> blocks;
  ValueId out_proj;
  DecoderConfig config;
};
DecoderParamIds put_on_tape(Tape& tape, const DecoderParams& p);

// Sinusoidal position rows [len x d].
Matrix sinusoidal_positions(std::size_t len, std::size_t dim);

// Logits for every prefix position; position l sees tokens <= l and the whole
// visual sequence.
ValueId decoder_forward(Tape& tape, ValueId visual_seq, const std::vector<int>& prefix,
                        const DecoderParamIds& p);
Matrix decoder_forward(const Matrix& visual_seq, const std::vector<int>& prefix,
                       const DecoderParams& p);

struct CaptionHypothesis {
  std::vector<int> tokens;  // generated ids; ends with EOS iff finished
  double log_prob = 0.0;
  bool finished = false;
};

// Argmax decoding over the decodable ids (PAD and BOS never decode), ties to
// the lowest id; stops at EOS or max_len tokens.
CaptionHypothesis greedy_decode(const Matrix& visual_seq, const DecoderParams& p,
                                std::size_t max_len);

// Length-normalized beam search (score = log-prob / token count). PAD and BOS
// never expand. beam_size = 1 reproduces greedy_decode exactly.
CaptionHypothesis beam_decode(const Matrix& visual_seq, const DecoderParams& p,
                              std::size_t beam_size, std::size_t max_len);

}  // namespace vcap
