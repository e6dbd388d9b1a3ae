#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "vcap/caption_model.hpp"
#include "vcap/errors.hpp"
#include "vcap/rng.hpp"

using namespace vcap;

namespace {

Matrix rnd(std::size_t r, std::size_t c, uint64_t seed) {
  return seeded_init(r, c, seed, InitScheme::uniform(1.0));
}

DecoderParams tiny_decoder(uint64_t seed, std::size_t vocab, std::size_t d_vis,
                           std::size_t max_len = 6) {
  DecoderConfig config;
  config.model_dim = 4;
  config.ff_dim = 6;
  config.blocks = 2;
  config.max_len = max_len;
  return DecoderParams::seeded(config, vocab, d_vis, seed);
}

// independent scorer for the enumeration oracle
double sequence_log_prob(const Matrix& visual, const DecoderParams& p,
                         const std::vector<int>& tokens) {
  double total = 0.0;
  std::vector<int> prefix{Vocabulary::kBos};
  for (int tok : tokens) {
    Matrix logits = decoder_forward(visual, prefix, p);
    std::vector<double> row = logits.row(logits.rows - 1);
    double mx = *std::max_element(row.begin(), row.end());
    double lse = 0.0;
    for (double v : row) lse += std::exp(v - mx);
    total += row[std::size_t(tok)] - (mx + std::log(lse));
    prefix.push_back(tok);
  }
  return total;
}

struct Enumerated {
  std::vector<int> tokens;
  double log_prob = 0.0;
};

void enumerate_sequences(const Matrix& visual, const DecoderParams& p, std::size_t max_len,
                         std::vector<int>& current, std::vector<Enumerated>& out) {
  if (!current.empty()) {
    bool ended = current.back() == Vocabulary::kEos;
    if (ended || current.size() == max_len) {
      out.push_back({current, sequence_log_prob(visual, p, current)});
      if (ended) return;
    }
    if (current.size() == max_len) return;
    if (ended) return;
  }
  for (int tok = 0; tok < int(p.embedding.rows); ++tok) {
    if (tok == Vocabulary::kPad || tok == Vocabulary::kBos) continue;
    current.push_back(tok);
    enumerate_sequences(visual, p, max_len, current, out);
    current.pop_back();
  }
}

Enumerated best_by_normalized_score(std::vector<Enumerated> all) {
  auto better = [](const Enumerated& a, const Enumerated& b) {
    double na = a.log_prob / double(a.tokens.size());
    double nb = b.log_prob / double(b.tokens.size());
    if (na != nb) return na > nb;
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  };
  return *std::min_element(all.begin(), all.end(),
                           [&](const Enumerated& a, const Enumerated& b) { return better(a, b); });
}

}  // namespace

TEST_CASE("tokenize lowercases and strips punctuation") {
  auto toks = tokenize("A Man, runs!  FAST.");
  REQUIRE(toks.size() == 4);
  CHECK(toks[0] == "a");
  CHECK(toks[1] == "man");
  CHECK(toks[2] == "runs");
  CHECK(toks[3] == "fast");
}

TEST_CASE("vocabulary counting example") {
  std::vector<CaptionRecord> corpus{{"v1", {"a man runs"}}, {"v2", {"a man walks"}}};
  Vocabulary v = Vocabulary::build(corpus, 1);
  CHECK(v.size() == 8);
  CHECK(v.encode_token("a") == 4);    // highest frequency, lexicographic tie with man
  CHECK(v.encode_token("man") == 5);
  CHECK(v.encode_token("runs") == 6);
  CHECK(v.encode_token("walks") == 7);

  Vocabulary strict = Vocabulary::build(corpus, 2);
  CHECK(strict.size() == 6);
  CHECK(strict.encode_token("runs") == Vocabulary::kUnk);
  CHECK(strict.encode("a man runs") == std::vector<int>{4, 5, Vocabulary::kUnk});

  Vocabulary again = Vocabulary::build(corpus, 1);
  CHECK(again.id_to_token == v.id_to_token);

  CHECK_THROWS_AS(Vocabulary::build({}, 1), EmptyCorpus);
}

TEST_CASE("decode skips specials") {
  std::vector<CaptionRecord> corpus{{"v1", {"blue bird sings"}}};
  Vocabulary v = Vocabulary::build(corpus, 1);
  std::vector<int> ids = v.encode("blue bird sings");
  ids.push_back(Vocabulary::kEos);
  CHECK(v.decode(ids) == "blue bird sings");
}

TEST_CASE("decoder logits are causal bitwise") {
  DecoderParams p = tiny_decoder(3, 9, 3);
  Matrix visual = rnd(4, 3, 4);
  Matrix base = decoder_forward(visual, {1, 5, 6, 7}, p);
  Matrix changed = decoder_forward(visual, {1, 5, 6, 8}, p);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < base.cols; ++c) CHECK(base.at(r, c) == changed.at(r, c));
  bool last_differs = false;
  for (std::size_t c = 0; c < base.cols; ++c)
    last_differs = last_differs || base.at(3, c) != changed.at(3, c);
  CHECK(last_differs);
}

TEST_CASE("cross attention is live") {
  DecoderParams p = tiny_decoder(5, 7, 3);
  Matrix zero(3, 3);
  Matrix live = rnd(3, 3, 6);
  Matrix a = decoder_forward(zero, {1, 4}, p);
  Matrix b = decoder_forward(live, {1, 4}, p);
  bool differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) differ = differ || a.data[i] != b.data[i];
  CHECK(differ);
}

TEST_CASE("decoder shape and error paths") {
  DecoderParams p = tiny_decoder(7, 8, 2, 4);
  Matrix visual = rnd(2, 2, 8);
  Matrix logits = decoder_forward(visual, {1}, p);
  CHECK(logits.rows == 1);
  CHECK(logits.cols == 8);

  CHECK_THROWS_AS(decoder_forward(visual, {1, 4, 5, 6, 7}, p), PrefixTooLong);
  CHECK_THROWS_AS(decoder_forward(Matrix(0, 2), {1, 4}, p), EmptyVisualSequence);
  CHECK_THROWS_AS(decoder_forward(visual, {4, 5}, p), DimensionMismatch);

  // probability over the vocabulary at any position sums to 1
  auto probs = softmax_scaled(logits.row(0), 1.0);
  double sum = 0.0;
  for (double v : probs) sum += v;
  CHECK(std::fabs(sum - 1.0) <= 1e-9);
}

TEST_CASE("rigged zero projection decodes an empty finished caption") {
  DecoderParams p = tiny_decoder(11, 6, 3);
  p.out_proj = Matrix(p.config.model_dim, 6);  // all logits tie; lowest decodable id is EOS
  auto hyp = greedy_decode(rnd(2, 3, 12), p, 5);
  CHECK(hyp.finished);
  REQUIRE(hyp.tokens.size() == 1);
  CHECK(hyp.tokens[0] == Vocabulary::kEos);

  Vocabulary v;
  v.id_to_token = {"<pad>", "<bos>", "<eos>", "<unk>", "a", "b"};
  CHECK(v.decode(hyp.tokens).empty());
}

TEST_CASE("greedy decoding is deterministic and bounded") {
  DecoderParams p = tiny_decoder(13, 7, 3);
  Matrix visual = rnd(3, 3, 14);
  auto a = greedy_decode(visual, p, 4);
  auto b = greedy_decode(visual, p, 4);
  CHECK(a.tokens == b.tokens);
  CHECK(a.log_prob == b.log_prob);
  CHECK(a.tokens.size() <= 4);
  if (a.finished) CHECK(a.tokens.back() == Vocabulary::kEos);
}

TEST_CASE("beam size one reproduces greedy bitwise") {
  for (uint64_t seed = 20; seed < 28; ++seed) {
    DecoderParams p = tiny_decoder(seed, 6, 2);
    Matrix visual = rnd(2, 2, stream_seed(seed, "v"));
    auto greedy = greedy_decode(visual, p, 5);
    auto beam = beam_decode(visual, p, 1, 5);
    CHECK(greedy.tokens == beam.tokens);
    CHECK(greedy.log_prob == beam.log_prob);
    CHECK(greedy.finished == beam.finished);
  }
}

TEST_CASE("wide beam matches the enumeration oracle on a 2-token vocabulary") {
  // vocabulary {x, y} + specials; beam 36 covers every expansion at depth <= 3
  for (uint64_t seed = 40; seed < 44; ++seed) {
    DecoderParams p = tiny_decoder(seed, 6, 2, 3);
    Matrix visual = rnd(2, 2, stream_seed(seed, "v"));
    std::vector<Enumerated> all;
    std::vector<int> scratch;
    enumerate_sequences(visual, p, 3, scratch, all);
    Enumerated best = best_by_normalized_score(all);
    auto hyp = beam_decode(visual, p, 36, 3);
    CHECK(hyp.tokens == best.tokens);
    CHECK(hyp.log_prob == doctest::Approx(best.log_prob).epsilon(1e-12));
  }
}

TEST_CASE("beam of three matches the enumeration oracle on the frozen toy") {
  for (uint64_t seed = 50; seed < 54; ++seed) {
    DecoderParams p = tiny_decoder(seed, 6, 2, 3);
    Matrix visual = rnd(2, 2, stream_seed(seed, "v"));
    std::vector<Enumerated> all;
    std::vector<int> scratch;
    enumerate_sequences(visual, p, 3, scratch, all);
    Enumerated best = best_by_normalized_score(all);
    auto hyp = beam_decode(visual, p, 3, 3);
    CHECK(hyp.tokens == best.tokens);
  }
}

TEST_CASE("beam rejects degenerate arguments") {
  DecoderParams p = tiny_decoder(60, 6, 2);
  Matrix visual = rnd(2, 2, 61);
  CHECK_THROWS_AS(beam_decode(visual, p, 0, 3), DimensionMismatch);
  CHECK_THROWS_AS(greedy_decode(visual, p, 0), DimensionMismatch);
}
