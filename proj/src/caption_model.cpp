#include "vcap/caption_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "vcap/errors.hpp"
#include "vcap/rng.hpp"

namespace vcap {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else if (!std::ispunct(ch)) {
      cur.push_back(char(std::tolower(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

int Vocabulary::encode_token(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const std::string& sentence) const {
  std::vector<int> ids;
  for (const auto& tok : tokenize(sentence)) ids.push_back(encode_token(tok));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id <= kUnk) continue;  // specials
    if (id < 0 || std::size_t(id) >= id_to_token.size()) continue;
    if (!out.empty()) out.push_back(' ');
    out += id_to_token[std::size_t(id)];
  }
  return out;
}

Vocabulary Vocabulary::build(const std::vector<CaptionRecord>& corpus, std::size_t min_freq) {
  if (corpus.empty()) throw EmptyCorpus("vocabulary needs at least one caption record");
  if (min_freq == 0) throw EmptyCorpus("min_freq must be at least 1");
  std::map<std::string, std::size_t> freq;  // ordered map keeps ties lexicographic
  for (const auto& rec : corpus)
    for (const auto& cap : rec.captions)
      for (const auto& tok : tokenize(cap)) ++freq[tok];

  std::vector<std::pair<std::string, std::size_t>> kept(freq.begin(), freq.end());
  std::erase_if(kept, [min_freq](const auto& e) { return e.second < min_freq; });
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary v;
  v.id_to_token = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (const auto& [tok, _] : kept) v.id_to_token.push_back(tok);
  for (std::size_t i = 0; i < v.id_to_token.size(); ++i) v.token_to_id[v.id_to_token[i]] = int(i);
  return v;
}

Matrix sinusoidal_positions(std::size_t len, std::size_t dim) {
  Matrix pe(len, dim);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < dim; i += 2) {
      double rate = std::pow(10000.0, double(i) / double(dim));
      pe.at(pos, i) = std::sin(double(pos) / rate);
      if (i + 1 < dim) pe.at(pos, i + 1) = std::cos(double(pos) / rate);
    }
  }
  return pe;
}

DecoderParams DecoderParams::seeded(const DecoderConfig& config, std::size_t vocab_size,
                                    std::size_t visual_dim, uint64_t seed) {
  DecoderParams p;
  p.config = config;
  p.visual_dim = visual_dim;
  std::size_t d = config.model_dim;
  p.embedding = seeded_init(vocab_size, d, stream_seed(seed, "embedding"),
                            InitScheme::uniform(0.1));
  p.visual_proj = seeded_init(visual_dim, d, stream_seed(seed, "visual_proj"),
                              InitScheme::fan_in());
  for (std::size_t b = 0; b < config.blocks; ++b) {
    DecoderBlockParams blk;
    std::string base = "block" + std::to_string(b);
    auto w = [&](const std::string& name, std::size_t r, std::size_t c) {
      return seeded_init(r, c, stream_seed(seed, base + "." + name), InitScheme::fan_in());
    };
    blk.self_wq = w("self_wq", d, d);
    blk.self_wk = w("self_wk", d, d);
    blk.self_wv = w("self_wv", d, d);
    blk.self_wo = w("self_wo", d, d);
    blk.cross_wq = w("cross_wq", d, d);
    blk.cross_wk = w("cross_wk", d, d);
    blk.cross_wv = w("cross_wv", d, d);
    blk.cross_wo = w("cross_wo", d, d);
    blk.ff_w1 = w("ff_w1", d, config.ff_dim);
    blk.ff_b1 = Matrix(1, config.ff_dim);
    blk.ff_w2 = w("ff_w2", config.ff_dim, d);
    blk.ff_b2 = Matrix(1, d);
    p.blocks.push_back(std::move(blk));
  }
  p.out_proj = seeded_init(d, vocab_size, stream_seed(seed, "out_proj"), InitScheme::fan_in());
  return p;
}

std::vector<std::pair<std::string, Matrix*>> DecoderParams::parameters(const std::string& prefix) {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.emplace_back(prefix + "embedding", &embedding);
  out.emplace_back(prefix + "visual_proj", &visual_proj);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::string base = prefix + "block" + std::to_string(b) + ".";
    out.emplace_back(base + "self_wq", &blocks[b].self_wq);
    out.emplace_back(base + "self_wk", &blocks[b].self_wk);
    out.emplace_back(base + "self_wv", &blocks[b].self_wv);
    out.emplace_back(base + "self_wo", &blocks[b].self_wo);
    out.emplace_back(base + "cross_wq", &blocks[b].cross_wq);
    out.emplace_back(base + "cross_wk", &blocks[b].cross_wk);
    out.emplace_back(base + "cross_wv", &blocks[b].cross_wv);
    out.emplace_back(base + "cross_wo", &blocks[b].cross_wo);
    out.emplace_back(base + "ff_w1", &blocks[b].ff_w1);
    out.emplace_back(base + "ff_b1", &blocks[b].ff_b1);
    out.emplace_back(base + "ff_w2", &blocks[b].ff_w2);
    out.emplace_back(base + "ff_b2", &blocks[b].ff_b2);
  }
  out.emplace_back(prefix + "out_proj", &out_proj);
  return out;
}

DecoderParamIds put_on_tape(Tape& tape, const DecoderParams& p) {
  DecoderParamIds ids;
  ids.config = p.config;
  ids.embedding = tape.value(p.embedding);
  ids.visual_proj = tape.value(p.visual_proj);
  for (const auto& blk : p.blocks) {
    DecoderParamIds::Block b;
    b.self_wq = tape.value(blk.self_wq);
    b.self_wk = tape.value(blk.self_wk);
    b.self_wv = tape.value(blk.self_wv);
    b.self_wo = tape.value(blk.self_wo);
    b.cross_wq = tape.value(blk.cross_wq);
    b.cross_wk = tape.value(blk.cross_wk);
    b.cross_wv = tape.value(blk.cross_wv);
    b.cross_wo = tape.value(blk.cross_wo);
    b.ff_w1 = tape.value(blk.ff_w1);
    b.ff_b1 = tape.value(blk.ff_b1);
    b.ff_w2 = tape.value(blk.ff_w2);
    b.ff_b2 = tape.value(blk.ff_b2);
    ids.blocks.push_back(b);
  }
  ids.out_proj = tape.value(p.out_proj);
  return ids;
}

ValueId decoder_forward(Tape& tape, ValueId visual_seq, const std::vector<int>& prefix,
                        const DecoderParamIds& p) {
  const Matrix& vis = tape.val(visual_seq);
  if (vis.rows == 0) throw EmptyVisualSequence("decoder needs at least one visual frame");
  if (prefix.empty() || prefix.front() != Vocabulary::kBos)
    throw DimensionMismatch("token prefix must start with BOS");
  if (prefix.size() > p.config.max_len)
    throw PrefixTooLong("prefix length " + std::to_string(prefix.size()) + " exceeds max_len " +
                        std::to_string(p.config.max_len));
  std::size_t len = prefix.size();
  std::size_t vocab = tape.val(p.embedding).rows;
  std::vector<std::size_t> rows;
  for (int id : prefix) {
    if (id < 0 || std::size_t(id) >= vocab) throw DimensionMismatch("token id out of vocabulary");
    rows.push_back(std::size_t(id));
  }

  double scale = double(p.config.model_dim);
  ValueId x = tape.add(tape.gather_rows(p.embedding, rows),
                       tape.value(sinusoidal_positions(len, p.config.model_dim)));
  ValueId v_proj = tape.matmul(visual_seq, p.visual_proj);

  Matrix causal(len, len);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j <= i; ++j) causal.at(i, j) = 1.0;

  for (const auto& blk : p.blocks) {
    // masked self attention over the prefix
    ValueId q = tape.matmul(x, blk.self_wq);
    ValueId k = tape.matmul(x, blk.self_wk);
    ValueId v = tape.matmul(x, blk.self_wv);
    ValueId alpha = tape.softmax_rows_masked(tape.matmul(q, tape.transpose(k)), causal, scale);
    x = tape.rms_norm_rows(tape.add(x, tape.matmul(tape.matmul(alpha, v), blk.self_wo)));

    // cross attention over the visual sequence
    q = tape.matmul(x, blk.cross_wq);
    k = tape.matmul(v_proj, blk.cross_wk);
    v = tape.matmul(v_proj, blk.cross_wv);
    alpha = tape.softmax_rows(tape.matmul(q, tape.transpose(k)), scale);
    x = tape.rms_norm_rows(tape.add(x, tape.matmul(tape.matmul(alpha, v), blk.cross_wo)));

    // feed forward
    ValueId h = tape.gelu(tape.add_row_broadcast(tape.matmul(x, blk.ff_w1), blk.ff_b1));
    ValueId f = tape.add_row_broadcast(tape.matmul(h, blk.ff_w2), blk.ff_b2);
    x = tape.rms_norm_rows(tape.add(x, f));
  }
  return tape.matmul(x, p.out_proj);
}

Matrix decoder_forward(const Matrix& visual_seq, const std::vector<int>& prefix,
                       const DecoderParams& p) {
  Tape tape;
  ValueId logits = decoder_forward(tape, tape.value(visual_seq), prefix, put_on_tape(tape, p));
  return tape.val(logits);
}

namespace {

// log-softmax of the final prefix position
std::vector<double> step_log_probs(const Matrix& visual_seq, const std::vector<int>& prefix,
                                   const DecoderParams& p) {
  Matrix logits = decoder_forward(visual_seq, prefix, p);
  std::vector<double> row = logits.row(logits.rows - 1);
  double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - mx);
  double lse = mx + std::log(sum);
  for (double& v : row) v -= lse;
  return row;
}

}  // namespace

CaptionHypothesis greedy_decode(const Matrix& visual_seq, const DecoderParams& p,
                                std::size_t max_len) {
  if (max_len == 0) throw DimensionMismatch("max_len must be at least 1");
  CaptionHypothesis hyp;
  std::vector<int> prefix{Vocabulary::kBos};
  while (hyp.tokens.size() < max_len) {
    auto logp = step_log_probs(visual_seq, prefix, p);
    // PAD and BOS are not decodable, matching beam_decode's candidate set
    std::size_t best = Vocabulary::kEos;
    for (std::size_t i = best + 1; i < logp.size(); ++i) {
      if (int(i) == Vocabulary::kPad || int(i) == Vocabulary::kBos) continue;
      if (logp[i] > logp[best]) best = i;
    }
    hyp.tokens.push_back(int(best));
    hyp.log_prob += logp[best];
    prefix.push_back(int(best));
    if (int(best) == Vocabulary::kEos) {
      hyp.finished = true;
      break;
    }
  }
  return hyp;
}

CaptionHypothesis beam_decode(const Matrix& visual_seq, const DecoderParams& p,
                              std::size_t beam_size, std::size_t max_len) {
  if (beam_size == 0) throw DimensionMismatch("beam size must be at least 1");
  if (max_len == 0) throw DimensionMismatch("max_len must be at least 1");

  struct Beam {
    std::vector<int> tokens;
    double log_prob = 0.0;
  };
  auto better = [](const Beam& a, const Beam& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  };

  std::vector<Beam> live{Beam{}};
  std::vector<Beam> done;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Beam> expansions;
    for (const Beam& beam : live) {
      std::vector<int> prefix{Vocabulary::kBos};
      prefix.insert(prefix.end(), beam.tokens.begin(), beam.tokens.end());
      auto logp = step_log_probs(visual_seq, prefix, p);
      for (std::size_t tok = 0; tok < logp.size(); ++tok) {
        if (int(tok) == Vocabulary::kPad || int(tok) == Vocabulary::kBos) continue;
        Beam next = beam;
        next.tokens.push_back(int(tok));
        next.log_prob += logp[tok];
        expansions.push_back(std::move(next));
      }
    }
    std::sort(expansions.begin(), expansions.end(), better);
    if (expansions.size() > beam_size) expansions.resize(beam_size);
    live.clear();
    for (Beam& b : expansions) {
      if (b.tokens.back() == Vocabulary::kEos)
        done.push_back(std::move(b));
      else
        live.push_back(std::move(b));
    }
  }
  // unfinished survivors at max_len still compete, flagged unfinished
  std::vector<std::pair<Beam, bool>> candidates;
  for (Beam& b : done) candidates.emplace_back(std::move(b), true);
  for (Beam& b : live) candidates.emplace_back(std::move(b), false);

  auto norm = [](const Beam& b) { return b.log_prob / double(b.tokens.size()); };
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    double ni = norm(candidates[i].first), nb = norm(candidates[best].first);
    if (ni > nb ||
        (ni == nb && better(candidates[i].first, candidates[best].first))) {
      best = i;
    }
  }
  CaptionHypothesis hyp;
  hyp.tokens = candidates[best].first.tokens;
  hyp.log_prob = candidates[best].first.log_prob;
  hyp.finished = candidates[best].second;
  return hyp;
}

}  // namespace vcap
