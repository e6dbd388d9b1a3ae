#include "vcap/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "vcap/caption_model.hpp"
#include "vcap/errors.hpp"
#include "vcap/features.hpp"

namespace vcap {

namespace {

constexpr std::size_t kMaxOrder = 4;
constexpr double kBleuEps = 1e-9;
constexpr double kCiderSigma = 6.0;

using Counts = std::unordered_map<std::string, double>;

// n-grams as joined strings; '\x1f' cannot appear in tokenized text
std::string join_gram(const std::vector<std::string>& tokens, std::size_t start, std::size_t n) {
  std::string key = tokens[start];
  for (std::size_t i = 1; i < n; ++i) {
    key.push_back('\x1f');
    key += tokens[start + i];
  }
  return key;
}

Counts ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  Counts counts;
  if (tokens.size() >= n)
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) counts[join_gram(tokens, i, n)] += 1.0;
  return counts;
}

void check_pair(const EvalPair& pair) {
  if (pair.candidate.empty())
    throw EmptyInput("empty candidate for video '" + pair.video_id + "'");
  if (pair.references.empty())
    throw EmptyInput("no references for video '" + pair.video_id + "'");
  for (const auto& ref : pair.references)
    if (ref.empty()) throw EmptyInput("empty reference for video '" + pair.video_id + "'");
}

}  // namespace

double bleu4(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw EmptyCorpus("BLEU needs at least one pair");
  std::array<double, kMaxOrder> correct{}, total{};
  double cand_len = 0.0, ref_len = 0.0;
  for (const auto& pair : pairs) {
    check_pair(pair);
    cand_len += double(pair.candidate.size());
    // closest reference length; ties resolved toward the shorter one
    std::size_t closest = pair.references[0].size();
    for (const auto& ref : pair.references) {
      auto dist = [&](std::size_t len) {
        return len > pair.candidate.size() ? len - pair.candidate.size()
                                           : pair.candidate.size() - len;
      };
      if (dist(ref.size()) < dist(closest) ||
          (dist(ref.size()) == dist(closest) && ref.size() < closest))
        closest = ref.size();
    }
    ref_len += double(closest);

    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      Counts cand = ngram_counts(pair.candidate, n);
      Counts max_ref;
      for (const auto& ref : pair.references)
        for (const auto& [gram, count] : ngram_counts(ref, n))
          max_ref[gram] = std::max(max_ref[gram], count);
      for (const auto& [gram, count] : cand) {
        total[n - 1] += count;
        auto it = max_ref.find(gram);
        if (it != max_ref.end()) correct[n - 1] += std::min(count, it->second);
      }
    }
  }

  double log_prec = 0.0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    double numer = correct[n] > 0.0 ? correct[n] : kBleuEps;
    log_prec += std::log(numer / std::max(total[n], 1.0));
  }
  double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return bp * std::exp(log_prec / double(kMaxOrder));
}

namespace {

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l_item(const EvalPair& pair) {
  check_pair(pair);
  constexpr double beta2 = 1.2 * 1.2;
  double best = 0.0;
  for (const auto& ref : pair.references) {
    double lcs = double(lcs_length(pair.candidate, ref));
    if (lcs == 0.0) continue;
    double p = lcs / double(pair.candidate.size());
    double r = lcs / double(ref.size());
    best = std::max(best, (1.0 + beta2) * r * p / (r + beta2 * p));
  }
  return best;
}

double rouge_l(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw EmptyCorpus("ROUGE-L needs at least one pair");
  double sum = 0.0;
  for (const auto& pair : pairs) sum += rouge_l_item(pair);
  return sum / double(pairs.size());
}

std::vector<double> cider_items(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw EmptyCorpus("CIDEr needs at least one pair");
  if (pairs.size() < 2)
    throw EmptyCorpus("CIDEr document frequencies need at least 2 distinct videos");
  for (const auto& pair : pairs) check_pair(pair);

  // per-video presence counts across each video's reference set
  Counts df;
  for (const auto& pair : pairs) {
    std::unordered_set<std::string> seen;
    for (const auto& ref : pair.references)
      for (std::size_t n = 1; n <= kMaxOrder; ++n)
        for (const auto& [gram, _] : ngram_counts(ref, n)) seen.insert(gram);
    for (const auto& gram : seen) df[gram] += 1.0;
  }
  double log_videos = std::log(double(pairs.size()));
  auto idf = [&](const std::string& gram) {
    auto it = df.find(gram);
    double f = it == df.end() ? 0.0 : it->second;
    return log_videos - std::log(std::max(1.0, f));
  };

  struct TfIdf {
    std::array<Counts, kMaxOrder> vec;
    std::array<double, kMaxOrder> norm{};
    double length = 0.0;
  };
  auto vectorize = [&](const std::vector<std::string>& tokens) {
    TfIdf out;
    out.length = double(tokens.size());
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      for (const auto& [gram, count] : ngram_counts(tokens, n)) {
        double w = count * idf(gram);
        out.vec[n - 1][gram] = w;
        out.norm[n - 1] += w * w;
      }
      out.norm[n - 1] = std::sqrt(out.norm[n - 1]);
    }
    return out;
  };

  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& pair : pairs) {
    TfIdf cand = vectorize(pair.candidate);
    std::array<double, kMaxOrder> acc{};
    for (const auto& ref : pair.references) {
      TfIdf rv = vectorize(ref);
      double delta = cand.length - rv.length;
      double penalty = std::exp(-delta * delta / (2.0 * kCiderSigma * kCiderSigma));
      for (std::size_t n = 0; n < kMaxOrder; ++n) {
        double sim = 0.0;
        for (const auto& [gram, w] : cand.vec[n]) {
          auto it = rv.vec[n].find(gram);
          if (it != rv.vec[n].end()) sim += std::min(w, it->second) * it->second;
        }
        if (cand.norm[n] > 0.0 && rv.norm[n] > 0.0) sim /= cand.norm[n] * rv.norm[n];
        acc[n] += sim * penalty;
      }
    }
    double mean_n = 0.0;
    for (std::size_t n = 0; n < kMaxOrder; ++n) mean_n += acc[n] / double(pair.references.size());
    scores.push_back(10.0 * mean_n / double(kMaxOrder));
  }
  return scores;
}

double cider(const std::vector<EvalPair>& pairs) {
  auto items = cider_items(pairs);
  double sum = 0.0;
  for (double s : items) sum += s;
  return sum / double(items.size());
}

MetricReport evaluate(const std::vector<EvalPair>& pairs) {
  MetricReport report;
  report.bleu4 = bleu4(pairs);
  report.rouge_l = rouge_l(pairs);
  auto cider_scores = cider_items(pairs);
  double cider_sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ItemScores item;
    item.video_id = pairs[i].video_id;
    item.rouge_l = rouge_l_item(pairs[i]);
    item.cider = cider_scores[i];
    cider_sum += item.cider;
    report.items.push_back(std::move(item));
  }
  report.cider = cider_sum / double(pairs.size());
  return report;
}

std::string MetricReport::to_json() const {
  nlohmann::json doc;
  doc["bleu4"] = bleu4;
  doc["rouge_l"] = rouge_l;
  doc["cider"] = cider;
  doc["items"] = nlohmann::json::array();
  for (const auto& item : items) {
    doc["items"].push_back(
        {{"video_id", item.video_id}, {"rouge_l", item.rouge_l}, {"cider", item.cider}});
  }
  return doc.dump(2);
}

std::vector<EvalPair> pair_files(const std::filesystem::path& candidates,
                                 const std::filesystem::path& references) {
  std::ifstream in(candidates);
  if (!in) throw IoError("cannot open '" + candidates.string() + "' for reading");

  auto refs = load_caption_records(references);
  std::unordered_map<std::string, const CaptionRecord*> by_id;
  for (const auto& rec : refs) by_id[rec.video_id] = &rec;

  std::vector<EvalPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string video_id, caption;
    try {
      nlohmann::json doc = nlohmann::json::parse(line);
      video_id = doc.at("video_id").get<std::string>();
      caption = doc.at("caption").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw CorruptHeader(candidates.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    auto it = by_id.find(video_id);
    if (it == by_id.end())
      throw CorruptHeader("candidate '" + video_id + "' has no reference record");
    EvalPair pair;
    pair.video_id = video_id;
    pair.candidate = tokenize(caption);
    for (const auto& ref : it->second->captions) pair.references.push_back(tokenize(ref));
    pairs.push_back(std::move(pair));
  }
  if (pairs.empty()) throw EmptyCorpus("candidates file has no entries");
  return pairs;
}

}  // namespace vcap
