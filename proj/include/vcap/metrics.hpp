#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace vcap {

struct EvalPair {
  std::string video_id;
  std::vector<std::string> candidate;                 // tokens
  std::vector<std::vector<std::string>> references;   // token lists, >= 1
};

struct ItemScores {
  std::string video_id;
  double rouge_l = 0.0;
  double cider = 0.0;
};

struct MetricReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  std::vector<ItemScores> items;

  std::string to_json() const;
};

// Corpus BLEU-4: clipped n-gram precisions for n = 1..4 pooled over items,
// geometric mean, brevity penalty exp(1 - r/c) for c < r with r the closest
// reference length per item. A zero precision count gets +1e-9 on the
// numerator only.
double bleu4(const std::vector<EvalPair>& pairs);

// ROUGE-L F-measure with beta^2 = 1.44; multi-reference takes the max.
double rouge_l_item(const EvalPair& pair);
double rouge_l(const std::vector<EvalPair>& pairs);  // mean over items

// CIDEr-D over n = 1..4: tf-idf n-gram cosine per reference with candidate
// counts clipped to the reference's, Gaussian length penalty (sigma = 6),
// idf = log(videos / max(1, df)) with df = per-video reference presence,
// averaged over n and references, times 10. Needs >= 2 distinct videos so
// document frequencies carry information.
std::vector<double> cider_items(const std::vector<EvalPair>& pairs);
double cider(const std::vector<EvalPair>& pairs);  // mean over items

MetricReport evaluate(const std::vector<EvalPair>& pairs);

// candidates: one {"video_id", "caption"} JSON object per line;
// references: caption-record lines. Every candidate must have references.
std::vector<EvalPair> pair_files(const std::filesystem::path& candidates,
                                 const std::filesystem::path& references);

}  // namespace vcap
