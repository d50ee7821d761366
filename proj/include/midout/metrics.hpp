#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

namespace midout {

struct MetricReport {
  std::string name;
  double value = 0.0;  // BLEU/ROUGE kept in [0,1] internally, x100 in tables
  int count = 0;       // items aggregated
};

// Pooled mean squared error over all positions of all pairs.
double mse(const std::vector<std::vector<double>>& pred,
           const std::vector<std::vector<double>>& gold);

// Mean squared difference between mirrored positions around the middle
// element: (1/m) sum_j (seq[mid-j] - seq[mid+j])^2 for an odd length 2m+1.
double symmetric_mse(std::span<const double> seq);

enum class BleuMode { kSentenceSmoothed, kCorpus };

// BLEU-4: geometric mean of clipped 1..4-gram precisions times the brevity
// penalty. Sentence mode add-one smooths zero-count n-gram orders; orders
// the candidate is too short to form are skipped, so bleu4(x, {x}) = 1 for
// every nonempty x.
double bleu4(const std::vector<int>& candidate, const std::vector<std::vector<int>>& references,
             BleuMode mode = BleuMode::kCorpus);

// Corpus-level accumulator (unsmoothed, counts pooled over segments).
class CorpusBleu {
 public:
  void add(const std::vector<int>& candidate, const std::vector<std::vector<int>>& references);
  double score() const;
  int segments() const { return segments_; }

 private:
  std::array<long long, 4> clipped_{};
  std::array<long long, 4> total_{};
  long long cand_len_ = 0;
  long long ref_len_ = 0;
  int segments_ = 0;
};

// LCS F-measure, beta = 1.2, max over references.
double rouge_l(const std::vector<int>& candidate, const std::vector<std::vector<int>>& references,
               double beta = 1.2);

// Mean over each caption of sentence-smoothed BLEU-4 against the other
// k-1 captions; lower = more diverse. Needs k >= 2.
double self_bleu(const std::vector<std::vector<int>>& captions);

}  // namespace midout
