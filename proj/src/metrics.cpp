#include "midout/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "midout/check.hpp"

namespace midout {

double mse(const std::vector<std::vector<double>>& pred,
           const std::vector<std::vector<double>>& gold) {
  MIDOUT_CHECK(pred.size() == gold.size(),
               "mse sequence count " << pred.size() << " vs " << gold.size());
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    MIDOUT_CHECK(pred[s].size() == gold[s].size(), "mse length mismatch at pair "
                                                       << s << ": " << pred[s].size() << " vs "
                                                       << gold[s].size());
    for (std::size_t i = 0; i < pred[s].size(); ++i) {
      double d = pred[s][i] - gold[s][i];
      acc += d * d;
      ++n;
    }
  }
  MIDOUT_CHECK(n > 0, "mse over zero positions");
  return acc / static_cast<double>(n);
}

double symmetric_mse(std::span<const double> seq) {
  MIDOUT_CHECK(seq.size() >= 3 && seq.size() % 2 == 1,
               "symmetric_mse needs odd length >= 3, got " << seq.size());
  std::size_t m = seq.size() / 2;
  double acc = 0.0;
  for (std::size_t j = 1; j <= m; ++j) {
    double d = seq[m - j] - seq[m + j];
    acc += d * d;
  }
  return acc / static_cast<double>(m);
}

namespace {
using Ngram = std::vector<int>;

std::map<Ngram, long long> ngram_counts(const std::vector<int>& toks, int n) {
  std::map<Ngram, long long> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
    counts[Ngram(toks.begin() + static_cast<long>(i),
                 toks.begin() + static_cast<long>(i) + n)] += 1;
  }
  return counts;
}

struct OrderCounts {
  long long clipped = 0;
  long long total = 0;
};

OrderCounts order_counts(const std::vector<int>& cand, const std::vector<std::vector<int>>& refs,
                         int n) {
  OrderCounts oc;
  auto cc = ngram_counts(cand, n);
  std::map<Ngram, long long> ref_max;
  for (const auto& r : refs) {
    for (const auto& [g, c] : ngram_counts(r, n)) {
      auto& m = ref_max[g];
      m = std::max(m, c);
    }
  }
  for (const auto& [g, c] : cc) {
    oc.total += c;
    auto it = ref_max.find(g);
    if (it != ref_max.end()) oc.clipped += std::min(c, it->second);
  }
  return oc;
}

// Closest reference length; ties prefer the shorter reference.
long long effective_ref_len(std::size_t cand_len, const std::vector<std::vector<int>>& refs) {
  long long best = -1;
  for (const auto& r : refs) {
    long long len = static_cast<long long>(r.size());
    if (best < 0) {
      best = len;
      continue;
    }
    long long dc = std::llabs(len - static_cast<long long>(cand_len));
    long long db = std::llabs(best - static_cast<long long>(cand_len));
    if (dc < db || (dc == db && len < best)) best = len;
  }
  return best;
}

double brevity_penalty(long long cand_len, long long ref_len) {
  if (cand_len >= ref_len) return 1.0;
  return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
}

double combine_precisions(const std::array<long long, 4>& clipped,
                          const std::array<long long, 4>& total, bool smoothed) {
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (total[static_cast<std::size_t>(n)] == 0) continue;  // too short for this order
    double p;
    if (clipped[static_cast<std::size_t>(n)] > 0) {
      p = static_cast<double>(clipped[static_cast<std::size_t>(n)]) /
          static_cast<double>(total[static_cast<std::size_t>(n)]);
    } else if (smoothed) {
      p = 1.0 / static_cast<double>(total[static_cast<std::size_t>(n)] + 1);
    } else {
      return 0.0;
    }
    log_sum += std::log(p);
    ++orders;
  }
  if (orders == 0) return 0.0;
  return std::exp(log_sum / orders);
}
}  // namespace

double bleu4(const std::vector<int>& candidate, const std::vector<std::vector<int>>& references,
             BleuMode mode) {
  if (candidate.empty()) return 0.0;
  MIDOUT_CHECK(!references.empty(), "bleu4 needs at least one reference");
  std::array<long long, 4> clipped{};
  std::array<long long, 4> total{};
  for (int n = 1; n <= 4; ++n) {
    OrderCounts oc = order_counts(candidate, references, n);
    clipped[static_cast<std::size_t>(n - 1)] = oc.clipped;
    total[static_cast<std::size_t>(n - 1)] = oc.total;
  }
  double prec = combine_precisions(clipped, total, mode == BleuMode::kSentenceSmoothed);
  long long r = effective_ref_len(candidate.size(), references);
  return brevity_penalty(static_cast<long long>(candidate.size()), r) * prec;
}

void CorpusBleu::add(const std::vector<int>& candidate,
                     const std::vector<std::vector<int>>& references) {
  MIDOUT_CHECK(!references.empty(), "bleu4 needs at least one reference");
  for (int n = 1; n <= 4; ++n) {
    OrderCounts oc = order_counts(candidate, references, n);
    clipped_[static_cast<std::size_t>(n - 1)] += oc.clipped;
    total_[static_cast<std::size_t>(n - 1)] += oc.total;
  }
  cand_len_ += static_cast<long long>(candidate.size());
  if (!candidate.empty()) {
    ref_len_ += effective_ref_len(candidate.size(), references);
  } else {
    // empty candidates contribute the shortest reference length
    long long best = static_cast<long long>(references[0].size());
    for (const auto& r : references) best = std::min(best, static_cast<long long>(r.size()));
    ref_len_ += best;
  }
  ++segments_;
}

double CorpusBleu::score() const {
  if (cand_len_ == 0) return 0.0;
  double prec = combine_precisions(clipped_, total_, false);
  return brevity_penalty(cand_len_, ref_len_) * prec;
}

double rouge_l(const std::vector<int>& candidate, const std::vector<std::vector<int>>& references,
               double beta) {
  if (candidate.empty() || references.empty()) return 0.0;
  double best = 0.0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    std::size_t m = candidate.size(), n = ref.size();
    std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
    for (std::size_t i = 1; i <= m; ++i) {
      for (std::size_t j = 1; j <= n; ++j) {
        if (candidate[i - 1] == ref[j - 1]) {
          cur[j] = prev[j - 1] + 1;
        } else {
          cur[j] = std::max(prev[j], cur[j - 1]);
        }
      }
      std::swap(prev, cur);
    }
    double lcs = static_cast<double>(prev[n]);
    if (lcs == 0.0) continue;
    double p = lcs / static_cast<double>(m);
    double r = lcs / static_cast<double>(n);
    double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * r * p / (r + b2 * p));
  }
  return best;
}

double self_bleu(const std::vector<std::vector<int>>& captions) {
  MIDOUT_CHECK(captions.size() >= 2, "self_bleu needs >= 2 captions, got " << captions.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    std::vector<std::vector<int>> others;
    others.reserve(captions.size() - 1);
    for (std::size_t j = 0; j < captions.size(); ++j) {
      if (j != i) others.push_back(captions[j]);
    }
    acc += bleu4(captions[i], others, BleuMode::kSentenceSmoothed);
  }
  return acc / static_cast<double>(captions.size());
}

}  // namespace midout
