#pragma once

// Ranking metrics for binary classifiers and rank correlation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "sarlab/stats.hpp"

namespace sarlab {

struct MetricReport {
  double auroc = std::numeric_limits<double>::quiet_NaN();
  double auprc = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
  std::size_t positives = 0;
};

// Probability that a random positive outranks a random negative, ties counted
// one half (rank-sum formulation; equals the trapezoidal ROC area).
inline double auroc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw std::invalid_argument("auroc: size mismatch");
  std::size_t npos = 0;
  for (int y : labels) npos += (y != 0);
  const std::size_t n = labels.size();
  const std::size_t nneg = n - npos;
  if (npos == 0 || nneg == 0) throw std::invalid_argument("auroc: single-class input");
  const std::vector<double> ranks = mid_ranks(scores);
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] != 0) rank_sum_pos += ranks[i];
  const double np = static_cast<double>(npos);
  const double nn = static_cast<double>(nneg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// Area under precision-recall via a descending-score sweep using the
// step-wise (non-interpolated) sum over score groups: sum (R_k - R_{k-1}) P_k.
inline double auprc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw std::invalid_argument("auprc: size mismatch");
  const std::size_t n = labels.size();
  std::size_t npos = 0;
  for (int y : labels) npos += (y != 0);
  if (npos == 0) throw std::invalid_argument("auprc: no positives");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return scores[l] > scores[r];
  });

  double area = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;  // process a whole tie group at once
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) {
      ++seen;
      tp += (labels[order[k]] != 0);
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(npos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  return area;
}

inline MetricReport evaluate_binary(std::span<const int> labels,
                                    std::span<const double> scores) {
  MetricReport r;
  r.n = labels.size();
  for (int y : labels) r.positives += (y != 0);
  r.auroc = auroc(labels, scores);
  r.auprc = auprc(labels, scores);
  return r;
}

struct SpearmanResult {
  double rho = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;  // false when either side has zero rank variance
};

// Pearson correlation of mid-ranks; two-sided p from the t approximation
// t = rho * sqrt((n-2) / (1-rho^2)) on n-2 degrees of freedom.
inline SpearmanResult spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 3)
    throw std::invalid_argument("spearman: need equal lengths >= 3");
  const std::vector<double> ra = mid_ranks(a);
  const std::vector<double> rb = mid_ranks(b);
  const PearsonResult pr = pearson(ra, rb);
  SpearmanResult res;
  if (!pr.defined) return res;
  res.rho = pr.r;
  res.defined = true;
  const double n = static_cast<double>(a.size());
  if (std::fabs(res.rho) >= 1.0) {
    res.p = 0.0;
  } else {
    const double t = res.rho * std::sqrt((n - 2.0) / (1.0 - res.rho * res.rho));
    res.p = student_t_two_sided_p(t, n - 2.0);
  }
  return res;
}

// Exact permutation p-value for |rho|; feasible for n <= 10.
inline double spearman_exact_p(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 3 || a.size() > 10)
    throw std::invalid_argument("spearman_exact_p: need 3 <= n <= 10");
  const SpearmanResult obs = spearman(a, b);
  if (!obs.defined) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> perm(b.begin(), b.end());
  std::sort(perm.begin(), perm.end());
  std::size_t total = 0, at_least = 0;
  const double thresh = std::fabs(obs.rho) - 1e-12;
  do {
    const SpearmanResult s = spearman(a, perm);
    if (s.defined && std::fabs(s.rho) >= thresh) ++at_least;
    ++total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(at_least) / static_cast<double>(total);
}

}  // namespace sarlab
