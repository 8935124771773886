#pragma once

// Scalar statistics: Pearson correlation, Student-t tail probabilities via
// the regularized incomplete beta function, Welch's unequal-variance t-test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace sarlab {

inline double inverse_logit(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_cont_frac(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * detail::beta_cont_frac(a, b, x) / a;
  }
  return 1.0 - front * detail::beta_cont_frac(b, a, 1.0 - x) / b;
}

// Two-sided p-value for a t statistic with df degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  if (df <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  const double x = df / (df + t * t);
  return incomplete_beta(df / 2.0, 0.5, x);
}

struct PearsonResult {
  double r = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;  // false when either variable has zero variance
};

inline PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) return {};
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return {};
  PearsonResult res;
  res.r = sxy / std::sqrt(sxx * syy);
  res.r = std::clamp(res.r, -1.0, 1.0);
  res.defined = true;
  return res;
}

// Unweighted median; does not modify its argument.
inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty list");
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct WelchResult {
  double mean_a = 0.0;
  double mean_b = 0.0;
  double difference = 0.0;  // mean_b - mean_a
  double t = std::numeric_limits<double>::quiet_NaN();
  double df = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;  // false when either group has < 2 values or zero
                         // combined variance makes t undefined
};

inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  WelchResult res;
  const std::size_t na = a.size(), nb = b.size();
  if (na < 2 || nb < 2) return res;
  double ma = 0.0, mb = 0.0;
  for (double v : a) ma += v;
  for (double v : b) mb += v;
  ma /= static_cast<double>(na);
  mb /= static_cast<double>(nb);
  double va = 0.0, vb = 0.0;
  for (double v : a) va += (v - ma) * (v - ma);
  for (double v : b) vb += (v - mb) * (v - mb);
  va /= static_cast<double>(na - 1);
  vb /= static_cast<double>(nb - 1);
  res.mean_a = ma;
  res.mean_b = mb;
  res.difference = mb - ma;
  const double sa = va / static_cast<double>(na);
  const double sb = vb / static_cast<double>(nb);
  const double se2 = sa + sb;
  if (se2 <= 0.0) {
    if (res.difference == 0.0) {  // identical constant groups: t = 0 by convention
      res.t = 0.0;
      res.df = static_cast<double>(na + nb - 2);
      res.p = 1.0;
      res.defined = true;
    }
    return res;
  }
  res.t = res.difference / std::sqrt(se2);
  res.df = se2 * se2 /
           (sa * sa / static_cast<double>(na - 1) + sb * sb / static_cast<double>(nb - 1));
  res.p = student_t_two_sided_p(res.t, res.df);
  res.defined = true;
  return res;
}

// Mid-rank assignment: ties share the average of the ranks they occupy.
// Ranks are 1-based.
inline std::vector<double> mid_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return values[l] < values[r]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace sarlab
