#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "sarlab/metrics.hpp"
#include "sarlab/rng.hpp"

using namespace sarlab;

namespace {

// Independent oracle: brute-force probability over all positive-negative
// pairs, ties counted one half.
double auroc_pairwise(const std::vector<int>& y, const std::vector<double>& s) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Independent oracle: walk distinct thresholds from high to low, recompute
// precision/recall from scratch at each, sum the step areas.
double auprc_sweep(const std::vector<int>& y, const std::vector<double>& s) {
  std::vector<double> thresholds(s.begin(), s.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::size_t npos = 0;
  for (int v : y) npos += (v != 0);
  double area = 0.0, prev_recall = 0.0;
  for (double th : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (s[i] >= th) (y[i] != 0 ? tp : fp) += 1;
    }
    const double recall = double(tp) / double(npos);
    const double precision = double(tp) / double(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

}  // namespace

TEST_CASE("auroc basics") {
  std::vector<int> y{1, 1, 0, 0};
  std::vector<double> perfect{0.9, 0.8, 0.2, 0.1};
  CHECK(auroc(y, perfect) == 1.0);

  std::vector<double> tied{0.5, 0.5, 0.5, 0.5};
  CHECK(auroc(y, tied) == 0.5);

  std::vector<int> y2{1, 0, 1, 0};
  std::vector<double> s2{0.9, 0.8, 0.7, 0.1};
  CHECK(auroc(y2, s2) == Catch::Approx(0.75).margin(1e-15));
  CHECK(auroc(y2, s2) == Catch::Approx(auroc_pairwise(y2, s2)).margin(1e-15));

  std::vector<int> one_class{1, 1, 1};
  std::vector<double> s3{0.1, 0.2, 0.3};
  CHECK_THROWS(auroc(one_class, s3));
}

TEST_CASE("auroc equals pairwise oracle on random instances") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = rng.uniform_int(3, 14);
    std::vector<int> y(n);
    std::vector<double> s(n);
    bool pos = false, neg = false;
    for (int i = 0; i < n; ++i) {
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
      (y[i] ? pos : neg) = true;
      s[i] = rng.bernoulli(0.3) ? 0.5 : rng.uniform01();  // force some ties
    }
    if (!pos || !neg) continue;
    CHECK(std::fabs(auroc(y, s) - auroc_pairwise(y, s)) < 1e-12);
  }
}

TEST_CASE("auroc complement identity for tie-free scores") {
  Rng rng(12);
  std::vector<int> y;
  std::vector<double> s, sneg;
  for (int i = 0; i < 40; ++i) {
    y.push_back(i % 3 == 0);
    s.push_back(i * 0.013 + rng.uniform01() * 0.001);
    sneg.push_back(-s.back());
  }
  CHECK(auroc(y, s) + auroc(y, sneg) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("auprc basics") {
  std::vector<int> y{1, 0, 1};
  std::vector<double> s{0.9, 0.5, 0.1};
  // PR sweep by hand: (R,P) = (0.5,1), (0.5,0.5), (1,2/3); area = 0.5 + 0.5 * 2/3.
  CHECK(auprc(y, s) == Catch::Approx(0.5 + 0.5 * 2.0 / 3.0).margin(1e-15));

  std::vector<int> y2{1, 1, 0, 0};
  std::vector<double> perfect{0.9, 0.8, 0.2, 0.1};
  CHECK(auprc(y2, perfect) == 1.0);

  std::vector<int> nopos{0, 0};
  std::vector<double> s3{0.1, 0.2};
  CHECK_THROWS(auprc(nopos, s3));
}

TEST_CASE("auprc equals threshold-walk oracle on small instances") {
  Rng rng(13);
  for (int trial = 0; trial < 400; ++trial) {
    const int n = rng.uniform_int(2, 12);
    std::vector<int> y(n);
    std::vector<double> s(n);
    bool pos = false;
    for (int i = 0; i < n; ++i) {
      y[i] = rng.bernoulli(0.5) ? 1 : 0;
      pos |= (y[i] != 0);
      s[i] = rng.bernoulli(0.3) ? 0.25 : rng.uniform01();
    }
    if (!pos) continue;
    CHECK(std::fabs(auprc(y, s) - auprc_sweep(y, s)) < 1e-12);
  }
}

TEST_CASE("auprc approaches prevalence for random scores") {
  Rng rng(14);
  const int n = 20000;
  std::vector<int> y(n);
  std::vector<double> s(n);
  int npos = 0;
  for (int i = 0; i < n; ++i) {
    y[i] = rng.bernoulli(0.3) ? 1 : 0;
    npos += y[i];
    s[i] = rng.uniform01();
  }
  const double prevalence = double(npos) / n;
  CHECK(std::fabs(auprc(y, s) - prevalence) < 0.03);
}

TEST_CASE("metrics invariant under strictly increasing transforms") {
  Rng rng(15);
  std::vector<int> y;
  std::vector<double> s, st;
  for (int i = 0; i < 60; ++i) {
    y.push_back(rng.bernoulli(0.4));
    s.push_back(rng.uniform(-2.0, 2.0));
    st.push_back(std::exp(s.back()) + 3.0 * s.back());
  }
  if (std::count(y.begin(), y.end(), 1) == 0) y[0] = 1;
  if (std::count(y.begin(), y.end(), 0) == 0) y[1] = 0;
  CHECK(auroc(y, s) == Catch::Approx(auroc(y, st)).margin(1e-12));
  CHECK(auprc(y, s) == Catch::Approx(auprc(y, st)).margin(1e-12));
}

TEST_CASE("spearman examples") {
  std::vector<double> a{1, 2, 3, 4, 5};

  SECTION("identical orderings") {
    auto r = spearman(a, a);
    CHECK(r.rho == Catch::Approx(1.0));
  }
  SECTION("reversed orderings") {
    std::vector<double> b{5, 4, 3, 2, 1};
    auto r = spearman(a, b);
    CHECK(r.rho == Catch::Approx(-1.0));
  }
  SECTION("hand-ranked example") {
    std::vector<double> b{2, 1, 4, 3, 5};
    // Ranks of a: 1..5; ranks of b: 2,1,4,3,5. Pearson of ranks = 0.8.
    auto r = spearman(a, b);
    CHECK(r.rho == Catch::Approx(0.8).margin(1e-12));
    CHECK(r.defined);
    // t = 0.8 * sqrt(3 / 0.36) = 2.3094; p two-sided on 3 df.
    const double t = 0.8 * std::sqrt(3.0 / (1.0 - 0.64));
    CHECK(r.p == Catch::Approx(student_t_two_sided_p(t, 3.0)).margin(1e-12));
  }
  SECTION("zero rank variance flagged") {
    std::vector<double> c{7, 7, 7, 7, 7};
    auto r = spearman(a, c);
    CHECK_FALSE(r.defined);
  }
}

TEST_CASE("spearman symmetry and transform invariance") {
  Rng rng(16);
  std::vector<double> a, b, bt;
  for (int i = 0; i < 25; ++i) {
    a.push_back(rng.uniform(-3, 3));
    b.push_back(rng.uniform(-3, 3));
    bt.push_back(std::atan(b.back()) * 10.0);
  }
  auto r1 = spearman(a, b);
  auto r2 = spearman(b, a);
  auto r3 = spearman(a, bt);
  CHECK(r1.rho == Catch::Approx(r2.rho).margin(1e-12));
  CHECK(r1.rho == Catch::Approx(r3.rho).margin(1e-12));
}

TEST_CASE("spearman exact permutation p for tiny n") {
  std::vector<double> a{1, 2, 3, 4, 5};
  std::vector<double> b{1, 2, 3, 5, 4};
  const double p = spearman_exact_p(a, b);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  // Perfect agreement is the most extreme table: exact p = 2/5! * (count of
  // permutations with |rho| = 1) is 2/120.
  const double p_perfect = spearman_exact_p(a, a);
  CHECK(p_perfect == Catch::Approx(2.0 / 120.0).margin(1e-12));
}

TEST_CASE("student t two-sided p sanity") {
  // Frozen reference: 2 * sf(2.0, df=8) evaluated independently.
  CHECK(student_t_two_sided_p(2.0, 8.0) == Catch::Approx(0.0805162379572626).margin(1e-12));
  CHECK(student_t_two_sided_p(0.0, 10.0) == Catch::Approx(1.0).margin(1e-12));
}
