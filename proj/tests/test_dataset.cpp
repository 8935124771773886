#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "sarlab/dataset.hpp"

using namespace sarlab;

namespace {

std::vector<FeatureSpec> tiny_schema() {
  FeatureSpec a;
  a.name = "x_cont";
  a.kind = FeatureKind::kContinuous;
  FeatureSpec b;
  b.name = "x_bin";
  b.kind = FeatureKind::kBinary;
  FeatureSpec c;
  c.name = "x_ord";
  c.kind = FeatureKind::kOrdinal;
  c.min_value = 0;
  c.max_value = 5;
  return {a, b, c};
}

FeatureTable parse(const std::string& body) {
  std::istringstream in(body);
  return load_table(read_csv(in), tiny_schema());
}

// Independent oracle for weighted quintiles: walk the weighted CDF in sorted
// (value, index) order and bucket by the share strictly below each row.
std::vector<int> quintiles_cdf_walk(const std::vector<double>& v, const std::vector<double>& w) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return v[l] < v[r]; });
  double total = 0.0;
  for (double x : w) total += x;
  std::vector<int> labels(v.size());
  double cum = 0.0;
  for (std::size_t i : order) {
    int q = 1;
    while (q < 5 && cum / total >= q / 5.0) ++q;
    labels[i] = q;
    cum += w[i];
  }
  return labels;
}

}  // namespace

TEST_CASE("load_table accepts well-formed input") {
  const auto t = parse(
      "student_id,school_id,country_id,x_cont,x_bin,x_ord\n"
      "s1,sc1,c1,1.5,0,3\n"
      "s2,sc1,c1,-2.25,1,0\n"
      "s3,sc2,c1,0.5,1,5\n");
  CHECK(t.n_rows() == 3);
  CHECK(t.n_features() == 3);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 3; ++j) CHECK_FALSE(t.is_missing(r, j));
  CHECK(t.value(1, 0) == -2.25);
  CHECK(t.school_names.size() == 2);
}

TEST_CASE("load_table rejects schema violations with row and column") {
  const std::string body =
      "student_id,school_id,country_id,x_cont,x_bin,x_ord\n"
      "s1,sc1,c1,1.5,2,3\n";
  try {
    parse(body);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 1") != std::string::npos);
    CHECK(msg.find("x_bin") != std::string::npos);
  }
}

TEST_CASE("load_table flags empty cells as missing") {
  const auto t = parse(
      "student_id,school_id,country_id,x_cont,x_bin,x_ord\n"
      "s1,sc1,c1,,1,3\n");
  CHECK(t.is_missing(0, 0));
  CHECK_FALSE(t.is_missing(0, 1));
  CHECK(std::isnan(t.value(0, 0)));
}

TEST_CASE("load_table rejects a school mapped to two countries") {
  CHECK_THROWS_AS(parse("student_id,school_id,country_id,x_cont,x_bin,x_ord\n"
                        "s1,sc1,c1,1,1,1\n"
                        "s2,sc1,c2,1,1,1\n"),
                  SchemaError);
}

TEST_CASE("load_table rejects duplicate feature names") {
  auto schema = tiny_schema();
  schema.push_back(schema[0]);
  std::istringstream in("student_id,school_id,country_id,x_cont,x_bin,x_ord\n");
  CHECK_THROWS_AS(load_table(read_csv(in), schema), SchemaError);
}

TEST_CASE("assign_quintiles basics") {
  std::vector<double> unit(5, 1.0);

  SECTION("one row per quintile") {
    std::vector<double> v{1, 2, 3, 4, 5};
    CHECK(assign_quintiles(v, unit) == std::vector<int>{1, 2, 3, 4, 5});
  }
  SECTION("constant values tie-break by stable index") {
    std::vector<double> v(5, 7.0);
    CHECK(assign_quintiles(v, unit) == std::vector<int>{1, 2, 3, 4, 5});
  }
  SECTION("weighted example, frozen from the CDF-walk oracle") {
    std::vector<double> v{1, 2, 3, 4};
    std::vector<double> w{0.7, 0.1, 0.1, 0.1};
    const auto labels = assign_quintiles(v, w);
    CHECK(labels == std::vector<int>{1, 4, 5, 5});
    CHECK(labels == quintiles_cdf_walk(v, w));
  }
  SECTION("errors") {
    std::vector<double> none;
    CHECK_THROWS(assign_quintiles(none, none));
    std::vector<double> v{1, 2};
    std::vector<double> w{0, 0};
    CHECK_THROWS(assign_quintiles(v, w));
  }
}

TEST_CASE("assign_quintiles matches oracle and is weight-scale invariant") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(1, 40);
    std::vector<double> v(n), w(n), w2(n);
    for (int i = 0; i < n; ++i) {
      v[i] = rng.bernoulli(0.3) ? 1.0 : rng.uniform(-5, 5);  // force ties sometimes
      w[i] = rng.bernoulli(0.2) ? 0.0 : rng.uniform(0.0, 3.0);
      w2[i] = w[i] * 17.5;
    }
    double tot = 0;
    for (double x : w) tot += x;
    if (tot <= 0) w[0] = w2[0] = 1.0;
    const auto got = assign_quintiles(v, w);
    CHECK(got == quintiles_cdf_walk(v, w));
    CHECK(got == assign_quintiles(v, w2));
  }
}

TEST_CASE("assign_quintiles fills every label for >= 5 rows with unit weights") {
  Rng rng(22);
  for (int n : {5, 6, 9, 23}) {
    std::vector<double> v(n), w(n, 1.0);
    for (auto& x : v) x = rng.uniform(-1, 1);
    const auto labels = assign_quintiles(v, w);
    std::set<int> seen(labels.begin(), labels.end());
    CHECK(seen == std::set<int>{1, 2, 3, 4, 5});
  }
}

TEST_CASE("stratified folds: exact divisibility case") {
  std::vector<int> y(100, 0);
  for (int i = 0; i < 20; ++i) y[i * 5] = 1;
  const auto fa = stratified_undersampled_folds(y, 5, 42);

  for (int f = 0; f < 5; ++f) {
    int val_pos = 0;
    for (auto i : fa.validate[f]) val_pos += y[i];
    CHECK(val_pos == 4);

    int tr_pos = 0, tr_neg = 0;
    for (auto i : fa.train[f]) (y[i] ? tr_pos : tr_neg) += 1;
    CHECK(tr_pos == 16);
    CHECK(tr_neg == 16);

    // No validation row of the same fold leaks into training.
    std::set<std::size_t> val(fa.validate[f].begin(), fa.validate[f].end());
    for (auto i : fa.train[f]) CHECK(val.count(i) == 0);
  }

  // Validation folds partition the rows.
  std::vector<int> seen(100, 0);
  std::size_t total = 0;
  for (int f = 0; f < 5; ++f) {
    total += fa.validate[f].size();
    for (auto i : fa.validate[f]) seen[i] += 1;
  }
  CHECK(total == 100);
  for (int c : seen) CHECK(c == 1);
}

TEST_CASE("stratified folds: determinism and error paths") {
  std::vector<int> y(50, 0);
  for (int i = 0; i < 13; ++i) y[i] = 1;
  const auto a = stratified_undersampled_folds(y, 5, 7);
  const auto b = stratified_undersampled_folds(y, 5, 7);
  CHECK(a.fold_of_row == b.fold_of_row);
  CHECK(a.train == b.train);
  CHECK(a.validate == b.validate);

  const auto c = stratified_undersampled_folds(y, 5, 8);
  CHECK(a.fold_of_row != c.fold_of_row);

  std::vector<int> few{1, 1, 0, 0, 0, 0, 0, 0};
  CHECK_THROWS(stratified_undersampled_folds(few, 3, 1));  // 2 positives < k
}

TEST_CASE("stratified folds: near-proportional validation shares") {
  Rng rng(23);
  std::vector<int> y(83, 0);
  for (int i = 0; i < 83; ++i) y[i] = rng.bernoulli(0.3) ? 1 : 0;
  int npos = 0;
  for (int v : y) npos += v;
  const int k = 4;
  const auto fa = stratified_undersampled_folds(y, k, 99);
  for (int f = 0; f < k; ++f) {
    int vp = 0;
    for (auto i : fa.validate[f]) vp += y[i];
    CHECK(std::fabs(vp - double(npos) / k) < 1.0);
  }
}

namespace {
FeatureTable two_group_table(const std::vector<double>& a, const std::vector<double>& b) {
  std::ostringstream body;
  body << "student_id,school_id,country_id,x_cont,x_bin,x_ord\n";
  int id = 0;
  for (double v : a) body << "s" << ++id << ",sc1,c1," << v << ",0,0\n";
  for (double v : b) body << "s" << ++id << ",sc1,c1," << v << ",0,0\n";
  std::istringstream in(body.str());
  return load_table(read_csv(in), tiny_schema());
}
}  // namespace

TEST_CASE("summarize_groups hand-checked Welch example") {
  const auto t = two_group_table({1, 2, 3, 4, 5}, {3, 4, 5, 6, 7});
  std::vector<int> mask(10, 0);
  for (int i = 5; i < 10; ++i) mask[i] = 1;
  const auto gs = summarize_groups(t, mask);
  const auto& cs = gs.covariates[0];
  CHECK(cs.defined);
  CHECK(cs.difference == Catch::Approx(2.0).margin(1e-15));
  // By hand: se^2 = 0.5 + 0.5 = 1, t = 2; Welch df = 8.
  CHECK(cs.t == Catch::Approx(2.0).margin(1e-12));
  CHECK(cs.p == Catch::Approx(0.0805162379572626).margin(1e-9));
  CHECK(stars(cs.tier) == "*");
}

TEST_CASE("summarize_groups identical groups") {
  const auto t = two_group_table({1, 2, 3}, {1, 2, 3});
  std::vector<int> mask{0, 0, 0, 1, 1, 1};
  const auto gs = summarize_groups(t, mask);
  CHECK(gs.covariates[0].difference == 0.0);
  CHECK(gs.covariates[0].t == 0.0);
  CHECK(stars(gs.covariates[0].tier) == "");
}

TEST_CASE("summarize_groups zero-variance difference reported undefined") {
  const auto t = two_group_table({0, 0, 0, 0}, {1, 1, 1, 1});
  std::vector<int> mask{0, 0, 0, 0, 1, 1, 1, 1};
  const auto gs = summarize_groups(t, mask);
  CHECK(gs.covariates[0].difference == Catch::Approx(1.0));
  CHECK_FALSE(gs.covariates[0].defined);
}

TEST_CASE("summarize_groups antisymmetry of differences") {
  const auto t = two_group_table({1.5, 2.5, 0.5, 4.0}, {0.25, 3.0, 1.0});
  std::vector<int> mask{0, 0, 0, 0, 1, 1, 1};
  std::vector<int> flipped{1, 1, 1, 1, 0, 0, 0};
  const auto gs = summarize_groups(t, mask);
  const auto gs2 = summarize_groups(t, flipped);
  CHECK(gs.covariates[0].difference == Catch::Approx(-gs2.covariates[0].difference).margin(1e-15));
}

TEST_CASE("synth_generate null configuration has balanced outcomes") {
  SynthConfig cfg;
  cfg.countries = 2;
  cfg.schools_per_country = 10;
  cfg.students_per_school = 50;
  const auto res = synth_generate(cfg, 5);
  const std::size_t n = res.table.n_rows();
  CHECK(n == 1000);
  double rate = 0.0;
  for (int y : res.latent.outcomes) rate += y;
  rate /= double(n);
  const double se = std::sqrt(0.25 / double(n));
  CHECK(std::fabs(rate - 0.5) < 3.0 * se);
}

TEST_CASE("synth_generate margins regenerate from the latent record") {
  SynthConfig cfg;
  cfg.countries = 2;
  cfg.schools_per_country = 3;
  cfg.students_per_school = 10;
  cfg.beta0 = 0.3;
  cfg.beta_ses = 0.8;
  cfg.sigma2_school = 0.4;
  cfg.sigma2_country = 0.2;
  cfg.feature_effects = {{"StudBKGD_Gender", 0.5}, {"StudBKGD_Homework", -0.2}};
  cfg.interaction = true;
  const auto res = synth_generate(cfg, 77);
  const auto& t = res.table;
  const int ses = t.feature_index("ESCS");
  const int ge = t.feature_index("StudBKGD_Gender");
  const int hw = t.feature_index("StudBKGD_Homework");

  // School-mean SES recomputed from the emitted table.
  std::vector<double> sum(t.school_names.size(), 0.0);
  std::vector<int> cnt(t.school_names.size(), 0);
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    sum[t.school_of_row[r]] += t.value(r, ses);
    cnt[t.school_of_row[r]] += 1;
  }
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const int s = t.school_of_row[r];
    const double mean_ses = sum[s] / cnt[s];
    const double margin = cfg.beta0 + cfg.beta_ses * t.value(r, ses) +
                          cfg.beta_school_ses * mean_ses +
                          0.5 * t.value(r, ge) - 0.2 * t.value(r, hw) +
                          cfg.interaction_coef * t.value(r, ge) * t.value(r, hw) +
                          res.latent.school_intercepts[s] +
                          res.latent.country_intercepts[t.country_of_row[r]];
    CHECK(margin == Catch::Approx(res.latent.margins[r]).margin(1e-10));
  }
}

TEST_CASE("synth_generate school intercept variance near sigma2") {
  SynthConfig cfg;
  cfg.countries = 10;
  cfg.schools_per_country = 20;
  cfg.students_per_school = 30;
  cfg.sigma2_school = 0.5;
  const auto res = synth_generate(cfg, 11);
  const auto& u = res.latent.school_intercepts;
  double mean = 0.0;
  for (double v : u) mean += v;
  mean /= double(u.size());
  double var = 0.0;
  for (double v : u) var += (v - mean) * (v - mean);
  var /= double(u.size() - 1);
  CHECK(var > 0.35);
  CHECK(var < 0.65);
}

TEST_CASE("synth_generate bitwise reproducible") {
  SynthConfig cfg;
  cfg.countries = 2;
  cfg.schools_per_country = 4;
  cfg.students_per_school = 15;
  cfg.sigma2_school = 0.3;
  cfg.missing_rate = 0.1;
  const auto a = synth_generate(cfg, 123);
  const auto b = synth_generate(cfg, 123);
  REQUIRE(a.table.values.size() == b.table.values.size());
  for (std::size_t i = 0; i < a.table.values.size(); ++i) {
    if (std::isnan(a.table.values[i]))
      CHECK(std::isnan(b.table.values[i]));
    else
      CHECK(a.table.values[i] == b.table.values[i]);
  }
  CHECK(a.latent.margins == b.latent.margins);
  CHECK(a.table.missing == b.table.missing);

  CHECK_THROWS(synth_generate([] {
    SynthConfig c;
    c.countries = 0;
    return c;
  }(), 1));
  CHECK_THROWS(synth_generate([] {
    SynthConfig c;
    c.sigma2_school = -1.0;
    return c;
  }(), 1));
}
