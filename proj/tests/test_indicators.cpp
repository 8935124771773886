#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "sarlab/indicators.hpp"
#include "sarlab/rng.hpp"

using namespace sarlab;

namespace {

SynthResult medium_synth(std::uint64_t seed, double s2_school = 0.4, double s2_country = 0.1) {
  SynthConfig cfg;
  cfg.countries = 4;
  cfg.schools_per_country = 8;
  cfg.students_per_school = 25;
  cfg.beta_ses = 0.8;
  cfg.sigma2_school = s2_school;
  cfg.sigma2_country = s2_country;
  return synth_generate(cfg, seed);
}

}  // namespace

TEST_CASE("composite_level2 boundary and conjunction") {
  Level2Cutoffs c;
  CHECK(composite_level2({c.math, c.reading, c.science}, c) == 1);  // inclusive boundary
  CHECK(composite_level2({c.math - 0.01, c.reading + 50, c.science + 50}, c) == 0);
  CHECK(composite_level2({c.math - 1, c.reading - 1, c.science - 1}, c) == 0);
  CHECK_THROWS(composite_level2({std::nan(""), 500.0, 500.0}, c));
  Level2Cutoffs bad;
  bad.math = 0.0;
  CHECK_THROWS(composite_level2({500, 500, 500}, bad));
}

TEST_CASE("build_sar1 masks by SES quintile and counts exclusions") {
  const auto res = medium_synth(7);
  auto table = res.table;
  // Knock out one row's math score to exercise the exclusion report.
  table.scores->math[3] = std::numeric_limits<double>::quiet_NaN();
  const auto labels = build_sar1(table);

  CHECK(labels.n_excluded_missing_score == 1);
  CHECK(labels.sar1[3] == -1);
  std::size_t working = 0;
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    if (labels.ses_quintile[r] >= 3) CHECK(labels.working[r] == 0);
    if (labels.working[r]) {
      ++working;
      CHECK((labels.sar1[r] == 0 || labels.sar1[r] == 1));
      CHECK(labels.ses_quintile[r] <= 2);
    } else {
      CHECK(labels.sar1[r] == -1);
    }
  }
  // Bottom two quintiles of a 800-row sample, minus the excluded row.
  CHECK(working >= 315);
  CHECK(working <= 320);
}

TEST_CASE("build_sar1 conjunction forces zero when one subject always fails") {
  auto res = medium_synth(8);
  auto table = res.table;
  for (auto& v : table.scores->reading) v = 0.0;  // everyone below the reading cutoff
  const auto labels = build_sar1(table);
  for (std::size_t r = 0; r < table.n_rows(); ++r)
    if (labels.working[r]) CHECK(labels.sar1[r] == 0);
}

TEST_CASE("school_ses_correlation: perfect line, degenerate school, hand oracle") {
  // Three schools in one country: an exact line, a constant-score school,
  // and a 4-student school checked against the direct Pearson formula.
  std::ostringstream body;
  body << "student_id,school_id,country_id,ESCS,pv_math,pv_read,pv_scie\n";
  auto row = [&](int id, const char* school, double ses, double score) {
    body << "s" << id << "," << school << ",c1," << ses << "," << score << "," << score << ","
         << score << "\n";
  };
  int id = 0;
  for (double ses : {-1.0, 0.0, 1.0, 2.0}) row(++id, "line", ses, 2.0 * ses + 1.0);
  for (double ses : {-1.0, 0.5, 2.0}) row(++id, "flat", ses, 444.0);
  const double ses4[4] = {-1, 0, 1, 2};
  const double sc4[4] = {400, 420, 410, 450};
  for (int i = 0; i < 4; ++i) row(++id, "mixed", ses4[i], sc4[i]);

  FeatureSpec ses_spec;
  ses_spec.name = "ESCS";
  std::istringstream in(body.str());
  const auto table = load_table(read_csv(in), {ses_spec});
  const auto ineq = school_ses_correlation(table);

  const int line = 0, flat = 1, mixed = 2;  // insertion order
  CHECK(ineq.rho[line] == Catch::Approx(1.0).margin(1e-12));
  CHECK(ineq.degenerate[flat] == 1);
  CHECK(ineq.rho[flat] == 0.0);
  // Frozen from the direct Pearson formula.
  CHECK(ineq.rho[mixed] == Catch::Approx(0.8366600265340757).margin(1e-12));
  CHECK(ineq.degenerate[mixed] == 0);
  // Median over the two defined schools.
  CHECK(ineq.rho_median == Catch::Approx(0.5 * (1.0 + 0.8366600265340757)).margin(1e-12));
}

TEST_CASE("sar3 conjunction and tie behavior") {
  const auto res = medium_synth(9);
  const auto& table = res.table;
  auto labels = build_sar1(table);
  const auto ineq = school_ses_correlation(table);
  build_sar3(labels, ineq, table);

  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    if (!labels.working[r]) {
      CHECK(labels.sar3[r] == -1);
      continue;
    }
    const int s = table.school_of_row[r];
    const bool unequal = ineq.rho[s] >= ineq.rho_median;
    CHECK(labels.sar3[r] == ((labels.sar1[r] == 1 && unequal) ? 1 : 0));
    if (labels.sar3[r] == 1) CHECK(labels.sar1[r] == 1);  // subset
  }

  SECTION("identical rho across schools makes SAR3 equal SAR1") {
    SchoolInequality same;
    same.rho.assign(table.school_names.size(), 0.5);
    same.degenerate.assign(table.school_names.size(), 0);
    same.rho_median = 0.5;
    auto labels2 = build_sar1(table);
    build_sar3(labels2, same, table);
    for (std::size_t r = 0; r < table.n_rows(); ++r)
      if (labels2.working[r]) CHECK(labels2.sar3[r] == labels2.sar1[r]);
  }
}

TEST_CASE("degenerate-school convention only affects that school's students") {
  const auto res = medium_synth(10);
  const auto& table = res.table;
  auto ineq = school_ses_correlation(table);

  auto labels_a = build_sar1(table);
  build_sar3(labels_a, ineq, table);

  // Force school 0 degenerate (rho 0) versus "excluded" (rho set so the
  // comparison fails); students outside school 0 must not change.
  auto ineq_b = ineq;
  ineq_b.rho[0] = 0.0;
  ineq_b.degenerate[0] = 1;
  auto labels_b = build_sar1(table);
  build_sar3(labels_b, ineq_b, table);
  auto ineq_c = ineq_b;
  ineq_c.rho[0] = -2.0;  // below any median: always fails the comparison
  auto labels_c = build_sar1(table);
  build_sar3(labels_c, ineq_c, table);
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    if (table.school_of_row[r] == 0) continue;
    CHECK(labels_b.sar3[r] == labels_c.sar3[r]);
  }
}

TEST_CASE("sar2: constant prediction uses the stable-index tie rule") {
  // 500 rows with SES cycling 0..4 so the working sample (bottom two
  // quintiles) is exactly uniform over input index.
  std::ostringstream body;
  body << "student_id,school_id,country_id,ESCS,pv_math,pv_read,pv_scie\n";
  for (int r = 0; r < 500; ++r)
    body << "s" << r << ",sch" << (r / 50) << ",c1," << (r % 5) << ",500,500,500\n";
  FeatureSpec ses_spec;
  ses_spec.name = "ESCS";
  std::istringstream in(body.str());
  const auto table = load_table(read_csv(in), {ses_spec});
  auto labels = build_sar1(table);

  MultilevelFit fit;
  fit.fitted = true;
  fit.beta0 = 0.0;
  fit.beta_ses = 0.0;
  fit.beta_school_ses = 0.0;
  fit.school_mean_ses.assign(table.school_names.size(), 0.0);
  fit.school_intercepts.assign(table.school_names.size(), 0.0);
  fit.country_intercepts.assign(table.country_names.size(), 0.0);
  fit.country_of_school = table.country_of_school;

  build_sar2(labels, fit, table);
  for (std::size_t r = 0; r < table.n_rows(); ++r) CHECK(labels.y_hat[r] == 0.5);

  // Quintiles fall by input index; with index-uniform working rows the
  // top-two-quintile share is exactly 40%.
  std::size_t working = 0, sar2 = 0;
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    if (!labels.working[r]) continue;
    ++working;
    sar2 += labels.sar2[r] == 1;
  }
  CHECK(working == 200);
  CHECK(double(sar2) / double(working) == Catch::Approx(0.4).margin(1e-12));
}

TEST_CASE("sar2/sar4 on synthetic data with strong school effects") {
  SynthConfig cfg;
  cfg.countries = 3;
  cfg.schools_per_country = 10;
  cfg.students_per_school = 30;
  cfg.beta_ses = 1.2;
  cfg.sigma2_school = 1.0;
  const auto res = synth_generate(cfg, 12);
  const auto& table = res.table;

  MultilevelFit fit;
  auto labels = build_all_indicators(table, fit);

  SECTION("subset structure") {
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
      if (!labels.working[r]) continue;
      if (labels.sar3[r] == 1) CHECK(labels.sar1[r] == 1);
      if (labels.sar4[r] == 1) CHECK(labels.sar2[r] == 1);
    }
  }
  SECTION("positive predictions concentrate in high-intercept schools") {
    // Among working-sample students, SAR2-positive rows should sit in schools
    // with higher latent intercepts on average.
    double mean_pos = 0.0, mean_neg = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
      if (!labels.working[r]) continue;
      const double u = res.latent.school_intercepts[table.school_of_row[r]];
      if (labels.sar2[r] == 1) {
        mean_pos += u;
        ++n_pos;
      } else {
        mean_neg += u;
        ++n_neg;
      }
    }
    REQUIRE(n_pos > 0);
    REQUIRE(n_neg > 0);
    CHECK(mean_pos / n_pos > mean_neg / n_neg);
  }
  SECTION("sar4 drops exactly the top intercept quintile schools") {
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
      if (!labels.working[r] || labels.sar2[r] != 1) continue;
      const bool top = labels.school_intercept_quintile[table.school_of_row[r]] == 5;
      CHECK(labels.sar4[r] == (top ? 0 : 1));
    }
  }
  SECTION("student in the maximum-intercept school cannot be SAR4") {
    std::size_t argmax = 0;
    for (std::size_t s = 1; s < fit.school_intercepts.size(); ++s)
      if (fit.school_intercepts[s] > fit.school_intercepts[argmax]) argmax = s;
    for (std::size_t r = 0; r < table.n_rows(); ++r)
      if (labels.working[r] && table.school_of_row[r] == int(argmax))
        CHECK(labels.sar4[r] != 1);
  }
}

TEST_CASE("sar1 invariance under joint monotone transform of scores and cutoffs") {
  const auto res = medium_synth(13);
  auto table = res.table;
  const auto base = build_sar1(table);

  auto transform = [](double v) { return std::exp(v / 200.0); };
  IndicatorOptions opt;
  opt.cutoffs.math = transform(Level2Cutoffs{}.math);
  opt.cutoffs.reading = transform(Level2Cutoffs{}.reading);
  opt.cutoffs.science = transform(Level2Cutoffs{}.science);
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    table.scores->math[r] = transform(table.scores->math[r]);
    table.scores->reading[r] = transform(table.scores->reading[r]);
    table.scores->science[r] = transform(table.scores->science[r]);
  }
  const auto transformed = build_sar1(table, opt);
  CHECK(base.sar1 == transformed.sar1);
  CHECK(base.working == transformed.working);
}

TEST_CASE("weighted quintile flag moves the working-sample boundary") {
  // Four students with SES 0..3; the weight on the lowest-SES row spans the
  // bottom two quintiles by itself, so under weighting only that row works.
  std::ostringstream body;
  body << "student_id,school_id,country_id,weight,ESCS,pv_math,pv_read,pv_scie\n";
  body << "s1,sch1,c1,8,0,500,500,500\n";
  body << "s2,sch1,c1,1,1,500,500,500\n";
  body << "s3,sch2,c1,1,2,500,500,500\n";
  body << "s4,sch2,c1,1,3,500,500,500\n";
  FeatureSpec ses_spec;
  ses_spec.name = "ESCS";
  LoadOptions lopt;
  lopt.weight_column = "weight";
  std::istringstream in(body.str());
  const auto table = load_table(read_csv(in), {ses_spec}, lopt);

  IndicatorOptions unweighted;
  const auto a = build_sar1(table, unweighted);
  CHECK(a.working == std::vector<std::uint8_t>{1, 1, 0, 0});

  IndicatorOptions weighted;
  weighted.weighted_quintiles = true;
  const auto b = build_sar1(table, weighted);
  CHECK(b.working == std::vector<std::uint8_t>{1, 0, 0, 0});
}

TEST_CASE("per-country rho median compares each school within its country") {
  // Country c1 has rho {0.9, 0.1}, country c2 has {0.8, -0.5}. Pooled median
  // 0.45 would pass 0.8 and 0.9 only; per-country medians pass the top school
  // of each country.
  std::ostringstream body;
  body << "student_id,school_id,country_id,ESCS,pv_math,pv_read,pv_scie\n";
  int id = 0;
  auto school = [&](const char* sch, const char* cty, double slope, double noise) {
    const double ses[4] = {-1, 0, 1, 2};
    const double bump[4] = {0, noise, -noise, 0};
    for (int i = 0; i < 4; ++i) {
      const double score = 450 + slope * ses[i] + bump[i];
      body << "s" << ++id << "," << sch << "," << cty << "," << ses[i] << "," << score << ","
           << score << "," << score << "\n";
    }
  };
  school("a1", "c1", 30, 2);    // strongly unequal
  school("a2", "c1", 2, 10);    // weak
  school("b1", "c2", 25, 2);    // strongly unequal
  school("b2", "c2", -20, 5);   // negative
  FeatureSpec ses_spec;
  ses_spec.name = "ESCS";
  std::istringstream in(body.str());
  const auto table = load_table(read_csv(in), {ses_spec});

  IndicatorOptions opt;
  opt.rho_median_per_country = true;
  const auto ineq = school_ses_correlation(table, opt);
  REQUIRE(ineq.per_country);
  REQUIRE(ineq.rho_median_by_country.size() == 2);
  // Each country's top school sits at or above its own median; the weaker
  // school falls below it.
  CHECK(ineq.rho[0] >= ineq.rho_median_by_country[0]);
  CHECK(ineq.rho[1] < ineq.rho_median_by_country[0]);
  CHECK(ineq.rho[2] >= ineq.rho_median_by_country[1]);
  CHECK(ineq.rho[3] < ineq.rho_median_by_country[1]);
}

TEST_CASE("rates report has the five-column layout") {
  const auto res = medium_synth(14, 0.6, 0.2);
  const auto& table = res.table;
  MultilevelFit fit;
  const auto labels = build_all_indicators(table, fit);
  const auto report = rates_report(labels, table);

  CHECK(report.columns ==
        std::vector<std::string>{"whole", "public", "private", "rural", "urban"});
  // Whole-sample counts decompose into the public/private and rural/urban splits.
  CHECK(report.counts[1] + report.counts[2] == report.counts[0]);
  CHECK(report.counts[3] + report.counts[4] == report.counts[0]);
  for (const auto& col : report.rates)
    for (double v : col) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  // SAR3 never exceeds SAR1 and SAR4 never exceeds SAR2 in any column.
  for (const auto& col : report.rates) {
    CHECK(col[2] <= col[0] + 1e-12);
    CHECK(col[3] <= col[1] + 1e-12);
  }
}
