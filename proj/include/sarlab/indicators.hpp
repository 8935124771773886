#pragma once

// Academic-resilience label construction. The working sample is the bottom
// two SES quintiles of the full regional sample with complete subject scores;
// four binary indicators are built on top of it:
//   SAR1: level-2 proficiency in math, reading and science jointly;
//   SAR3: SAR1 within the top half most unequal schools (within-school
//         score/SES correlation at or above the median);
//   SAR2: predicted probability of level-2 proficiency (3-level logit with
//         student and school-mean SES and school/country intercepts) in the
//         top two quintiles of the full-sample prediction distribution;
//   SAR4: SAR2 excluding schools whose posterior-mode intercept sits in the
//         top quintile of the school intercept distribution.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sarlab/dataset.hpp"
#include "sarlab/multilevel.hpp"
#include "sarlab/stats.hpp"

namespace sarlab {

struct Level2Cutoffs {
  double math = 420.07;
  double reading = 407.47;
  double science = 410.85;
};

struct ScoreTriple {
  double math = 0.0;
  double reading = 0.0;
  double science = 0.0;
};

struct IndicatorOptions {
  Level2Cutoffs cutoffs;
  std::string ses_feature = "ESCS";
  bool weighted_quintiles = false;  // use row weights for SES/probability quintiles
  bool rho_median_per_country = false;
  std::string private_feature = "SchBKGD_Private";
  std::string urban_feature = "SchBKGD_Urban";
};

inline int composite_level2(const ScoreTriple& s, const Level2Cutoffs& c) {
  if (!(c.math > 0.0) || !(c.reading > 0.0) || !(c.science > 0.0))
    throw std::invalid_argument("composite_level2: cutoffs must be positive");
  if (std::isnan(s.math) || std::isnan(s.reading) || std::isnan(s.science))
    throw std::invalid_argument("composite_level2: missing subject score");
  return (s.math >= c.math && s.reading >= c.reading && s.science >= c.science) ? 1 : 0;
}

struct SchoolInequality {
  std::vector<double> rho;              // per school; 0 when degenerate/undefined
  std::vector<std::uint8_t> degenerate; // zero-variance or too few students
  double rho_median = 0.0;              // over non-degenerate schools (pooled)
  std::vector<double> rho_median_by_country;
  bool per_country = false;

  double median_for_country(int country) const {
    return per_country ? rho_median_by_country[country] : rho_median;
  }
};

struct SarLabelSet {
  std::vector<std::uint8_t> working;  // per row
  std::vector<int> ses_quintile;      // per row; -1 when SES missing
  std::vector<std::uint8_t> level2;   // per row; only valid where scored
  std::vector<std::uint8_t> scored;   // all three subject scores present
  std::vector<int> sar1, sar2, sar3, sar4;  // per row; -1 outside the working sample
  std::vector<double> y_hat;          // full-sample predicted probability (NaN w/o SES)
  std::vector<int> prob_quintile;     // per row; -1 when undefined
  std::vector<int> school_intercept_quintile;  // per school
  std::size_t n_excluded_missing_score = 0;
  std::size_t n_excluded_missing_ses = 0;
};

namespace indicator_detail {

inline int require_feature(const FeatureTable& t, const std::string& name) {
  const int col = t.feature_index(name);
  if (col < 0) throw std::invalid_argument("feature not in schema: " + name);
  return col;
}

// Quintiles over the subset of rows where `eligible` holds; -1 elsewhere.
inline std::vector<int> subset_quintiles(std::span<const double> values,
                                         std::span<const double> weights,
                                         std::span<const std::uint8_t> eligible) {
  std::vector<double> v, w;
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < values.size(); ++r) {
    if (!eligible[r]) continue;
    rows.push_back(r);
    v.push_back(values[r]);
    w.push_back(weights[r]);
  }
  std::vector<int> out(values.size(), -1);
  if (rows.empty()) return out;
  const auto q = assign_quintiles(v, w);
  for (std::size_t i = 0; i < rows.size(); ++i) out[rows[i]] = q[i];
  return out;
}

}  // namespace indicator_detail

// SES quintiles over the full sample plus the working-sample mask and SAR1.
inline SarLabelSet build_sar1(const FeatureTable& table, const IndicatorOptions& opt = {}) {
  if (!table.scores) throw std::invalid_argument("build_sar1: table has no score columns");
  const int ses_col = indicator_detail::require_feature(table, opt.ses_feature);
  const std::size_t n = table.n_rows();

  SarLabelSet out;
  out.scored.assign(n, 0);
  out.level2.assign(n, 0);
  out.working.assign(n, 0);
  out.sar1.assign(n, -1);
  out.sar2.assign(n, -1);
  out.sar3.assign(n, -1);
  out.sar4.assign(n, -1);
  out.y_hat.assign(n, std::numeric_limits<double>::quiet_NaN());
  out.prob_quintile.assign(n, -1);

  std::vector<double> ses(n, 0.0);
  std::vector<std::uint8_t> has_ses(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    if (table.is_missing(r, ses_col)) {
      ++out.n_excluded_missing_ses;
      continue;
    }
    has_ses[r] = 1;
    ses[r] = table.value(r, ses_col);
  }
  const std::vector<double> unit(n, 1.0);
  out.ses_quintile = indicator_detail::subset_quintiles(
      ses, opt.weighted_quintiles ? std::span<const double>(table.weights)
                                  : std::span<const double>(unit),
      has_ses);

  for (std::size_t r = 0; r < n; ++r) {
    const bool scored = table.scores->row_complete(r);
    out.scored[r] = scored ? 1 : 0;
    if (!scored) {
      ++out.n_excluded_missing_score;
      continue;
    }
    out.level2[r] = composite_level2({table.scores->math[r], table.scores->reading[r],
                                      table.scores->science[r]},
                                     opt.cutoffs) != 0;
    if (out.ses_quintile[r] == 1 || out.ses_quintile[r] == 2) {
      out.working[r] = 1;
      out.sar1[r] = out.level2[r];
    }
  }
  if (std::find(out.working.begin(), out.working.end(), 1) == out.working.end())
    throw std::invalid_argument("build_sar1: empty working sample");
  return out;
}

// Within-school Pearson correlation of mean subject score with student SES.
inline SchoolInequality school_ses_correlation(const FeatureTable& table,
                                               const IndicatorOptions& opt = {}) {
  if (!table.scores) throw std::invalid_argument("school_ses_correlation: no score columns");
  const int ses_col = indicator_detail::require_feature(table, opt.ses_feature);
  const std::size_t n_schools = table.school_names.size();

  std::vector<std::vector<double>> xs(n_schools), ys(n_schools);
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    if (table.is_missing(r, ses_col) || !table.scores->row_complete(r)) continue;
    const double score = (table.scores->math[r] + table.scores->reading[r] +
                          table.scores->science[r]) / 3.0;
    xs[table.school_of_row[r]].push_back(table.value(r, ses_col));
    ys[table.school_of_row[r]].push_back(score);
  }

  SchoolInequality out;
  out.per_country = opt.rho_median_per_country;
  out.rho.assign(n_schools, 0.0);
  out.degenerate.assign(n_schools, 1);
  std::vector<double> defined_pooled;
  std::vector<std::vector<double>> defined_by_country(table.country_names.size());
  for (std::size_t s = 0; s < n_schools; ++s) {
    const auto pr = pearson(ys[s], xs[s]);
    if (!pr.defined) continue;  // constant score or SES: rho := 0, flagged
    out.rho[s] = pr.r;
    out.degenerate[s] = 0;
    defined_pooled.push_back(pr.r);
    defined_by_country[table.country_of_school[s]].push_back(pr.r);
  }
  if (defined_pooled.empty())
    throw std::invalid_argument("school_ses_correlation: no school with defined correlation");
  out.rho_median = median(defined_pooled);
  if (out.per_country) {
    out.rho_median_by_country.resize(table.country_names.size(), out.rho_median);
    for (std::size_t c = 0; c < defined_by_country.size(); ++c)
      if (!defined_by_country[c].empty())
        out.rho_median_by_country[c] = median(defined_by_country[c]);
  }
  return out;
}

inline void build_sar3(SarLabelSet& labels, const SchoolInequality& inequality,
                       const FeatureTable& table) {
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    if (!labels.working[r]) continue;
    const int s = table.school_of_row[r];
    const double median_rho = inequality.median_for_country(table.country_of_row[r]);
    labels.sar3[r] = (labels.sar1[r] == 1 && inequality.rho[s] >= median_rho) ? 1 : 0;
  }
}

// Fits the 3-level logit of level-2 proficiency on the full scored sample.
inline MultilevelFit fit_indicator_model(const FeatureTable& table, const SarLabelSet& labels,
                                         const IndicatorOptions& opt = {},
                                         const MultilevelOptions& mopt = {}) {
  const int ses_col = indicator_detail::require_feature(table, opt.ses_feature);
  std::vector<int> y;
  std::vector<double> ses;
  std::vector<int> school;
  std::vector<double> all_ses(table.n_rows(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < table.n_rows(); ++r)
    if (!table.is_missing(r, ses_col)) all_ses[r] = table.value(r, ses_col);
  const auto mses = per_school_means(all_ses, table.school_of_row, table.school_names.size());
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    if (!labels.scored[r] || std::isnan(all_ses[r])) continue;
    y.push_back(labels.level2[r]);
    ses.push_back(all_ses[r]);
    school.push_back(table.school_of_row[r]);
  }
  return fit_3level_logit(y, ses, mses, school, table.country_of_school, mopt);
}

inline void build_sar2(SarLabelSet& labels, const MultilevelFit& fit, const FeatureTable& table,
                       const IndicatorOptions& opt = {}) {
  if (!fit.fitted) throw std::invalid_argument("build_sar2: unfitted model");
  const int ses_col = indicator_detail::require_feature(table, opt.ses_feature);
  const std::size_t n = table.n_rows();
  std::vector<std::uint8_t> has_pred(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    if (table.is_missing(r, ses_col)) continue;
    const int s = table.school_of_row[r];
    if (s >= static_cast<int>(fit.school_intercepts.size()))
      throw std::invalid_argument("build_sar2: school absent from fit: " +
                                  table.school_names[s]);
    labels.y_hat[r] =
        predict_probability(fit, table.value(r, ses_col), s, table.country_of_row[r]);
    has_pred[r] = 1;
  }
  const std::vector<double> unit(n, 1.0);
  labels.prob_quintile = indicator_detail::subset_quintiles(
      labels.y_hat, opt.weighted_quintiles ? std::span<const double>(table.weights)
                                           : std::span<const double>(unit),
      has_pred);
  for (std::size_t r = 0; r < n; ++r) {
    if (!labels.working[r]) continue;
    labels.sar2[r] = (has_pred[r] && labels.prob_quintile[r] >= 4) ? 1 : 0;
  }
}

inline void build_sar4(SarLabelSet& labels, const MultilevelFit& fit, const FeatureTable& table) {
  labels.school_intercept_quintile = intercept_quintiles(fit);
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    if (!labels.working[r]) continue;
    const int s = table.school_of_row[r];
    const bool top_school = labels.school_intercept_quintile[s] == 5;
    labels.sar4[r] = (labels.sar2[r] == 1 && !top_school) ? 1 : 0;
  }
}

// All four indicators plus intermediates in one pass.
inline SarLabelSet build_all_indicators(const FeatureTable& table, MultilevelFit& fit_out,
                                        const IndicatorOptions& opt = {},
                                        const MultilevelOptions& mopt = {}) {
  SarLabelSet labels = build_sar1(table, opt);
  build_sar3(labels, school_ses_correlation(table, opt), table);
  fit_out = fit_indicator_model(table, labels, opt, mopt);
  build_sar2(labels, fit_out, table, opt);
  build_sar4(labels, fit_out, table);
  return labels;
}

// ---------------------------------------------------------------------------
// Rates summary in the five-column layout: whole working sample plus the
// public/private and rural/urban school sub-systems.

struct RatesReport {
  std::vector<std::string> columns;         // column labels
  std::vector<std::array<double, 4>> rates; // per column: SAR1..SAR4
  std::vector<std::size_t> counts;          // working-sample rows per column
};

inline RatesReport rates_report(const SarLabelSet& labels, const FeatureTable& table,
                                const IndicatorOptions& opt = {}) {
  const int private_col = table.feature_index(opt.private_feature);
  const int urban_col = table.feature_index(opt.urban_feature);

  auto column = [&](auto include) {
    std::array<double, 4> rates{0, 0, 0, 0};
    double wsum = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
      if (!labels.working[r] || !include(r)) continue;
      const double w = table.weights[r];
      wsum += w;
      ++count;
      rates[0] += w * (labels.sar1[r] == 1);
      rates[1] += w * (labels.sar2[r] == 1);
      rates[2] += w * (labels.sar3[r] == 1);
      rates[3] += w * (labels.sar4[r] == 1);
    }
    if (wsum > 0.0)
      for (double& v : rates) v /= wsum;
    return std::pair{rates, count};
  };

  RatesReport out;
  auto push = [&](const std::string& name, auto include) {
    auto [rates, count] = column(include);
    out.columns.push_back(name);
    out.rates.push_back(rates);
    out.counts.push_back(count);
  };
  push("whole", [](std::size_t) { return true; });
  auto feature_is = [&](int col, double v) {
    return [&table, col, v](std::size_t r) {
      return col >= 0 && !table.is_missing(r, col) && table.value(r, col) == v;
    };
  };
  push("public", feature_is(private_col, 0.0));
  push("private", feature_is(private_col, 1.0));
  push("rural", feature_is(urban_col, 0.0));
  push("urban", feature_is(urban_col, 1.0));
  return out;
}

}  // namespace sarlab
