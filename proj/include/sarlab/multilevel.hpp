#pragma once

// Three-level random-intercept logistic regression (students in schools in
// countries), estimated by penalized quasi-likelihood with a Laplace
// approximation: an inner penalized Newton solve for the fixed effects and
// posterior-mode intercepts at fixed variances, and an outer EM-type variance
// update from squared posterior modes plus the conditional-variance
// correction. Documented as approximate; downstream use depends on rankings
// of predictions and intercepts, which are robust to the approximation.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sarlab/dataset.hpp"
#include "sarlab/stats.hpp"

namespace sarlab {

struct MultilevelOptions {
  int max_outer_iterations = 200;
  int max_inner_iterations = 50;
  double outer_tolerance = 1e-6;   // relative parameter change
  double inner_tolerance = 1e-10;  // gradient max-norm of the penalized score
  bool pin_sigma2_school = false;  // fix the level-2 variance at ...
  double pinned_sigma2_school = 0.0;
  bool pin_sigma2_country = false;
  double pinned_sigma2_country = 0.0;
  // One predictor spanning more than this many log-odds units per standard
  // deviation flags complete separation.
  double separation_bound = 15.0;
};

struct MultilevelConvergence {
  bool converged = false;
  int outer_iterations = 0;
  double final_relative_change = std::numeric_limits<double>::quiet_NaN();
  double final_gradient_norm = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;
};

struct MultilevelFit {
  double beta0 = 0.0;             // intercept
  double beta_ses = 0.0;          // student SES effect
  double beta_school_ses = 0.0;   // school-mean SES effect
  double se_beta0 = 0.0, se_beta_ses = 0.0, se_beta_school_ses = 0.0;  // Wald
  double sigma2_school = 0.0;
  double sigma2_country = 0.0;
  std::vector<double> school_intercepts;   // posterior modes, by school index
  std::vector<double> country_intercepts;  // posterior modes, by country index
  std::vector<double> school_mean_ses;     // by school index (fit input echo)
  std::vector<int> country_of_school;
  // Level-1 residual variance of the logistic link, pi^2 / 3.
  static constexpr double level1_variance = 3.289868133696453;
  MultilevelConvergence convergence;

  bool fitted = false;

  double linear_predictor(double ses, int school, int country) const {
    double eta = beta0 + beta_ses * ses;
    if (school >= 0 && school < static_cast<int>(school_mean_ses.size())) {
      eta += beta_school_ses * school_mean_ses[school] + school_intercepts[school];
    } else {
      double mean = 0.0;  // unknown school: zero intercept, grand-mean context
      for (double v : school_mean_ses) mean += v;
      if (!school_mean_ses.empty()) mean /= static_cast<double>(school_mean_ses.size());
      eta += beta_school_ses * mean;
    }
    if (country >= 0 && country < static_cast<int>(country_intercepts.size()))
      eta += country_intercepts[country];
    return eta;
  }
};

struct SeparationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline MultilevelFit fit_3level_logit(std::span<const int> y, std::span<const double> ses,
                                      std::span<const double> school_mean_ses,
                                      std::span<const int> school_of_row,
                                      std::span<const int> country_of_school,
                                      const MultilevelOptions& opt = {}) {
  const std::size_t n = y.size();
  if (ses.size() != n || school_of_row.size() != n)
    throw std::invalid_argument("fit_3level_logit: size mismatch");
  const std::size_t n_schools = school_mean_ses.size();
  if (country_of_school.size() != n_schools)
    throw std::invalid_argument("fit_3level_logit: school/country map mismatch");
  if (n_schools < 2) throw std::invalid_argument("fit_3level_logit: need at least 2 schools");
  bool pos = false, neg = false;
  for (int v : y) (v != 0 ? pos : neg) = true;
  if (!pos || !neg) throw std::invalid_argument("fit_3level_logit: both classes required");

  int n_countries = 0;
  for (int c : country_of_school) n_countries = std::max(n_countries, c + 1);

  MultilevelFit fit;
  fit.school_mean_ses.assign(school_mean_ses.begin(), school_mean_ses.end());
  fit.country_of_school.assign(country_of_school.begin(), country_of_school.end());

  double sigma2_school = opt.pin_sigma2_school ? opt.pinned_sigma2_school : 0.1;
  double sigma2_country = opt.pin_sigma2_country ? opt.pinned_sigma2_country : 0.1;
  if (n_countries < 2 && !opt.pin_sigma2_country) {
    sigma2_country = 0.0;  // not identifiable with a single country
    fit.convergence.warnings.push_back("single country: level-3 variance reported as 0");
  }

  auto sd_of = [](std::span<const double> vals) {
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(vals.size()));
  };
  std::vector<double> mses_rows(n);
  for (std::size_t i = 0; i < n; ++i) mses_rows[i] = school_mean_ses[school_of_row[i]];
  const double predictor_sd[2] = {sd_of(ses), sd_of(mses_rows)};
  const char* predictor_names[2] = {"ses", "school_mean_ses"};

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n_schools);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_countries);

  auto has_school = [&] { return sigma2_school > 0.0; };
  auto has_country = [&] { return sigma2_country > 0.0; };

  Eigen::MatrixXd hinv;  // of the last inner solve, for variance updates / SEs

  auto run_inner = [&]() {
    const bool hs = has_school(), hc = has_country();
    const int dim = 3 + (hs ? static_cast<int>(n_schools) : 0) +
                    (hc ? static_cast<int>(n_countries) : 0);
    const int school_off = 3;
    const int country_off = 3 + (hs ? static_cast<int>(n_schools) : 0);

    auto eta_all = [&](const Eigen::VectorXd& b, const Eigen::VectorXd& uu,
                       const Eigen::VectorXd& vv, Eigen::VectorXd& eta) {
      for (std::size_t i = 0; i < n; ++i) {
        const int s = school_of_row[i];
        const int c = country_of_school[s];
        eta[i] = b[0] + b[1] * ses[i] + b[2] * school_mean_ses[s] + (hs ? uu[s] : 0.0) +
                 (hc ? vv[c] : 0.0);
      }
    };
    auto penalized_loglik = [&](const Eigen::VectorXd& eta, const Eigen::VectorXd& uu,
                                const Eigen::VectorXd& vv) {
      double ll = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = eta[i];
        const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
        ll += (y[i] != 0 ? e : 0.0) - softplus;
      }
      if (hs) ll -= 0.5 * uu.squaredNorm() / sigma2_school;
      if (hc) ll -= 0.5 * vv.squaredNorm() / sigma2_country;
      return ll;
    };

    Eigen::VectorXd eta(n), grad(dim);
    Eigen::MatrixXd hess(dim, dim);
    double gnorm = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_inner_iterations; ++it) {
      eta_all(beta, u, v, eta);
      grad.setZero();
      hess.setZero();
      for (std::size_t i = 0; i < n; ++i) {
        const double p = inverse_logit(eta[i]);
        const double w = std::max(p * (1.0 - p), 1e-12);
        const double r = (y[i] != 0 ? 1.0 : 0.0) - p;
        const int s = school_of_row[i];
        const int c = country_of_school[s];
        int idx[5];
        double val[5];
        int nz = 0;
        idx[nz] = 0; val[nz++] = 1.0;
        idx[nz] = 1; val[nz++] = ses[i];
        idx[nz] = 2; val[nz++] = school_mean_ses[s];
        if (hs) { idx[nz] = school_off + s; val[nz++] = 1.0; }
        if (hc) { idx[nz] = country_off + c; val[nz++] = 1.0; }
        for (int a = 0; a < nz; ++a) {
          grad[idx[a]] += r * val[a];
          for (int b2 = 0; b2 < nz; ++b2) hess(idx[a], idx[b2]) += w * val[a] * val[b2];
        }
      }
      if (hs) {
        for (std::size_t s = 0; s < n_schools; ++s) {
          grad[school_off + s] -= u[s] / sigma2_school;
          hess(school_off + s, school_off + s) += 1.0 / sigma2_school;
        }
      }
      if (hc) {
        for (int c = 0; c < n_countries; ++c) {
          grad[country_off + c] -= v[c] / sigma2_country;
          hess(country_off + c, country_off + c) += 1.0 / sigma2_country;
        }
      }
      gnorm = grad.cwiseAbs().maxCoeff();
      if (gnorm < opt.inner_tolerance) break;

      const Eigen::VectorXd step = hess.ldlt().solve(grad);
      const double ll0 = penalized_loglik(eta, u, v);
      double alpha = 1.0;
      for (int ls = 0; ls < 40; ++ls) {
        Eigen::VectorXd bn = beta + alpha * step.head(3);
        Eigen::VectorXd un = u, vn = v;
        if (hs) un += alpha * step.segment(school_off, n_schools);
        if (hc) vn += alpha * step.segment(country_off, n_countries);
        Eigen::VectorXd etan(n);
        eta_all(bn, un, vn, etan);
        if (penalized_loglik(etan, un, vn) >= ll0 - 1e-12) {
          beta = bn;
          u = un;
          v = vn;
          break;
        }
        alpha *= 0.5;
      }
      for (int b2 = 0; b2 < 2; ++b2) {
        if (std::fabs(beta[b2 + 1]) * predictor_sd[b2] > opt.separation_bound)
          throw SeparationError(
              std::string("complete separation detected: unbounded coefficient for ") +
              predictor_names[b2]);
      }
      if (!hs) u.setZero();
      if (!hc) v.setZero();
    }
    hinv = hess.inverse();
    fit.convergence.final_gradient_norm = gnorm;
    return std::pair<int, int>{school_off, country_off};
  };

  double rel_change = std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < opt.max_outer_iterations; ++outer) {
    fit.convergence.outer_iterations = outer + 1;
    const auto [school_off, country_off] = run_inner();

    double new_s2s = sigma2_school, new_s2c = sigma2_country;
    if (!opt.pin_sigma2_school && has_school()) {
      double acc = 0.0;
      for (std::size_t s = 0; s < n_schools; ++s)
        acc += u[s] * u[s] + hinv(school_off + s, school_off + s);
      new_s2s = acc / static_cast<double>(n_schools);
      if (new_s2s < 1e-8) new_s2s = 0.0;  // collapsed component
    }
    if (!opt.pin_sigma2_country && has_country() && n_countries >= 2) {
      double acc = 0.0;
      for (int c = 0; c < n_countries; ++c)
        acc += v[c] * v[c] + hinv(country_off + c, country_off + c);
      new_s2c = acc / static_cast<double>(n_countries);
      if (new_s2c < 1e-8) new_s2c = 0.0;
    }

    const double b_prev[3] = {fit.beta0, fit.beta_ses, fit.beta_school_ses};
    rel_change = 0.0;
    const double params_new[5] = {beta[0], beta[1], beta[2], new_s2s, new_s2c};
    const double params_old[5] = {b_prev[0], b_prev[1], b_prev[2], sigma2_school,
                                  sigma2_country};
    for (int i = 0; i < 5; ++i)
      rel_change = std::max(rel_change, std::fabs(params_new[i] - params_old[i]) /
                                            (std::fabs(params_old[i]) + 1.0));
    fit.beta0 = beta[0];
    fit.beta_ses = beta[1];
    fit.beta_school_ses = beta[2];
    sigma2_school = new_s2s;
    sigma2_country = new_s2c;
    fit.convergence.final_relative_change = rel_change;

    const bool variances_fixed = (opt.pin_sigma2_school || !has_school()) &&
                                 (opt.pin_sigma2_country || !has_country());
    if (rel_change < opt.outer_tolerance || (outer > 0 && variances_fixed)) {
      fit.convergence.converged = true;
      break;
    }
  }
  if (!fit.convergence.converged)
    fit.convergence.warnings.push_back("variance updates did not converge; estimates reported");

  // Final mode solve at the converged variances so the reported intercepts
  // satisfy the penalized-score stationarity at the reported sigma values.
  run_inner();
  fit.beta0 = beta[0];
  fit.beta_ses = beta[1];
  fit.beta_school_ses = beta[2];

  fit.sigma2_school = sigma2_school;
  fit.sigma2_country = sigma2_country;
  fit.school_intercepts.assign(u.data(), u.data() + n_schools);
  fit.country_intercepts.assign(v.data(), v.data() + n_countries);
  fit.se_beta0 = std::sqrt(std::max(hinv(0, 0), 0.0));
  fit.se_beta_ses = std::sqrt(std::max(hinv(1, 1), 0.0));
  fit.se_beta_school_ses = std::sqrt(std::max(hinv(2, 2), 0.0));
  fit.fitted = true;
  return fit;
}

inline double predict_probability(const MultilevelFit& fit, double ses, int school, int country) {
  if (!fit.fitted) throw std::invalid_argument("predict_probability: unfitted model");
  return inverse_logit(fit.linear_predictor(ses, school, country));
}

// Quintiles of the school posterior-mode intercepts, unit weights.
inline std::vector<int> intercept_quintiles(const MultilevelFit& fit) {
  if (!fit.fitted) throw std::invalid_argument("intercept_quintiles: unfitted model");
  const std::vector<double> unit(fit.school_intercepts.size(), 1.0);
  return assign_quintiles(fit.school_intercepts, unit);
}

// Per-school mean of a covariate over the supplied rows (all sampled students
// of the school).
inline std::vector<double> per_school_means(std::span<const double> values,
                                            std::span<const int> school_of_row,
                                            std::size_t n_schools) {
  std::vector<double> sum(n_schools, 0.0);
  std::vector<std::size_t> count(n_schools, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) continue;
    sum[school_of_row[i]] += values[i];
    count[school_of_row[i]] += 1;
  }
  for (std::size_t s = 0; s < n_schools; ++s)
    sum[s] = count[s] ? sum[s] / static_cast<double>(count[s]) : 0.0;
  return sum;
}

}  // namespace sarlab
