#pragma once

// Penalized logistic regression (L1 via accelerated proximal gradient,
// L2 via damped Newton) on internally standardized features. The intercept
// is never penalized. Objective: sum of logistic losses + (1/C) * penalty(w),
// with C the inverse regularization strength; internally optimized on the
// mean-loss scale, so the penalty weight is 1/(C*n).

#include <Eigen/Dense>
#include <cmath>
#include "json.hpp"
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sarlab/matrix.hpp"
#include "sarlab/stats.hpp"

namespace sarlab {

enum class PenaltyKind { kL1, kL2 };

struct LinearModel {
  std::vector<double> weights;  // in standardized space
  double intercept = 0.0;
  PenaltyKind penalty = PenaltyKind::kL2;
  double c = 1.0;
  std::vector<double> feature_mean;   // standardization record
  std::vector<double> feature_scale;  // 0 marks a dropped constant feature
  bool converged = false;
  int iterations = 0;
  double final_gradient_norm = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> objective_trace;  // accepted iterates, non-increasing
  std::vector<std::string> warnings;
};

namespace detail {

// Standardized design with mean imputation of missing cells (a missing cell
// standardizes to exactly 0).
inline Eigen::MatrixXd standardized_design(const RowMatrix& x, std::vector<double>& mean,
                                           std::vector<double>& scale,
                                           std::vector<std::string>& warnings) {
  const std::size_t n = x.rows, m = x.cols;
  mean.assign(m, 0.0);
  scale.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x.at(i, j);
      if (std::isnan(v)) continue;
      s += v;
      ++cnt;
    }
    mean[j] = cnt ? s / static_cast<double>(cnt) : 0.0;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x.at(i, j);
      if (std::isnan(v)) continue;
      ss += (v - mean[j]) * (v - mean[j]);
    }
    const double var = cnt > 1 ? ss / static_cast<double>(cnt) : 0.0;
    if (var > 0.0) {
      scale[j] = std::sqrt(var);
    } else {
      scale[j] = 0.0;
      warnings.push_back("constant feature dropped: column " + std::to_string(j));
    }
  }
  Eigen::MatrixXd z(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double v = x.at(i, j);
      z(i, j) = (std::isnan(v) || scale[j] == 0.0) ? 0.0 : (v - mean[j]) / scale[j];
    }
  return z;
}

inline double mean_logloss(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double e = eta[i];
    // log(1 + exp(e)) - y*e, computed stably
    const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    s += softplus - y[i] * e;
  }
  return s / static_cast<double>(eta.size());
}

}  // namespace detail

inline LinearModel fit_penalized_logit(const RowMatrix& x, std::span<const int> labels,
                                       PenaltyKind penalty, double c,
                                       int max_iterations = 20000) {
  if (labels.size() != x.rows) throw std::invalid_argument("fit_penalized_logit: size mismatch");
  if (c <= 0.0) throw std::invalid_argument("fit_penalized_logit: C must be positive");
  bool pos = false, neg = false;
  for (int v : labels) (v != 0 ? pos : neg) = true;
  if (!pos || !neg) throw std::invalid_argument("fit_penalized_logit: both classes required");

  LinearModel model;
  model.penalty = penalty;
  model.c = c;
  const std::size_t n = x.rows, m = x.cols;
  const Eigen::MatrixXd z =
      detail::standardized_design(x, model.feature_mean, model.feature_scale, model.warnings);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = labels[i] != 0 ? 1.0 : 0.0;

  const double lam = 1.0 / (c * static_cast<double>(n));
  const double tol = 1e-8;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
  double b = logit(std::clamp(y.mean(), 1e-9, 1.0 - 1e-9));

  auto eta_of = [&](const Eigen::VectorXd& wv, double bv) {
    return (z * wv).array() + bv;
  };
  auto grad_smooth = [&](const Eigen::VectorXd& wv, double bv, Eigen::VectorXd& gw,
                         double& gb) {
    const Eigen::VectorXd eta = eta_of(wv, bv);
    Eigen::VectorXd p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = inverse_logit(eta[i]);
    const Eigen::VectorXd resid = (p - y) / static_cast<double>(n);
    gw = z.transpose() * resid;
    gb = resid.sum();
  };

  if (penalty == PenaltyKind::kL2) {
    // Damped Newton on (w, b); ridge term (1/C) * 0.5 * ||w||^2.
    for (int it = 0; it < 200; ++it) {
      const Eigen::VectorXd eta = eta_of(w, b);
      Eigen::VectorXd p(n), s(n);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = inverse_logit(eta[i]);
        s[i] = std::max(p[i] * (1.0 - p[i]), 1e-12);
      }
      Eigen::VectorXd gw = z.transpose() * ((p - y) / double(n)) + lam * w;
      const double gb = (p - y).sum() / double(n);
      const double gnorm = std::max(gw.cwiseAbs().maxCoeff(), std::fabs(gb));
      model.final_gradient_norm = gnorm;
      model.iterations = it;
      if (gnorm < tol) {
        model.converged = true;
        break;
      }
      Eigen::MatrixXd h(m + 1, m + 1);
      const Eigen::MatrixXd zs = z.array().colwise() * (s.array() / double(n));
      h.topLeftCorner(m, m) = z.transpose() * zs;
      h.topLeftCorner(m, m).diagonal().array() += lam;
      h.topRightCorner(m, 1) = zs.colwise().sum().transpose();
      h.bottomLeftCorner(1, m) = zs.colwise().sum();
      h(m, m) = s.sum() / double(n);
      Eigen::VectorXd g(m + 1);
      g.head(m) = gw;
      g[m] = gb;
      const Eigen::VectorXd step = h.ldlt().solve(g);

      const double obj0 = detail::mean_logloss(eta, y) + 0.5 * lam * w.squaredNorm();
      if (model.objective_trace.empty()) model.objective_trace.push_back(obj0);
      double alpha = 1.0;
      for (int ls = 0; ls < 40; ++ls) {
        const Eigen::VectorXd wn = w - alpha * step.head(m);
        const double bn = b - alpha * step[m];
        const double obj = detail::mean_logloss(eta_of(wn, bn), y) + 0.5 * lam * wn.squaredNorm();
        if (obj <= obj0 + 1e-14) {
          w = wn;
          b = bn;
          model.objective_trace.push_back(obj);
          break;
        }
        alpha *= 0.5;
      }
    }
    if (!model.converged)
      model.warnings.push_back("L2 logit did not reach gradient tolerance (possible separation)");
  } else {
    // FISTA with adaptive restart; prox = soft threshold at step/C.
    double lip = 0.25 * (z.squaredNorm() / double(n)) + 0.25;  // crude Lipschitz bound
    Eigen::VectorXd v = w;
    double bv = b;
    double theta = 1.0;
    Eigen::VectorXd gw(m);
    double gb = 0.0;
    double prev_obj = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iterations; ++it) {
      grad_smooth(v, bv, gw, gb);
      const double step = 1.0 / lip;
      Eigen::VectorXd wn(m);
      for (std::size_t j = 0; j < m; ++j) {
        const double u = v[j] - step * gw[j];
        const double thr = step * lam;
        wn[j] = u > thr ? u - thr : (u < -thr ? u + thr : 0.0);
        if (model.feature_scale[j] == 0.0) wn[j] = 0.0;
      }
      const double bn = bv - step * gb;

      const double obj =
          detail::mean_logloss(eta_of(wn, bn), y) + lam * wn.template lpNorm<1>();
      if (obj > prev_obj) {  // restart momentum
        theta = 1.0;
        v = w;
        bv = b;
        prev_obj = std::numeric_limits<double>::infinity();
        continue;
      }
      prev_obj = obj;
      model.objective_trace.push_back(obj);
      const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
      const double mom = (theta - 1.0) / theta_next;
      v = wn + mom * (wn - w);
      bv = bn + mom * (bn - b);
      w = wn;
      b = bn;
      theta = theta_next;
      model.iterations = it;

      // Subgradient box condition |g_j| <= 1/(C n) at zeros.
      grad_smooth(w, b, gw, gb);
      double viol = std::fabs(gb);
      for (std::size_t j = 0; j < m; ++j) {
        if (model.feature_scale[j] == 0.0) continue;
        if (w[j] != 0.0)
          viol = std::max(viol, std::fabs(gw[j] + lam * (w[j] > 0 ? 1.0 : -1.0)));
        else
          viol = std::max(viol, std::max(0.0, std::fabs(gw[j]) - lam));
      }
      model.final_gradient_norm = viol;
      if (viol < tol) {
        model.converged = true;
        break;
      }
    }
    if (!model.converged)
      model.warnings.push_back("L1 logit hit the iteration cap (possible separation)");
  }

  model.weights.assign(w.data(), w.data() + m);
  model.intercept = b;
  return model;
}

inline nlohmann::json linear_model_to_json(const LinearModel& model) {
  return {{"weights", model.weights},
          {"intercept", model.intercept},
          {"penalty", model.penalty == PenaltyKind::kL1 ? "l1" : "l2"},
          {"c", model.c},
          {"feature_mean", model.feature_mean},
          {"feature_scale", model.feature_scale},
          {"converged", model.converged},
          {"iterations", model.iterations},
          {"warnings", model.warnings}};
}

inline LinearModel linear_model_from_json(const nlohmann::json& j) {
  LinearModel m;
  m.weights = j.at("weights").get<std::vector<double>>();
  m.intercept = j.at("intercept").get<double>();
  m.penalty = j.at("penalty").get<std::string>() == "l1" ? PenaltyKind::kL1 : PenaltyKind::kL2;
  m.c = j.at("c").get<double>();
  m.feature_mean = j.at("feature_mean").get<std::vector<double>>();
  m.feature_scale = j.at("feature_scale").get<std::vector<double>>();
  m.converged = j.value("converged", true);
  m.iterations = j.value("iterations", 0);
  return m;
}

inline double linear_margin(const LinearModel& model, std::span<const double> row) {
  if (row.size() != model.weights.size())
    throw std::invalid_argument("predict_linear: row width mismatch");
  double eta = model.intercept;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (model.feature_scale[j] == 0.0) continue;
    const double v = row[j];
    if (std::isnan(v)) continue;  // mean-imputed: standardized value 0
    eta += model.weights[j] * (v - model.feature_mean[j]) / model.feature_scale[j];
  }
  return eta;
}

inline double predict_linear(const LinearModel& model, std::span<const double> row) {
  return inverse_logit(linear_margin(model, row));
}

}  // namespace sarlab
