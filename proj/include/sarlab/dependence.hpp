#pragma once

// Partial-dependence curves in probability space, the relative-probability
// transform (partial function over the mean prediction), and the odds-ratio
// presentation against a configurable reference.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sarlab/gbt.hpp"
#include "sarlab/matrix.hpp"
#include "sarlab/parallel.hpp"

namespace sarlab {

struct PdpCurve {
  std::string feature;
  std::size_t feature_index = 0;
  std::vector<double> grid;  // strictly increasing
  std::vector<double> f_s;   // mean predicted probability with the feature pinned
  std::vector<double> rp;    // f_s / baseline
  std::vector<double> odds_ratio;            // odds(f_s) / odds(reference)
  std::vector<std::uint8_t> odds_unbounded;  // probability hit 0 or 1
  double baseline = 0.0;  // mean predicted probability on unmodified rows
  double reference_probability = 0.0;        // odds-ratio reference
};

struct GridSpec {
  std::vector<double> values;  // explicit grid; empty means automatic
  std::size_t max_auto_points = 25;
};

namespace dependence_detail {

inline std::vector<double> automatic_grid(const RowMatrix& x, std::size_t feature,
                                          std::size_t max_points) {
  std::vector<double> vals;
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double v = x.at(r, feature);
    if (!std::isnan(v)) vals.push_back(v);
  }
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  if (vals.size() <= max_points) return vals;

  // Quantile points of the observed distribution, deduplicated, so skewed
  // covariates are not swept into empty regions.
  std::vector<double> all;
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double v = x.at(r, feature);
    if (!std::isnan(v)) all.push_back(v);
  }
  std::sort(all.begin(), all.end());
  std::vector<double> grid;
  for (std::size_t k = 0; k < max_points; ++k) {
    const double q = (static_cast<double>(k) + 0.5) / static_cast<double>(max_points);
    const std::size_t idx = std::min(all.size() - 1,
                                     static_cast<std::size_t>(q * static_cast<double>(all.size())));
    grid.push_back(all[idx]);
  }
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

inline double odds(double p) { return p / (1.0 - p); }

}  // namespace dependence_detail

// Fills the odds-ratio column of a curve against a reference probability
// taken either from the baseline (default) or from the value at a grid point.
inline void odds_ratio_transform(PdpCurve& curve, const double* reference_grid_value = nullptr) {
  double p_ref = curve.baseline;
  if (reference_grid_value) {
    const auto it = std::find(curve.grid.begin(), curve.grid.end(), *reference_grid_value);
    if (it == curve.grid.end())
      throw std::invalid_argument("odds_ratio_transform: reference not a grid value");
    p_ref = curve.f_s[static_cast<std::size_t>(it - curve.grid.begin())];
  }
  curve.reference_probability = p_ref;
  curve.odds_ratio.assign(curve.grid.size(), std::numeric_limits<double>::quiet_NaN());
  curve.odds_unbounded.assign(curve.grid.size(), 0);
  if (!(p_ref > 0.0) || !(p_ref < 1.0))
    throw std::invalid_argument("odds_ratio_transform: reference probability at 0 or 1");
  for (std::size_t i = 0; i < curve.grid.size(); ++i) {
    const double p = curve.f_s[i];
    if (!(p > 0.0) || !(p < 1.0)) {
      curve.odds_unbounded[i] = 1;  // reported as unbounded, not an error
      continue;
    }
    curve.odds_ratio[i] =
        dependence_detail::odds(p) / dependence_detail::odds(p_ref);
  }
}

inline PdpCurve partial_dependence(const BoostedEnsemble& ens, const RowMatrix& x,
                                   std::size_t feature, const std::string& feature_name = {},
                                   const GridSpec& spec = {}, int threads = 1) {
  if (feature >= x.cols) throw std::invalid_argument("partial_dependence: unknown feature");
  if (x.rows == 0) throw std::invalid_argument("partial_dependence: empty table");

  PdpCurve curve;
  curve.feature = feature_name.empty() ? "f" + std::to_string(feature) : feature_name;
  curve.feature_index = feature;
  curve.grid = spec.values.empty()
                   ? dependence_detail::automatic_grid(x, feature, spec.max_auto_points)
                   : spec.values;
  if (curve.grid.empty()) throw std::invalid_argument("partial_dependence: empty grid");
  for (std::size_t i = 1; i < curve.grid.size(); ++i)
    if (!(curve.grid[i] > curve.grid[i - 1]))
      throw std::invalid_argument("partial_dependence: grid must be strictly increasing");

  double baseline = 0.0;
  for (std::size_t r = 0; r < x.rows; ++r) baseline += ens.predict_probability(x.row(r));
  curve.baseline = baseline / static_cast<double>(x.rows);

  curve.f_s.assign(curve.grid.size(), 0.0);
  parallel_for(0, curve.grid.size(), threads, [&](std::size_t g) {
    std::vector<double> row(x.cols);
    double acc = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) {
      const auto src = x.row(r);
      std::copy(src.begin(), src.end(), row.begin());
      row[feature] = curve.grid[g];
      acc += ens.predict_probability(row);
    }
    curve.f_s[g] = acc / static_cast<double>(x.rows);
  });

  curve.rp.resize(curve.grid.size());
  for (std::size_t g = 0; g < curve.grid.size(); ++g)
    curve.rp[g] = curve.f_s[g] / curve.baseline;
  odds_ratio_transform(curve);
  return curve;
}

}  // namespace sarlab
