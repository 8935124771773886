#pragma once

// Exact Shapley attribution for tree ensembles under path-dependent
// (cover-weighted) conditioning: per-row SHAP values via the polynomial-time
// path-tracking recursion, pairwise interaction matrices via conditioned
// re-runs, a subset-enumeration brute force used as the test oracle, and the
// global/local reporting helpers built on top of the per-row attributions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sarlab/gbt.hpp"
#include "sarlab/matrix.hpp"
#include "sarlab/parallel.hpp"
#include "sarlab/rng.hpp"

namespace sarlab {

// Cover-weighted conditional expectation of the ensemble margin given the
// features in `subset` fixed at the row's values. Splits on features outside
// the subset descend both children weighted by cover.
inline double conditional_expectation(const BoostedEnsemble& ens, std::span<const double> row,
                                      std::span<const std::uint8_t> subset) {
  if (row.size() != ens.n_features || subset.size() != ens.n_features)
    throw std::invalid_argument("conditional_expectation: width mismatch");

  struct Walker {
    const Tree& tree;
    std::span<const double> row;
    std::span<const std::uint8_t> subset;

    double visit(int n) const {
      const TreeNode& nd = tree.nodes[n];
      if (nd.is_leaf()) return nd.weight;
      if (subset[nd.feature]) {
        const double v = row[nd.feature];
        const bool left = std::isnan(v) ? nd.default_left : v <= nd.threshold;
        return visit(left ? nd.left : nd.right);
      }
      const double cl = tree.nodes[nd.left].cover;
      const double cr = tree.nodes[nd.right].cover;
      const double total = cl + cr;
      if (total <= 0.0) return 0.5 * (visit(nd.left) + visit(nd.right));
      return (cl * visit(nd.left) + cr * visit(nd.right)) / total;
    }
  };

  double sum = ens.base_margin;
  for (const auto& t : ens.trees) sum += Walker{t, row, subset}.visit(0);
  return sum;
}

namespace shap_detail {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double pweight = 0.0;
};

inline void extend_path(PathElement* path, int depth, double zero_fraction,
                        double one_fraction, int feature) {
  path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) / double(depth + 1);
    path[i].pweight = zero_fraction * path[i].pweight * (depth - i) / double(depth + 1);
  }
}

inline void unwind_path(PathElement* path, int depth, int index) {
  const double one_fraction = path[index].one_fraction;
  const double zero_fraction = path[index].zero_fraction;
  double next_one_portion = path[depth].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one_fraction != 0.0) {
      const double tmp = path[i].pweight;
      path[i].pweight = next_one_portion * (depth + 1) / double((i + 1) * one_fraction);
      next_one_portion = tmp - path[i].pweight * zero_fraction * (depth - i) / double(depth + 1);
    } else {
      path[i].pweight = path[i].pweight * (depth + 1) / double(zero_fraction * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

inline double unwound_path_sum(const PathElement* path, int depth, int index) {
  const double one_fraction = path[index].one_fraction;
  const double zero_fraction = path[index].zero_fraction;
  double next_one_portion = path[depth].pweight;
  double total = 0.0;
  for (int i = depth - 1; i >= 0; --i) {
    if (one_fraction != 0.0) {
      const double tmp = next_one_portion * (depth + 1) / double((i + 1) * one_fraction);
      total += tmp;
      next_one_portion = path[i].pweight - tmp * zero_fraction * (depth - i) / double(depth + 1);
    } else if (zero_fraction != 0.0) {
      total += (path[i].pweight / zero_fraction) / ((depth - i) / double(depth + 1));
    }
  }
  return total;
}

// Per-tree recursion; `condition` fixes one feature on (+1) or off (-1).
inline void tree_shap(const Tree& tree, std::span<const double> row, double* phi, int node,
                      int unique_depth, PathElement* parent_path, double parent_zero_fraction,
                      double parent_one_fraction, int parent_feature, int condition,
                      int condition_feature, double condition_fraction) {
  if (condition_fraction == 0.0) return;
  const TreeNode& nd = tree.nodes[node];

  PathElement* path = parent_path + unique_depth + 1;
  std::copy(parent_path, parent_path + unique_depth + 1, path);
  if (condition == 0 || condition_feature != parent_feature)
    extend_path(path, unique_depth, parent_zero_fraction, parent_one_fraction, parent_feature);

  if (nd.is_leaf()) {
    for (int i = 1; i <= unique_depth; ++i) {
      const double w = unwound_path_sum(path, unique_depth, i);
      const PathElement& el = path[i];
      phi[el.feature] +=
          w * (el.one_fraction - el.zero_fraction) * nd.weight * condition_fraction;
    }
    return;
  }

  const double v = row[nd.feature];
  const bool go_left = std::isnan(v) ? nd.default_left : v <= nd.threshold;
  const int hot = go_left ? nd.left : nd.right;
  const int cold = go_left ? nd.right : nd.left;
  const double cover = tree.nodes[nd.left].cover + tree.nodes[nd.right].cover;
  const double hot_zero_fraction = cover > 0.0 ? tree.nodes[hot].cover / cover : 0.5;
  const double cold_zero_fraction = cover > 0.0 ? tree.nodes[cold].cover / cover : 0.5;
  double incoming_zero_fraction = 1.0;
  double incoming_one_fraction = 1.0;

  // If this feature is already on the path, undo that extension first.
  int path_index = 0;
  while (path_index <= unique_depth && path[path_index].feature != nd.feature) ++path_index;
  if (path_index != unique_depth + 1) {
    incoming_zero_fraction = path[path_index].zero_fraction;
    incoming_one_fraction = path[path_index].one_fraction;
    unwind_path(path, unique_depth, path_index);
    unique_depth -= 1;
  }

  double hot_condition_fraction = condition_fraction;
  double cold_condition_fraction = condition_fraction;
  if (condition > 0 && nd.feature == condition_feature) {
    cold_condition_fraction = 0.0;
    unique_depth -= 1;
  } else if (condition < 0 && nd.feature == condition_feature) {
    hot_condition_fraction *= hot_zero_fraction;
    cold_condition_fraction *= cold_zero_fraction;
    unique_depth -= 1;
  }

  tree_shap(tree, row, phi, hot, unique_depth + 1, path,
            hot_zero_fraction * incoming_zero_fraction, incoming_one_fraction, nd.feature,
            condition, condition_feature, hot_condition_fraction);
  tree_shap(tree, row, phi, cold, unique_depth + 1, path,
            cold_zero_fraction * incoming_zero_fraction, 0.0, nd.feature, condition,
            condition_feature, cold_condition_fraction);
}

inline double tree_expected_value(const Tree& tree, int node = 0) {
  const TreeNode& nd = tree.nodes[node];
  if (nd.is_leaf()) return nd.weight;
  const double cl = tree.nodes[nd.left].cover;
  const double cr = tree.nodes[nd.right].cover;
  const double total = cl + cr;
  const double el = tree_expected_value(tree, nd.left);
  const double er = tree_expected_value(tree, nd.right);
  if (total <= 0.0) return 0.5 * (el + er);
  return (cl * el + cr * er) / total;
}

inline std::vector<PathElement> path_buffer(const Tree& tree) {
  const int d = tree.max_depth() + 2;
  return std::vector<PathElement>((d + 1) * (d + 2) / 2 + 1);
}

// phi accumulation for one tree with optional conditioning.
inline void accumulate_tree_shap(const Tree& tree, std::span<const double> row, double* phi,
                                 int condition = 0, int condition_feature = -1) {
  std::vector<PathElement> buf = path_buffer(tree);
  tree_shap(tree, row, phi, 0, 0, buf.data(), 1.0, 1.0, -1, condition, condition_feature, 1.0);
}

}  // namespace shap_detail

struct ShapValues {
  double base = 0.0;             // phi_0: conditional expectation of the empty set
  std::vector<double> values;    // one attribution per feature, margin space
};

inline ShapValues shap_values(const BoostedEnsemble& ens, std::span<const double> row) {
  if (row.size() != ens.n_features) throw std::invalid_argument("shap_values: width mismatch");
  ShapValues out;
  out.values.assign(ens.n_features, 0.0);
  out.base = ens.base_margin;
  for (const auto& tree : ens.trees) {
    out.base += shap_detail::tree_expected_value(tree);
    shap_detail::accumulate_tree_shap(tree, row, out.values.data());
  }
  return out;
}

// Subset-enumeration Shapley values over the same conditional expectation.
// Cost 2^M; the production path is the tree recursion above, this is the
// independent oracle.
inline std::vector<double> shap_brute_force(const BoostedEnsemble& ens,
                                            std::span<const double> row) {
  const std::size_t m = ens.n_features;
  if (m > 15) throw std::invalid_argument("shap_brute_force: feature count exceeds 15");
  const std::size_t n_subsets = std::size_t{1} << m;

  std::vector<double> fx(n_subsets);
  std::vector<std::uint8_t> mask(m, 0);
  for (std::size_t s = 0; s < n_subsets; ++s) {
    for (std::size_t j = 0; j < m; ++j) mask[j] = (s >> j) & 1;
    fx[s] = conditional_expectation(ens, row, mask);
  }

  std::vector<double> factorial(m + 1, 1.0);
  for (std::size_t i = 1; i <= m; ++i) factorial[i] = factorial[i - 1] * double(i);

  std::vector<double> phi(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t s = 0; s < n_subsets; ++s) {
      if ((s >> j) & 1) continue;
      const int size = std::popcount(s);
      const double w = factorial[size] * factorial[m - size - 1] / factorial[m];
      phi[j] += w * (fx[s | (std::size_t{1} << j)] - fx[s]);
    }
  }
  return phi;
}

// Per-row symmetric interaction matrix: off-diagonals from conditioned SHAP
// re-runs, diagonal main effects as phi_i minus the row's interactions.
inline RowMatrix shap_interactions(const BoostedEnsemble& ens, std::span<const double> row) {
  const std::size_t m = ens.n_features;
  if (row.size() != m) throw std::invalid_argument("shap_interactions: width mismatch");
  RowMatrix tensor(m, m);

  const ShapValues phi = shap_values(ens, row);

  std::vector<double> on(m), off(m);
  RowMatrix half(m, m);  // half.at(i, j) = (phi_i | j on  -  phi_i | j off) / 2
  for (std::size_t j = 0; j < m; ++j) {
    std::fill(on.begin(), on.end(), 0.0);
    std::fill(off.begin(), off.end(), 0.0);
    for (const auto& tree : ens.trees) {
      shap_detail::accumulate_tree_shap(tree, row, on.data(), +1, static_cast<int>(j));
      shap_detail::accumulate_tree_shap(tree, row, off.data(), -1, static_cast<int>(j));
    }
    for (std::size_t i = 0; i < m; ++i)
      if (i != j) half.at(i, j) = 0.5 * (on[i] - off[i]);
  }

  for (std::size_t i = 0; i < m; ++i) {
    double inter_sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const double v = 0.5 * (half.at(i, j) + half.at(j, i));  // exact symmetry
      tensor.at(i, j) = v;
      inter_sum += v;
    }
    tensor.at(i, i) = phi.values[i] - inter_sum;
  }
  return tensor;
}

// ---------------------------------------------------------------------------
// Matrix-level attribution and reporting

struct ShapMatrix {
  double base_value = 0.0;
  RowMatrix values;  // rows x features, margin space
  std::vector<std::string> row_keys;
  std::vector<std::string> feature_names;
};

inline ShapMatrix compute_shap_matrix(const BoostedEnsemble& ens, const RowMatrix& rows,
                                      std::vector<std::string> row_keys,
                                      std::vector<std::string> feature_names,
                                      int threads = 1) {
  ShapMatrix out;
  out.values = RowMatrix(rows.rows, rows.cols);
  out.row_keys = std::move(row_keys);
  out.feature_names = std::move(feature_names);
  if (rows.rows == 0) return out;
  const ShapValues first = shap_values(ens, rows.row(0));
  out.base_value = first.base;
  for (std::size_t j = 0; j < rows.cols; ++j) out.values.at(0, j) = first.values[j];
  parallel_for(1, rows.rows, threads, [&](std::size_t r) {
    const ShapValues sv = shap_values(ens, rows.row(r));
    for (std::size_t j = 0; j < rows.cols; ++j) out.values.at(r, j) = sv.values[j];
  });
  return out;
}

struct ImportanceRanking {
  std::vector<std::size_t> order;       // feature indices, descending mean |SHAP|
  std::vector<double> mean_abs_shap;    // aligned with `order`
  std::vector<std::string> names;       // aligned with `order`
};

inline ImportanceRanking global_importance(const ShapMatrix& shap, std::size_t top_n = 0) {
  const std::size_t n = shap.values.rows, m = shap.values.cols;
  if (n == 0) throw std::invalid_argument("global_importance: empty matrix");
  std::vector<double> mean_abs(m, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) mean_abs[j] += std::fabs(shap.values.at(r, j));
  for (double& v : mean_abs) v /= double(n);

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mean_abs[a] > mean_abs[b]; });
  if (top_n > 0 && top_n < m) order.resize(top_n);

  ImportanceRanking out;
  out.order = order;
  for (std::size_t j : order) {
    out.mean_abs_shap.push_back(mean_abs[j]);
    out.names.push_back(j < shap.feature_names.size() ? shap.feature_names[j]
                                                      : "f" + std::to_string(j));
  }
  return out;
}

struct BeeswarmPoint {
  std::size_t row = 0;
  std::size_t feature = 0;
  double shap = 0.0;
  double raw = 0.0;      // NaN when missing
  double color = 0.5;    // min-max normalized raw value; 0.5 for zero range
  bool missing = false;
  double jitter = 0.0;   // deterministic render offset in [0, 1)
};

inline std::vector<BeeswarmPoint> beeswarm_export(const ShapMatrix& shap, const RowMatrix& raw,
                                                  std::span<const std::size_t> features) {
  if (raw.rows != shap.values.rows || raw.cols != shap.values.cols)
    throw std::invalid_argument("beeswarm_export: table/matrix shape mismatch");
  for (std::size_t j : features)
    if (j >= raw.cols) throw std::invalid_argument("beeswarm_export: unknown feature index");

  std::vector<BeeswarmPoint> out;
  out.reserve(features.size() * raw.rows);
  for (std::size_t j : features) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < raw.rows; ++r) {
      const double v = raw.at(r, j);
      if (std::isnan(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double range = hi - lo;
    for (std::size_t r = 0; r < raw.rows; ++r) {
      BeeswarmPoint p;
      p.row = r;
      p.feature = j;
      p.shap = shap.values.at(r, j);
      p.raw = raw.at(r, j);
      p.missing = std::isnan(p.raw);
      if (p.missing || !(range > 0.0))
        p.color = 0.5;
      else
        p.color = (p.raw - lo) / range;
      p.jitter = double(splitmix64(derive_seed(r, j)) >> 11) * 0x1.0p-53;
      out.push_back(p);
    }
  }
  return out;
}

struct ProfileEntry {
  std::size_t feature = 0;
  std::string name;
  double shap = 0.0;
  double raw = 0.0;
  bool missing = false;
};

struct LocalProfile {
  std::size_t row = 0;
  std::string row_key;
  double total = 0.0;  // sum of the row's SHAP values
  std::vector<ProfileEntry> top;  // by |SHAP|, descending
};

struct LocalProfiles {
  LocalProfile max_profile;
  LocalProfile min_profile;
};

inline LocalProfiles local_profiles(const ShapMatrix& shap, const RowMatrix& raw,
                                    std::size_t top_k) {
  const std::size_t n = shap.values.rows, m = shap.values.cols;
  if (n == 0) throw std::invalid_argument("local_profiles: empty matrix");

  std::vector<double> totals(n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) totals[r] += shap.values.at(r, j);
  std::size_t max_row = 0, min_row = 0;
  for (std::size_t r = 1; r < n; ++r) {
    if (totals[r] > totals[max_row]) max_row = r;
    if (totals[r] < totals[min_row]) min_row = r;
  }

  auto build = [&](std::size_t r) {
    LocalProfile p;
    p.row = r;
    p.row_key = r < shap.row_keys.size() ? shap.row_keys[r] : std::to_string(r);
    p.total = totals[r];
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::fabs(shap.values.at(r, a)) > std::fabs(shap.values.at(r, b));
    });
    const std::size_t k = std::min(top_k, m);
    for (std::size_t i = 0; i < k; ++i) {
      ProfileEntry e;
      e.feature = order[i];
      e.name = order[i] < shap.feature_names.size() ? shap.feature_names[order[i]]
                                                    : "f" + std::to_string(order[i]);
      e.shap = shap.values.at(r, order[i]);
      e.raw = raw.at(r, order[i]);
      e.missing = std::isnan(e.raw);
      p.top.push_back(e);
    }
    return p;
  };

  return {build(max_row), build(min_row)};
}

}  // namespace sarlab
