#pragma once

// Second-order gradient boosted trees for binary classification with an
// L2-regularized objective: exact greedy split search over sorted feature
// values, learned default directions for missing values, row subsampling,
// and cross-validated grid search against the penalized-logit baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "sarlab/dataset.hpp"
#include "sarlab/linear_baseline.hpp"
#include "sarlab/matrix.hpp"
#include "sarlab/metrics.hpp"
#include "sarlab/rng.hpp"
#include "sarlab/stats.hpp"

namespace sarlab {

struct GbtParams {
  int n_trees = 100;
  double learning_rate = 0.1;
  int max_depth = 3;
  double subsample = 1.0;          // row sampling ratio per tree, in (0, 1]
  double lambda = 1.0;             // leaf-weight L2 penalty
  double gamma = 0.0;              // per-leaf complexity penalty
  double min_child_hessian = 1.0;
  std::uint64_t seed = 0;
};

// Structure gain of a candidate split under the regularized objective.
inline double split_gain(double g_left, double h_left, double g_right, double h_right,
                         double lambda, double gamma) {
  const double g_parent = g_left + g_right;
  const double h_parent = h_left + h_right;
  return 0.5 * (g_left * g_left / (h_left + lambda) + g_right * g_right / (h_right + lambda) -
                g_parent * g_parent / (h_parent + lambda)) -
         gamma;
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // observed value; rows with x <= threshold go left
  bool default_left = true;
  int left = -1;
  int right = -1;
  double cover = 0.0;   // sum of hessians routed through this node
  double weight = 0.0;  // leaf value, stored post-shrinkage

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  int leaf_index(std::span<const double> row) const {
    int n = 0;
    while (!nodes[n].is_leaf()) {
      const double v = row[nodes[n].feature];
      const bool left = std::isnan(v) ? nodes[n].default_left : v <= nodes[n].threshold;
      n = left ? nodes[n].left : nodes[n].right;
    }
    return n;
  }

  double value(std::span<const double> row) const { return nodes[leaf_index(row)].weight; }

  int max_depth() const {
    int best = 0;
    std::vector<std::pair<int, int>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [n, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (!nodes[n].is_leaf()) {
        stack.push_back({nodes[n].left, d + 1});
        stack.push_back({nodes[n].right, d + 1});
      }
    }
    return best;
  }
};

struct BoostedEnsemble {
  double base_margin = 0.0;
  std::vector<Tree> trees;
  GbtParams params;
  std::size_t n_features = 0;
  std::vector<double> training_loss;  // full-sample mean logloss after each round

  double margin(std::span<const double> row) const {
    if (row.size() != n_features)
      throw std::invalid_argument("predict: row width mismatch");
    double m = base_margin;
    for (const auto& t : trees) m += t.value(row);
    return m;
  }

  double predict_probability(std::span<const double> row) const {
    return inverse_logit(margin(row));
  }
};

namespace gbt_detail {

struct NodeStats {
  double g = 0.0;
  double h = 0.0;
};

struct BestSplit {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
  bool found = false;
};

class TreeBuilder {
 public:
  TreeBuilder(const RowMatrix& x, std::span<const double> grad, std::span<const double> hess,
              const GbtParams& params)
      : x_(x), grad_(grad), hess_(hess), p_(params) {}

  Tree build(std::vector<std::size_t> rows) {
    tree_.nodes.clear();
    grow(std::move(rows), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::size_t> rows, int depth) {
    NodeStats total;
    for (std::size_t r : rows) {
      total.g += grad_[r];
      total.h += hess_[r];
    }
    const int node_id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});
    tree_.nodes[node_id].cover = total.h;

    BestSplit best;
    if (depth < p_.max_depth) best = find_best_split(rows, total);
    if (!best.found) {
      tree_.nodes[node_id].weight = -total.g / (total.h + p_.lambda) * p_.learning_rate;
      return node_id;
    }

    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : rows) {
      const double v = x_.at(r, best.feature);
      const bool left = std::isnan(v) ? best.default_left : v <= best.threshold;
      (left ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();

    tree_.nodes[node_id].feature = best.feature;
    tree_.nodes[node_id].threshold = best.threshold;
    tree_.nodes[node_id].default_left = best.default_left;
    const int left_id = grow(std::move(left_rows), depth + 1);
    tree_.nodes[node_id].left = left_id;
    const int right_id = grow(std::move(right_rows), depth + 1);
    tree_.nodes[node_id].right = right_id;
    return node_id;
  }

  BestSplit find_best_split(const std::vector<std::size_t>& rows, const NodeStats& total) {
    BestSplit best;
    std::vector<std::pair<double, std::size_t>> present;
    present.reserve(rows.size());
    for (std::size_t j = 0; j < x_.cols; ++j) {
      present.clear();
      NodeStats miss;
      for (std::size_t r : rows) {
        const double v = x_.at(r, j);
        if (std::isnan(v)) {
          miss.g += grad_[r];
          miss.h += hess_[r];
        } else {
          present.emplace_back(v, r);
        }
      }
      if (present.size() < 2) continue;
      std::sort(present.begin(), present.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });

      NodeStats prefix;
      for (std::size_t i = 0; i + 1 < present.size(); ++i) {
        prefix.g += grad_[present[i].second];
        prefix.h += hess_[present[i].second];
        if (present[i].first == present[i + 1].first) continue;  // split between values only

        // Missing rows tried on both sides; the better one becomes the
        // stored default direction (left wins ties).
        for (int variant = 0; variant < 2; ++variant) {
          const bool missing_left = variant == 0;
          const double gl = prefix.g + (missing_left ? miss.g : 0.0);
          const double hl = prefix.h + (missing_left ? miss.h : 0.0);
          const double gr = total.g - gl;
          const double hr = total.h - hl;
          if (hl < p_.min_child_hessian || hr < p_.min_child_hessian) continue;
          const double gain = split_gain(gl, hl, gr, hr, p_.lambda, p_.gamma);
          if (gain > 0.0 && (!best.found || gain > best.gain)) {
            best.found = true;
            best.gain = gain;
            best.feature = static_cast<int>(j);
            best.threshold = present[i].first;
            best.default_left = missing_left;
          }
        }
      }
    }
    return best;
  }

  const RowMatrix& x_;
  std::span<const double> grad_;
  std::span<const double> hess_;
  const GbtParams& p_;
  Tree tree_;
};

}  // namespace gbt_detail

inline BoostedEnsemble fit_gbt(const RowMatrix& x, std::span<const int> labels,
                               const GbtParams& params) {
  const std::size_t n = x.rows;
  if (labels.size() != n) throw std::invalid_argument("fit_gbt: size mismatch");
  if (n == 0) throw std::invalid_argument("fit_gbt: empty input");
  if (params.subsample <= 0.0 || params.subsample > 1.0)
    throw std::invalid_argument("fit_gbt: subsample must be in (0, 1]");

  BoostedEnsemble ens;
  ens.params = params;
  ens.n_features = x.cols;

  double rate = 0.0;
  for (int y : labels) rate += (y != 0);
  rate /= static_cast<double>(n);
  // Single-class inputs are allowed with a clamped base rate; boosting then
  // pushes margins further toward the observed class via single-leaf trees.
  const double eps = 0.5 / static_cast<double>(n + 1);
  ens.base_margin = logit(std::clamp(rate, eps, 1.0 - eps));

  std::vector<double> margins(n, ens.base_margin);
  std::vector<double> grad(n), hess(n);
  const std::size_t sample_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(params.subsample * static_cast<double>(n))));

  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = inverse_logit(margins[i]);
      grad[i] = p - (labels[i] != 0 ? 1.0 : 0.0);
      hess[i] = std::max(p * (1.0 - p), 1e-16);
    }
    std::vector<std::size_t> rows;
    if (sample_size >= n) {
      rows.resize(n);
      for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    } else {
      Rng round_rng(derive_seed(params.seed, static_cast<std::uint64_t>(t)));
      rows = round_rng.sample_without_replacement(n, sample_size);
      std::sort(rows.begin(), rows.end());
    }
    gbt_detail::TreeBuilder builder(x, grad, hess, params);
    Tree tree = builder.build(std::move(rows));

    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      margins[i] += tree.value(x.row(i));
      const double m = margins[i];
      const double softplus = m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
      loss += softplus - (labels[i] != 0 ? m : 0.0);
    }
    ens.training_loss.push_back(loss / static_cast<double>(n));
    ens.trees.push_back(std::move(tree));
  }
  return ens;
}

enum class PredictOutput { kMargin, kProbability };

inline double predict(const BoostedEnsemble& ens, std::span<const double> row,
                      PredictOutput output = PredictOutput::kProbability) {
  const double m = ens.margin(row);
  return output == PredictOutput::kMargin ? m : inverse_logit(m);
}

// ---------------------------------------------------------------------------
// JSON model dump (the contract consumed by the attribution module)

inline nlohmann::json gbt_params_to_json(const GbtParams& p) {
  return {{"n_trees", p.n_trees},
          {"learning_rate", p.learning_rate},
          {"max_depth", p.max_depth},
          {"subsample", p.subsample},
          {"lambda", p.lambda},
          {"gamma", p.gamma},
          {"min_child_hessian", p.min_child_hessian},
          {"seed", p.seed}};
}

inline GbtParams gbt_params_from_json(const nlohmann::json& j) {
  GbtParams p;
  p.n_trees = j.at("n_trees").get<int>();
  p.learning_rate = j.at("learning_rate").get<double>();
  p.max_depth = j.at("max_depth").get<int>();
  p.subsample = j.at("subsample").get<double>();
  p.lambda = j.at("lambda").get<double>();
  p.gamma = j.at("gamma").get<double>();
  p.min_child_hessian = j.at("min_child_hessian").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

inline nlohmann::json ensemble_to_json(const BoostedEnsemble& ens) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : ens.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& nd : t.nodes) {
      nodes.push_back({{"feature", nd.feature},
                       {"threshold", nd.threshold},
                       {"default", nd.default_left ? "left" : "right"},
                       {"left", nd.left},
                       {"right", nd.right},
                       {"cover", nd.cover},
                       {"weight", nd.weight}});
    }
    trees.push_back({{"nodes", std::move(nodes)}});
  }
  return {{"base_margin", ens.base_margin},
          {"n_features", ens.n_features},
          {"params", gbt_params_to_json(ens.params)},
          {"trees", std::move(trees)}};
}

inline BoostedEnsemble ensemble_from_json(const nlohmann::json& j) {
  BoostedEnsemble ens;
  ens.base_margin = j.at("base_margin").get<double>();
  ens.n_features = j.at("n_features").get<std::size_t>();
  ens.params = gbt_params_from_json(j.at("params"));
  for (const auto& tj : j.at("trees")) {
    Tree t;
    for (const auto& nj : tj.at("nodes")) {
      TreeNode nd;
      nd.feature = nj.at("feature").get<int>();
      nd.threshold = nj.at("threshold").get<double>();
      nd.default_left = nj.at("default").get<std::string>() == "left";
      nd.left = nj.at("left").get<int>();
      nd.right = nj.at("right").get<int>();
      nd.cover = nj.at("cover").get<double>();
      nd.weight = nj.at("weight").get<double>();
      t.nodes.push_back(nd);
    }
    ens.trees.push_back(std::move(t));
  }
  return ens;
}

// ---------------------------------------------------------------------------
// Cross-validated grid search

struct LinearGridParams {
  PenaltyKind penalty = PenaltyKind::kL2;
  double c = 1.0;
};

struct GridPoint {
  std::string name;
  std::variant<GbtParams, LinearGridParams> params;
};

struct GridPointResult {
  std::string name;
  double mean_auroc = 0.0;
  double mean_auprc = 0.0;
  std::vector<double> fold_auroc;
  std::vector<double> fold_auprc;
};

struct GridSearchResult {
  std::vector<GridPointResult> points;  // declaration order
  std::size_t winner = 0;
};

namespace gbt_detail {

inline RowMatrix gather_rows(const RowMatrix& x, const std::vector<std::size_t>& rows) {
  RowMatrix out(rows.size(), x.cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < x.cols; ++j) out.at(i, j) = x.at(rows[i], j);
  return out;
}

}  // namespace gbt_detail

inline GridSearchResult grid_search(const RowMatrix& x, std::span<const int> labels,
                                    const std::vector<GridPoint>& grid,
                                    const FoldAssignment& folds) {
  if (grid.empty()) throw std::invalid_argument("grid_search: empty grid");
  GridSearchResult result;

  for (const auto& point : grid) {
    GridPointResult pr;
    pr.name = point.name;
    for (int f = 0; f < folds.k; ++f) {
      const auto& tr = folds.train[f];
      const auto& va = folds.validate[f];
      RowMatrix xtr = gbt_detail::gather_rows(x, tr);
      std::vector<int> ytr(tr.size());
      for (std::size_t i = 0; i < tr.size(); ++i) ytr[i] = labels[tr[i]];
      std::vector<int> yva(va.size());
      std::vector<double> scores(va.size());
      for (std::size_t i = 0; i < va.size(); ++i) yva[i] = labels[va[i]];

      if (std::holds_alternative<GbtParams>(point.params)) {
        GbtParams p = std::get<GbtParams>(point.params);
        p.seed = derive_seed(p.seed, static_cast<std::uint64_t>(f));
        const BoostedEnsemble model = fit_gbt(xtr, ytr, p);
        for (std::size_t i = 0; i < va.size(); ++i)
          scores[i] = model.predict_probability(x.row(va[i]));
      } else {
        const auto& lp = std::get<LinearGridParams>(point.params);
        const LinearModel model = fit_penalized_logit(xtr, ytr, lp.penalty, lp.c);
        for (std::size_t i = 0; i < va.size(); ++i)
          scores[i] = predict_linear(model, x.row(va[i]));
      }
      pr.fold_auroc.push_back(auroc(yva, scores));
      pr.fold_auprc.push_back(auprc(yva, scores));
    }
    for (double v : pr.fold_auroc) pr.mean_auroc += v;
    for (double v : pr.fold_auprc) pr.mean_auprc += v;
    pr.mean_auroc /= static_cast<double>(folds.k);
    pr.mean_auprc /= static_cast<double>(folds.k);
    result.points.push_back(std::move(pr));
  }

  for (std::size_t i = 1; i < result.points.size(); ++i) {
    const auto& cand = result.points[i];
    const auto& best = result.points[result.winner];
    if (cand.mean_auroc > best.mean_auroc ||
        (cand.mean_auroc == best.mean_auroc && cand.mean_auprc > best.mean_auprc))
      result.winner = i;
  }
  return result;
}

}  // namespace sarlab
