#pragma once

// Grouped tabular survey data: typed schema, CSV ingestion with validation,
// weighted quintile assignment, stratified undersampled cross-validation
// folds, Welch group summaries, and a hierarchical synthetic generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sarlab/csv.hpp"
#include "sarlab/rng.hpp"
#include "sarlab/stats.hpp"

namespace sarlab {

enum class FeatureKind { kContinuous, kOrdinal, kBinary, kCategorical };

inline std::string feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::kContinuous: return "continuous";
    case FeatureKind::kOrdinal: return "ordinal";
    case FeatureKind::kBinary: return "binary";
    case FeatureKind::kCategorical: return "categorical";
  }
  return "?";
}

inline FeatureKind feature_kind_from_name(const std::string& s) {
  if (s == "continuous") return FeatureKind::kContinuous;
  if (s == "ordinal" || s == "ordinal-integer") return FeatureKind::kOrdinal;
  if (s == "binary") return FeatureKind::kBinary;
  if (s == "categorical") return FeatureKind::kCategorical;
  throw std::invalid_argument("unknown feature kind: " + s);
}

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kContinuous;
  // Range for ordinal (integer codes) and optionally continuous features.
  std::optional<double> min_value;
  std::optional<double> max_value;
  std::vector<double> categories;  // categorical: allowed codes
  bool missing_allowed = true;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void validate_schema(const std::vector<FeatureSpec>& schema) {
  std::map<std::string, int> seen;
  for (const auto& f : schema) {
    if (++seen[f.name] > 1) throw SchemaError("duplicate feature name: " + f.name);
  }
}

// Checks one parsed cell against its spec. Returns an error message or empty.
inline std::string check_value(const FeatureSpec& spec, double v) {
  if (!std::isfinite(v)) return "non-finite value";
  switch (spec.kind) {
    case FeatureKind::kBinary:
      if (v != 0.0 && v != 1.0) return "binary feature must be 0 or 1";
      break;
    case FeatureKind::kOrdinal: {
      if (v != std::floor(v)) return "ordinal feature must be integer-coded";
      if (spec.min_value && v < *spec.min_value) return "below declared minimum";
      if (spec.max_value && v > *spec.max_value) return "above declared maximum";
      break;
    }
    case FeatureKind::kCategorical: {
      for (double c : spec.categories)
        if (v == c) return {};
      return "value not in declared category list";
    }
    case FeatureKind::kContinuous:
      if (spec.min_value && v < *spec.min_value) return "below declared minimum";
      if (spec.max_value && v > *spec.max_value) return "above declared maximum";
      break;
  }
  return {};
}

// Per-subject learning scores attached to a table; NaN marks a missing score.
struct ScoreColumns {
  std::vector<double> math;
  std::vector<double> reading;
  std::vector<double> science;

  bool row_complete(std::size_t r) const {
    return !std::isnan(math[r]) && !std::isnan(reading[r]) && !std::isnan(science[r]);
  }
};

class FeatureTable {
 public:
  std::vector<FeatureSpec> schema;
  std::vector<double> values;         // n x m, row-major; missing cells hold NaN
  std::vector<std::uint8_t> missing;  // n x m
  std::vector<std::string> student_ids;
  std::vector<int> school_of_row;   // index into school_names
  std::vector<int> country_of_row;  // index into country_names
  std::vector<std::string> school_names;
  std::vector<std::string> country_names;
  std::vector<int> country_of_school;  // school index -> country index
  std::vector<double> weights;
  std::optional<ScoreColumns> scores;

  std::size_t n_rows() const { return student_ids.size(); }
  std::size_t n_features() const { return schema.size(); }

  double value(std::size_t row, std::size_t col) const {
    return values[row * schema.size() + col];
  }
  bool is_missing(std::size_t row, std::size_t col) const {
    return missing[row * schema.size() + col] != 0;
  }

  int feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < schema.size(); ++i)
      if (schema[i].name == name) return static_cast<int>(i);
    return -1;
  }

  // Dense feature row with NaN for missing cells (model input convention).
  std::vector<double> row(std::size_t r) const {
    const std::size_t m = schema.size();
    return std::vector<double>(values.begin() + r * m, values.begin() + (r + 1) * m);
  }

  void check_invariants() const {
    validate_schema(schema);
    const std::size_t n = n_rows();
    if (values.size() != n * schema.size() || missing.size() != values.size())
      throw SchemaError("table shape mismatch");
    double wsum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw SchemaError("negative row weight");
      wsum += w;
    }
    if (n > 0 && wsum <= 0.0) throw SchemaError("all row weights are zero");
    for (std::size_t r = 0; r < n; ++r) {
      const int s = school_of_row[r];
      if (country_of_school[s] != country_of_row[r])
        throw SchemaError("school " + school_names[s] + " mapped to two countries");
    }
  }
};

// Row subset preserving the school/country index spaces.
inline FeatureTable subset_table(const FeatureTable& t, std::span<const std::size_t> rows) {
  FeatureTable out;
  out.schema = t.schema;
  out.school_names = t.school_names;
  out.country_names = t.country_names;
  out.country_of_school = t.country_of_school;
  const std::size_t m = t.schema.size();
  if (t.scores) out.scores = ScoreColumns{};
  for (std::size_t r : rows) {
    out.student_ids.push_back(t.student_ids[r]);
    out.school_of_row.push_back(t.school_of_row[r]);
    out.country_of_row.push_back(t.country_of_row[r]);
    out.weights.push_back(t.weights[r]);
    for (std::size_t j = 0; j < m; ++j) {
      out.values.push_back(t.value(r, j));
      out.missing.push_back(t.is_missing(r, j) ? 1 : 0);
    }
    if (t.scores) {
      out.scores->math.push_back(t.scores->math[r]);
      out.scores->reading.push_back(t.scores->reading[r]);
      out.scores->science.push_back(t.scores->science[r]);
    }
  }
  return out;
}

struct LoadOptions {
  char delimiter = ',';
  std::string missing_sentinel;  // cells equal to this (or empty) become missing
  std::string student_id_column = "student_id";
  std::string school_id_column = "school_id";
  std::string country_id_column = "country_id";
  std::string weight_column;  // empty: absent, all weights 1.0
  std::string math_column = "pv_math";
  std::string reading_column = "pv_read";
  std::string science_column = "pv_scie";
};

namespace detail {

inline int indexed(std::vector<std::string>& names, std::map<std::string, int>& lut,
                   const std::string& key) {
  auto it = lut.find(key);
  if (it != lut.end()) return it->second;
  const int id = static_cast<int>(names.size());
  names.push_back(key);
  lut.emplace(key, id);
  return id;
}

}  // namespace detail

inline FeatureTable load_table(const CsvTable& csv, const std::vector<FeatureSpec>& schema,
                               const LoadOptions& opt = {}) {
  validate_schema(schema);
  FeatureTable t;
  t.schema = schema;

  const int c_student = csv.column(opt.student_id_column);
  const int c_school = csv.column(opt.school_id_column);
  const int c_country = csv.column(opt.country_id_column);
  if (c_student < 0 || c_school < 0 || c_country < 0)
    throw SchemaError("missing key column (need " + opt.student_id_column + ", " +
                      opt.school_id_column + ", " + opt.country_id_column + ")");
  const int c_weight = opt.weight_column.empty() ? -1 : csv.column(opt.weight_column);
  if (!opt.weight_column.empty() && c_weight < 0)
    throw SchemaError("declared weight column not found: " + opt.weight_column);

  std::vector<int> feat_col(schema.size());
  for (std::size_t j = 0; j < schema.size(); ++j) {
    feat_col[j] = csv.column(schema[j].name);
    if (feat_col[j] < 0) throw SchemaError("schema column not found in CSV: " + schema[j].name);
  }
  const int c_math = csv.column(opt.math_column);
  const int c_read = csv.column(opt.reading_column);
  const int c_scie = csv.column(opt.science_column);
  const bool has_scores = c_math >= 0 && c_read >= 0 && c_scie >= 0;
  if (has_scores) t.scores = ScoreColumns{};

  std::map<std::string, int> school_lut, country_lut;
  const std::size_t m = schema.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto is_missing_cell = [&](const std::string& cell) {
    return cell.empty() || cell == opt.missing_sentinel;
  };
  auto parse_score = [&](const std::vector<std::string>& row, int col) {
    if (col < 0 || is_missing_cell(row[col])) return nan;
    double v;
    if (!parse_double(row[col], v)) return nan;
    return v;
  };

  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    if (row.size() != csv.header.size()) {
      throw SchemaError("row " + std::to_string(r + 1) + ": cell count mismatch");
    }
    t.student_ids.push_back(row[c_student]);
    const int school = detail::indexed(t.school_names, school_lut, row[c_school]);
    const int country = detail::indexed(t.country_names, country_lut, row[c_country]);
    if (school == static_cast<int>(t.country_of_school.size())) {
      t.country_of_school.push_back(country);
    } else if (t.country_of_school[school] != country) {
      throw SchemaError("school " + row[c_school] + " mapped to two countries (row " +
                        std::to_string(r + 1) + ")");
    }
    t.school_of_row.push_back(school);
    t.country_of_row.push_back(country);

    double w = 1.0;
    if (c_weight >= 0 && !is_missing_cell(row[c_weight])) {
      if (!parse_double(row[c_weight], w) || w < 0.0)
        throw SchemaError("row " + std::to_string(r + 1) + ", column " + opt.weight_column +
                          ": invalid weight");
    }
    t.weights.push_back(w);

    for (std::size_t j = 0; j < m; ++j) {
      const std::string& cell = row[feat_col[j]];
      if (is_missing_cell(cell)) {
        if (!schema[j].missing_allowed)
          throw SchemaError("row " + std::to_string(r + 1) + ", column " + schema[j].name +
                            ": missing value not allowed");
        t.values.push_back(nan);
        t.missing.push_back(1);
        continue;
      }
      double v;
      if (!parse_double(cell, v))
        throw SchemaError("row " + std::to_string(r + 1) + ", column " + schema[j].name +
                          ": cannot parse '" + cell + "'");
      const std::string err = check_value(schema[j], v);
      if (!err.empty())
        throw SchemaError("row " + std::to_string(r + 1) + ", column " + schema[j].name +
                          ": " + err + " (value '" + cell + "')");
      t.values.push_back(v);
      t.missing.push_back(0);
    }
    if (has_scores) {
      t.scores->math.push_back(parse_score(row, c_math));
      t.scores->reading.push_back(parse_score(row, c_read));
      t.scores->science.push_back(parse_score(row, c_scie));
    }
  }
  t.check_invariants();
  return t;
}

inline FeatureTable load_table_file(const std::string& path,
                                    const std::vector<FeatureSpec>& schema,
                                    const LoadOptions& opt = {}) {
  return load_table(read_csv_file(path, opt.delimiter), schema, opt);
}

// Weighted quintile labels in {1..5}. Row r gets label q iff the weighted
// cumulative share of rows strictly below it (ties broken by stable input
// index) falls in [(q-1)/5, q/5). Labels are invariant under any positive
// rescaling of the weights.
inline std::vector<int> assign_quintiles(std::span<const double> values,
                                         std::span<const double> weights) {
  const std::size_t n = values.size();
  if (n == 0) throw std::invalid_argument("assign_quintiles: empty input");
  if (weights.size() != n) throw std::invalid_argument("assign_quintiles: size mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("assign_quintiles: negative weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("assign_quintiles: all weights zero");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("assign_quintiles: non-finite value");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return values[l] < values[r]; });

  std::vector<int> labels(n, 0);
  double below = 0.0;
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t r = order[pos];
    const double share = below / total;
    int q = static_cast<int>(std::floor(share * 5.0)) + 1;
    q = std::clamp(q, 1, 5);
    labels[r] = q;
    below += weights[r];
  }
  return labels;
}

struct FoldAssignment {
  int k = 0;
  std::vector<int> fold_of_row;                   // validation fold per row
  std::vector<std::vector<std::size_t>> train;    // post-undersampling
  std::vector<std::vector<std::size_t>> validate;
};

// Stratified k-fold assignment with 1:1 undersampling of the training side.
// Validation folds keep the natural class imbalance.
inline FoldAssignment stratified_undersampled_folds(std::span<const int> labels, int k,
                                                    std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (k < 2) throw std::invalid_argument("folds: k must be >= 2");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (labels[i] != 0 ? pos : neg).push_back(i);
  if (pos.size() < static_cast<std::size_t>(k) || neg.size() < static_cast<std::size_t>(k))
    throw std::invalid_argument("folds: each class needs at least k members");

  Rng rng(derive_seed(seed, 0));
  rng.shuffle(pos);
  rng.shuffle(neg);

  FoldAssignment fa;
  fa.k = k;
  fa.fold_of_row.assign(n, -1);
  fa.train.resize(k);
  fa.validate.resize(k);
  for (std::size_t i = 0; i < pos.size(); ++i) fa.fold_of_row[pos[i]] = static_cast<int>(i % k);
  for (std::size_t i = 0; i < neg.size(); ++i) fa.fold_of_row[neg[i]] = static_cast<int>(i % k);

  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> train_pos, train_neg;
    for (std::size_t i = 0; i < n; ++i) {
      if (fa.fold_of_row[i] == f) {
        fa.validate[f].push_back(i);
      } else {
        (labels[i] != 0 ? train_pos : train_neg).push_back(i);
      }
    }
    const std::size_t keep = std::min(train_pos.size(), train_neg.size());
    Rng fold_rng(derive_seed(seed, 1 + static_cast<std::uint64_t>(f)));
    auto undersample = [&](std::vector<std::size_t>& cls) {
      if (cls.size() <= keep) return;
      std::vector<std::size_t> chosen = fold_rng.sample_without_replacement(cls.size(), keep);
      std::vector<std::size_t> kept;
      kept.reserve(keep);
      for (std::size_t j : chosen) kept.push_back(cls[j]);
      cls = std::move(kept);
    };
    undersample(train_pos);
    undersample(train_neg);
    fa.train[f].reserve(train_pos.size() + train_neg.size());
    fa.train[f].insert(fa.train[f].end(), train_pos.begin(), train_pos.end());
    fa.train[f].insert(fa.train[f].end(), train_neg.begin(), train_neg.end());
    std::sort(fa.train[f].begin(), fa.train[f].end());
    std::sort(fa.validate[f].begin(), fa.validate[f].end());
  }
  return fa;
}

enum class SignificanceTier { kNone, kOneStar, kTwoStars, kThreeStars };

inline SignificanceTier significance_tier(double p) {
  if (p <= 0.01) return SignificanceTier::kThreeStars;
  if (p <= 0.05) return SignificanceTier::kTwoStars;
  if (p <= 0.10) return SignificanceTier::kOneStar;
  return SignificanceTier::kNone;
}

inline std::string stars(SignificanceTier t) {
  switch (t) {
    case SignificanceTier::kThreeStars: return "***";
    case SignificanceTier::kTwoStars: return "**";
    case SignificanceTier::kOneStar: return "*";
    default: return "";
  }
}

struct CovariateSummary {
  std::string name;
  std::size_t n_a = 0, n_b = 0;
  double mean_a = 0.0, mean_b = 0.0;
  double difference = 0.0;  // mean_b - mean_a
  double t = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  SignificanceTier tier = SignificanceTier::kNone;
  bool defined = false;
};

struct GroupSummary {
  std::vector<CovariateSummary> covariates;
};

// Welch unequal-variance comparison of group B (mask=1) against group A
// (mask=0) per covariate; missing rows excluded pairwise.
inline GroupSummary summarize_groups(const FeatureTable& table, std::span<const int> group_mask) {
  if (group_mask.size() != table.n_rows())
    throw std::invalid_argument("summarize_groups: mask size mismatch");
  bool any_a = false, any_b = false;
  for (int g : group_mask) (g != 0 ? any_b : any_a) = true;
  if (!any_a || !any_b) throw std::invalid_argument("summarize_groups: a group is empty");

  GroupSummary out;
  for (std::size_t j = 0; j < table.n_features(); ++j) {
    CovariateSummary cs;
    cs.name = table.schema[j].name;
    std::vector<double> a, b;
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
      if (table.is_missing(r, j)) continue;
      (group_mask[r] != 0 ? b : a).push_back(table.value(r, j));
    }
    cs.n_a = a.size();
    cs.n_b = b.size();
    const WelchResult w = welch_t_test(a, b);
    cs.mean_a = w.mean_a;
    cs.mean_b = w.mean_b;
    cs.difference = w.difference;
    if (a.size() >= 1 && b.size() >= 1) {
      // Means and difference are reported even when t is undefined.
      double ma = 0.0, mb = 0.0;
      for (double v : a) ma += v;
      for (double v : b) mb += v;
      cs.mean_a = ma / static_cast<double>(a.size());
      cs.mean_b = mb / static_cast<double>(b.size());
      cs.difference = cs.mean_b - cs.mean_a;
    }
    if (w.defined) {
      cs.t = w.t;
      cs.p = w.p;
      cs.tier = significance_tier(w.p);
      cs.defined = true;
    }
    out.covariates.push_back(std::move(cs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthConfig {
  int countries = 2;
  int schools_per_country = 5;
  int students_per_school = 20;
  double beta0 = 0.0;          // latent intercept
  double beta_ses = 0.0;       // student SES effect
  double beta_school_ses = 0.0;
  double sigma2_school = 0.0;   // level-2 variance
  double sigma2_country = 0.0;  // level-3 variance
  std::vector<std::pair<std::string, double>> feature_effects;
  bool nonlinear = false;
  std::string nonlinear_feature = "StudBKGD_Curiosity";  // squared term
  double nonlinear_coef = 0.5;
  bool interaction = false;
  std::string interaction_a = "StudBKGD_Gender";
  std::string interaction_b = "StudBKGD_Homework";
  double interaction_coef = 0.5;
  double score_scale = 25.0;     // score points per latent logit unit
  double score_noise_sd = 0.5;   // per-subject latent noise
  double cutoff_math = 420.07;   // level-2 thresholds in score points
  double cutoff_reading = 407.47;
  double cutoff_science = 410.85;
  double missing_rate = 0.0;  // applied to non-SES covariates
};

struct SynthLatent {
  std::vector<double> school_intercepts;   // by school index
  std::vector<double> country_intercepts;  // by country index
  std::vector<double> margins;             // per row, includes intercepts
  std::vector<double> probabilities;       // inverse-logit margins
  std::vector<int> outcomes;               // Bernoulli draws through the link
};

struct SynthResult {
  FeatureTable table;
  SynthLatent latent;
};

// Default synthetic schema; acronyms follow the survey variable naming used
// throughout the CSV interfaces.
inline std::vector<FeatureSpec> synth_schema() {
  auto ord = [](std::string name, double lo, double hi) {
    FeatureSpec f;
    f.name = std::move(name);
    f.kind = FeatureKind::kOrdinal;
    f.min_value = lo;
    f.max_value = hi;
    return f;
  };
  auto bin = [](std::string name) {
    FeatureSpec f;
    f.name = std::move(name);
    f.kind = FeatureKind::kBinary;
    return f;
  };
  auto cont = [](std::string name) {
    FeatureSpec f;
    f.name = std::move(name);
    f.kind = FeatureKind::kContinuous;
    return f;
  };
  return {
      cont("ESCS"),
      bin("StudBKGD_Gender"),
      ord("StudBKGD_DD", 0, 10),
      ord("StudBKGD_Books", 0, 6),
      ord("StudBKGD_Homework", 1, 5),
      bin("StudBKGD_RepePrim"),
      ord("StudBKGD_WorkPaid", 0, 7),
      cont("StudBKGD_Curiosity"),
      cont("StudBKGD_Perseverance"),
      bin("SchBKGD_Private"),
      bin("SchBKGD_Urban"),
      cont("SchBKGD_STR"),
      cont("CovidBKGD_Closeddays"),
      ord("CovidBKGD_PropStudRemoteL", 1, 11),
      cont("CovidBKGD_BarrierRemoteLAll"),
  };
}

inline SynthResult synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.countries <= 0 || cfg.schools_per_country <= 0 || cfg.students_per_school <= 0)
    throw std::invalid_argument("synth_generate: group sizes must be positive");
  if (cfg.sigma2_school < 0.0 || cfg.sigma2_country < 0.0)
    throw std::invalid_argument("synth_generate: negative variance component");

  SynthResult out;
  FeatureTable& t = out.table;
  t.schema = synth_schema();
  const std::size_t m = t.schema.size();
  t.scores = ScoreColumns{};

  Rng rng(derive_seed(seed, 0));
  const double sd_school = std::sqrt(cfg.sigma2_school);
  const double sd_country = std::sqrt(cfg.sigma2_country);

  std::vector<int> effect_col(cfg.feature_effects.size());
  auto col_of = [&](const std::string& name) {
    for (std::size_t j = 0; j < m; ++j)
      if (t.schema[j].name == name) return static_cast<int>(j);
    throw std::invalid_argument("synth_generate: unknown feature " + name);
  };
  for (std::size_t e = 0; e < cfg.feature_effects.size(); ++e)
    effect_col[e] = col_of(cfg.feature_effects[e].first);
  const int nl_col = cfg.nonlinear ? col_of(cfg.nonlinear_feature) : -1;
  const int ia_col = cfg.interaction ? col_of(cfg.interaction_a) : -1;
  const int ib_col = cfg.interaction ? col_of(cfg.interaction_b) : -1;

  int student_seq = 0;
  for (int c = 0; c < cfg.countries; ++c) {
    out.latent.country_intercepts.push_back(rng.normal(0.0, sd_country));
    t.country_names.push_back("C" + std::to_string(c + 1));
    for (int s = 0; s < cfg.schools_per_country; ++s) {
      const int school_idx = static_cast<int>(t.school_names.size());
      t.school_names.push_back("C" + std::to_string(c + 1) + "S" + std::to_string(s + 1));
      t.country_of_school.push_back(c);
      out.latent.school_intercepts.push_back(rng.normal(0.0, sd_school));

      const double school_ses_center = rng.normal(0.0, 0.5);
      const int sch_private = rng.bernoulli(inverse_logit(school_ses_center - 1.5)) ? 1 : 0;
      const int sch_urban = rng.bernoulli(0.55 + 0.15 * std::tanh(school_ses_center)) ? 1 : 0;
      const double sch_str = std::max(5.0, rng.normal(20.0, 5.0));
      const double closed_days = std::max(0.0, rng.normal(230.0, 60.0));
      const int prop_remote = std::clamp(static_cast<int>(std::lround(rng.normal(8.0, 2.0))), 1, 11);
      const double barrier_all = rng.normal(0.0, 1.0);

      std::vector<double> ses_rows(cfg.students_per_school);
      for (double& v : ses_rows) v = school_ses_center + rng.normal(0.0, 0.9);
      const double school_mean_ses =
          std::accumulate(ses_rows.begin(), ses_rows.end(), 0.0) /
          static_cast<double>(cfg.students_per_school);

      for (int i = 0; i < cfg.students_per_school; ++i) {
        ++student_seq;
        t.student_ids.push_back("st" + std::to_string(student_seq));
        t.school_of_row.push_back(school_idx);
        t.country_of_row.push_back(c);
        t.weights.push_back(1.0);

        const double ses = ses_rows[i];
        std::vector<double> x(m, 0.0);
        x[0] = ses;
        x[1] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        x[2] = std::clamp(std::lround(6.0 + 1.2 * ses + rng.normal(0.0, 1.5)), 0L, 10L);
        x[3] = std::clamp(std::lround(2.0 + 0.8 * ses + rng.normal(0.0, 1.0)), 0L, 6L);
        x[4] = std::clamp(std::lround(3.0 + rng.normal(0.0, 1.0)), 1L, 5L);
        x[5] = rng.bernoulli(inverse_logit(-1.5 - 0.5 * ses)) ? 1.0 : 0.0;
        x[6] = std::clamp(std::lround(1.5 - 0.6 * ses + rng.normal(0.0, 1.5)), 0L, 7L);
        x[7] = rng.normal(0.0, 1.0);
        x[8] = rng.normal(0.0, 1.0);
        x[9] = sch_private;
        x[10] = sch_urban;
        x[11] = sch_str;
        x[12] = closed_days;
        x[13] = prop_remote;
        x[14] = barrier_all;

        double margin = cfg.beta0 + cfg.beta_ses * ses + cfg.beta_school_ses * school_mean_ses +
                        out.latent.school_intercepts[school_idx] +
                        out.latent.country_intercepts[c];
        for (std::size_t e = 0; e < cfg.feature_effects.size(); ++e)
          margin += cfg.feature_effects[e].second * x[effect_col[e]];
        if (cfg.nonlinear) margin += cfg.nonlinear_coef * x[nl_col] * x[nl_col];
        if (cfg.interaction) margin += cfg.interaction_coef * x[ia_col] * x[ib_col];

        const double prob = inverse_logit(margin);
        out.latent.margins.push_back(margin);
        out.latent.probabilities.push_back(prob);
        out.latent.outcomes.push_back(rng.bernoulli(prob) ? 1 : 0);

        t.scores->math.push_back(cfg.cutoff_math +
                                 cfg.score_scale * (margin + rng.normal(0.0, cfg.score_noise_sd)));
        t.scores->reading.push_back(
            cfg.cutoff_reading + cfg.score_scale * (margin + rng.normal(0.0, cfg.score_noise_sd)));
        t.scores->science.push_back(
            cfg.cutoff_science + cfg.score_scale * (margin + rng.normal(0.0, cfg.score_noise_sd)));

        for (std::size_t j = 0; j < m; ++j) {
          const bool missing = cfg.missing_rate > 0.0 && j != 0 &&
                               rng.bernoulli(cfg.missing_rate);
          if (missing) {
            t.values.push_back(std::numeric_limits<double>::quiet_NaN());
            t.missing.push_back(1);
          } else {
            t.values.push_back(x[j]);
            t.missing.push_back(0);
          }
        }
      }
    }
  }
  t.check_invariants();
  return out;
}

}  // namespace sarlab
