#pragma once

// End-to-end pipeline: config parsing and validation, staged execution
// (ingest/synthesize, indicators, group summaries, grid search, final fits,
// attribution exports, dependence curves, subsample comparisons) and a
// deterministic artifact manifest with content hashes. A single master seed
// fans out to per-stage seeds through derive_seed(master, stage counter).

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sarlab/csv.hpp"
#include "sarlab/dataset.hpp"
#include "sarlab/dependence.hpp"
#include "sarlab/explain.hpp"
#include "sarlab/gbt.hpp"
#include "sarlab/indicators.hpp"
#include "sarlab/linear_baseline.hpp"
#include "sarlab/metrics.hpp"
#include "sarlab/multilevel.hpp"
#include "sarlab/svg.hpp"

namespace sarlab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_name(stage) {}
  std::string stage_name;
};

enum class Stage {
  kIngest = 0,
  kIndicators,
  kSummarize,
  kGridSearch,
  kFit,
  kExplain,
  kDepend,
  kSubsample,
  kReport,
};

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kIngest: return "ingest";
    case Stage::kIndicators: return "indicators";
    case Stage::kSummarize: return "summarize";
    case Stage::kGridSearch: return "grid-search";
    case Stage::kFit: return "fit";
    case Stage::kExplain: return "explain";
    case Stage::kDepend: return "depend";
    case Stage::kSubsample: return "subsample";
    case Stage::kReport: return "report";
  }
  return "?";
}

struct SubsampleComparison {
  std::string name;
  std::string feature;
  double value_a = 1.0;
  double value_b = 0.0;
  std::string label_a;  // defaults to "<feature>==<value_a>"
  std::string label_b;
};

struct PipelineConfig {
  // Exactly one of the two input modes.
  bool has_input = false;
  std::string data_csv;
  std::string schema_json;
  LoadOptions load;
  bool has_synth = false;
  SynthConfig synth;

  IndicatorOptions indicators;
  std::vector<std::string> indicator_names{"SAR1", "SAR2", "SAR3", "SAR4"};
  std::vector<std::string> model_features;  // empty: all schema minus the SES feature
  int folds = 5;
  std::vector<GridPoint> grid;  // empty: a small default GBT + logit grid
  std::size_t top_n = 25;
  std::vector<std::string> dependence_features;  // empty: shipped defaults in schema
  bool dependence_features_explicit = false;
  std::vector<std::string> beeswarm_features;  // empty: top 10 by importance
  std::size_t local_top_k = 10;
  std::vector<std::string> interaction_rows;  // student ids
  std::vector<SubsampleComparison> comparisons;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  int threads = 1;
};

// ---------------------------------------------------------------------------
// JSON bindings

inline FeatureSpec feature_spec_from_json(const nlohmann::json& j) {
  FeatureSpec f;
  f.name = j.at("name").get<std::string>();
  f.kind = feature_kind_from_name(j.value("kind", std::string("continuous")));
  if (j.contains("min")) f.min_value = j.at("min").get<double>();
  if (j.contains("max")) f.max_value = j.at("max").get<double>();
  if (j.contains("categories")) f.categories = j.at("categories").get<std::vector<double>>();
  f.missing_allowed = j.value("missing_allowed", true);
  return f;
}

inline nlohmann::json feature_spec_to_json(const FeatureSpec& f) {
  nlohmann::json j{{"name", f.name}, {"kind", feature_kind_name(f.kind)},
                   {"missing_allowed", f.missing_allowed}};
  if (f.min_value) j["min"] = *f.min_value;
  if (f.max_value) j["max"] = *f.max_value;
  if (!f.categories.empty()) j["categories"] = f.categories;
  return j;
}

inline std::vector<FeatureSpec> schema_from_json(const nlohmann::json& j) {
  std::vector<FeatureSpec> schema;
  for (const auto& item : j) schema.push_back(feature_spec_from_json(item));
  validate_schema(schema);
  return schema;
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.countries = j.value("countries", c.countries);
  c.schools_per_country = j.value("schools_per_country", c.schools_per_country);
  c.students_per_school = j.value("students_per_school", c.students_per_school);
  c.beta0 = j.value("beta0", c.beta0);
  c.beta_ses = j.value("beta_ses", c.beta_ses);
  c.beta_school_ses = j.value("beta_school_ses", c.beta_school_ses);
  c.sigma2_school = j.value("sigma2_school", c.sigma2_school);
  c.sigma2_country = j.value("sigma2_country", c.sigma2_country);
  if (j.contains("feature_effects"))
    for (const auto& [key, value] : j.at("feature_effects").items())
      c.feature_effects.emplace_back(key, value.get<double>());
  c.nonlinear = j.value("nonlinear", c.nonlinear);
  c.nonlinear_feature = j.value("nonlinear_feature", c.nonlinear_feature);
  c.nonlinear_coef = j.value("nonlinear_coef", c.nonlinear_coef);
  c.interaction = j.value("interaction", c.interaction);
  c.interaction_a = j.value("interaction_a", c.interaction_a);
  c.interaction_b = j.value("interaction_b", c.interaction_b);
  c.interaction_coef = j.value("interaction_coef", c.interaction_coef);
  c.score_scale = j.value("score_scale", c.score_scale);
  c.score_noise_sd = j.value("score_noise_sd", c.score_noise_sd);
  c.cutoff_math = j.value("cutoff_math", c.cutoff_math);
  c.cutoff_reading = j.value("cutoff_reading", c.cutoff_reading);
  c.cutoff_science = j.value("cutoff_science", c.cutoff_science);
  c.missing_rate = j.value("missing_rate", c.missing_rate);
  return c;
}

inline GridPoint grid_point_from_json(const nlohmann::json& j, std::size_t index) {
  GridPoint p;
  const std::string kind = j.value("kind", std::string("gbt"));
  if (kind == "gbt") {
    GbtParams g;
    g.n_trees = j.value("n_trees", g.n_trees);
    g.learning_rate = j.value("learning_rate", g.learning_rate);
    g.max_depth = j.value("max_depth", g.max_depth);
    g.subsample = j.value("subsample", g.subsample);
    g.lambda = j.value("lambda", g.lambda);
    g.gamma = j.value("gamma", g.gamma);
    g.min_child_hessian = j.value("min_child_hessian", g.min_child_hessian);
    p.params = g;
    p.name = j.value("name", "gbt-" + std::to_string(index));
  } else if (kind == "linear") {
    LinearGridParams l;
    const std::string penalty = j.value("penalty", std::string("l2"));
    if (penalty == "l1" || penalty == "L1") l.penalty = PenaltyKind::kL1;
    else if (penalty == "l2" || penalty == "L2") l.penalty = PenaltyKind::kL2;
    else throw ConfigError("grid point " + std::to_string(index) + ": unknown penalty " + penalty);
    l.c = j.value("c", 1.0);
    if (l.c <= 0.0) throw ConfigError("grid point " + std::to_string(index) + ": C must be > 0");
    p.params = l;
    p.name = j.value("name", "linear-" + std::to_string(index));
  } else {
    throw ConfigError("grid point " + std::to_string(index) + ": unknown kind " + kind);
  }
  return p;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  if (j.contains("input")) {
    c.has_input = true;
    const auto& in = j.at("input");
    c.data_csv = in.at("data_csv").get<std::string>();
    c.schema_json = in.at("schema_json").get<std::string>();
    if (in.contains("delimiter")) {
      const std::string d = in.at("delimiter").get<std::string>();
      if (d.size() != 1) throw ConfigError("delimiter must be a single character");
      c.load.delimiter = d[0];
    }
    c.load.missing_sentinel = in.value("missing_sentinel", c.load.missing_sentinel);
    c.load.weight_column = in.value("weight_column", c.load.weight_column);
    c.load.student_id_column = in.value("student_id_column", c.load.student_id_column);
    c.load.school_id_column = in.value("school_id_column", c.load.school_id_column);
    c.load.country_id_column = in.value("country_id_column", c.load.country_id_column);
  }
  if (j.contains("synth")) {
    c.has_synth = true;
    c.synth = synth_config_from_json(j.at("synth"));
  }
  if (j.contains("indicators")) {
    const auto& ind = j.at("indicators");
    if (ind.contains("cutoffs")) {
      const auto& cut = ind.at("cutoffs");
      c.indicators.cutoffs.math = cut.value("math", c.indicators.cutoffs.math);
      c.indicators.cutoffs.reading = cut.value("reading", c.indicators.cutoffs.reading);
      c.indicators.cutoffs.science = cut.value("science", c.indicators.cutoffs.science);
    }
    c.indicators.ses_feature = ind.value("ses_feature", c.indicators.ses_feature);
    c.indicators.weighted_quintiles =
        ind.value("weighted_quintiles", c.indicators.weighted_quintiles);
    c.indicators.rho_median_per_country =
        ind.value("rho_median_per_country", c.indicators.rho_median_per_country);
    c.indicators.private_feature = ind.value("private_feature", c.indicators.private_feature);
    c.indicators.urban_feature = ind.value("urban_feature", c.indicators.urban_feature);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("features")) c.model_features = m.at("features").get<std::vector<std::string>>();
    if (m.contains("indicators"))
      c.indicator_names = m.at("indicators").get<std::vector<std::string>>();
    c.folds = m.value("folds", c.folds);
    if (m.contains("grid")) {
      std::size_t idx = 0;
      for (const auto& g : m.at("grid")) c.grid.push_back(grid_point_from_json(g, idx++));
    }
  }
  if (j.contains("explain")) {
    const auto& e = j.at("explain");
    c.top_n = e.value("top_n", c.top_n);
    if (e.contains("dependence_features")) {
      c.dependence_features = e.at("dependence_features").get<std::vector<std::string>>();
      c.dependence_features_explicit = true;
    }
    if (e.contains("beeswarm_features"))
      c.beeswarm_features = e.at("beeswarm_features").get<std::vector<std::string>>();
    c.local_top_k = e.value("local_top_k", c.local_top_k);
    if (e.contains("interaction_rows"))
      c.interaction_rows = e.at("interaction_rows").get<std::vector<std::string>>();
  }
  if (j.contains("subsample")) {
    for (const auto& s : j.at("subsample").value("comparisons", nlohmann::json::array())) {
      SubsampleComparison cmp;
      cmp.feature = s.at("feature").get<std::string>();
      cmp.value_a = s.value("value_a", 1.0);
      cmp.value_b = s.value("value_b", 0.0);
      cmp.name = s.value("name", cmp.feature);
      cmp.label_a = s.value("label_a", cmp.feature + "==" + format_double(cmp.value_a));
      cmp.label_b = s.value("label_b", cmp.feature + "==" + format_double(cmp.value_b));
      c.comparisons.push_back(std::move(cmp));
    }
  }
  c.output_dir = j.value("output_dir", c.output_dir);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return pipeline_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Manifest hashing

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

struct Artifact {
  std::string path;  // relative to the output directory
  std::uint64_t bytes = 0;
  std::string hash;
};

// ---------------------------------------------------------------------------
// Pipeline

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) { validate(); }

  // Executes every stage up to and including `target`, writing artifacts.
  void run_through(Stage target) {
    run_stage(Stage::kIngest, [&] { stage_ingest(); });
    if (target == Stage::kIngest) return;
    run_stage(Stage::kIndicators, [&] { stage_indicators(); });
    if (target == Stage::kIndicators) return;
    run_stage(Stage::kSummarize, [&] { stage_summarize(); });
    if (target == Stage::kSummarize) return;
    run_stage(Stage::kGridSearch, [&] { stage_grid_search(); });
    if (target == Stage::kGridSearch) return;
    run_stage(Stage::kFit, [&] { stage_fit(); });
    if (target == Stage::kFit) return;
    run_stage(Stage::kExplain, [&] { stage_explain(); });
    if (target == Stage::kExplain) return;
    run_stage(Stage::kDepend, [&] { stage_depend(); });
    if (target == Stage::kDepend) return;
    run_stage(Stage::kSubsample, [&] { stage_subsample(); });
    if (target == Stage::kSubsample) return;
    run_stage(Stage::kReport, [&] { stage_report(); });
  }

  const std::vector<Artifact>& artifacts() const { return artifacts_; }
  const FeatureTable& table() const { return table_; }

  // Manifest over files already present in the output directory.
  static std::string manifest_existing(const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::vector<Artifact> arts;
    for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
      if (!entry.is_regular_file()) continue;
      if (entry.path().filename() == "manifest.json") continue;
      std::ifstream in(entry.path(), std::ios::binary);
      std::ostringstream buf;
      buf << in.rdbuf();
      const std::string content = buf.str();
      arts.push_back({fs::relative(entry.path(), out_dir).generic_string(), content.size(),
                      hash_hex(fnv1a64(content))});
    }
    std::sort(arts.begin(), arts.end(),
              [](const Artifact& a, const Artifact& b) { return a.path < b.path; });
    nlohmann::json j;
    j["artifacts"] = nlohmann::json::array();
    for (const auto& a : arts)
      j["artifacts"].push_back({{"path", a.path}, {"bytes", a.bytes}, {"hash", a.hash}});
    return j.dump(2) + "\n";
  }

 private:
  // Stage seed counters; constant so stages can be rerun in isolation.
  static constexpr std::uint64_t kSeedIngest = 1;
  static constexpr std::uint64_t kSeedFolds = 40;    // + indicator index
  static constexpr std::uint64_t kSeedGrid = 50;     // + indicator index
  static constexpr std::uint64_t kSeedFit = 60;      // + indicator index
  static constexpr std::uint64_t kSeedSubsample = 80;  // + comparison * 8 + indicator * 2 + arm

  void validate() {
    if (cfg_.has_input == cfg_.has_synth)
      throw ConfigError("exactly one of input and synth must be configured");
    if (cfg_.folds < 2) throw ConfigError("folds must be at least 2");
    if (cfg_.threads < 1) cfg_.threads = 1;
    for (const auto& name : cfg_.indicator_names)
      if (name != "SAR1" && name != "SAR2" && name != "SAR3" && name != "SAR4")
        throw ConfigError("unknown indicator: " + name);
    if (cfg_.grid.empty()) {
      GbtParams g;
      g.n_trees = 60;
      g.learning_rate = 0.3;
      g.max_depth = 3;
      cfg_.grid.push_back({"gbt-d3", g});
      LinearGridParams l;
      cfg_.grid.push_back({"linear-l2-c1", l});
    }

    schema_ = cfg_.has_synth ? synth_schema() : schema_from_json(load_json(cfg_.schema_json));
    auto has_feature = [&](const std::string& name) {
      for (const auto& f : schema_)
        if (f.name == name) return true;
      return false;
    };
    if (!has_feature(cfg_.indicators.ses_feature))
      throw ConfigError("SES feature not in schema: " + cfg_.indicators.ses_feature);
    for (const auto& f : cfg_.model_features)
      if (!has_feature(f)) throw ConfigError("model feature not in schema: " + f);
    for (const auto& f : cfg_.dependence_features)
      if (!has_feature(f)) throw ConfigError("dependence feature not in schema: " + f);
    for (const auto& f : cfg_.beeswarm_features)
      if (!has_feature(f)) throw ConfigError("beeswarm feature not in schema: " + f);
    for (const auto& cmp : cfg_.comparisons)
      if (!has_feature(cmp.feature))
        throw ConfigError("subsample feature not in schema: " + cmp.feature);

    if (cfg_.model_features.empty()) {
      for (const auto& f : schema_)
        if (f.name != cfg_.indicators.ses_feature) cfg_.model_features.push_back(f.name);
    }
    if (cfg_.dependence_features.empty() && !cfg_.dependence_features_explicit) {
      for (const char* name : {"CovidBKGD_Closeddays", "CovidBKGD_PropStudRemoteL",
                               "CovidBKGD_BarrierRemoteLAll", "StudBKGD_Curiosity",
                               "StudBKGD_Perseverance"})
        if (has_feature(name)) cfg_.dependence_features.push_back(name);
    }
  }

  static nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError(path + " is not valid JSON: " + std::string(e.what()));
    }
    return j;
  }

  template <typename Fn>
  void run_stage(Stage s, Fn&& body) {
    if (done_.count(s)) return;
    try {
      body();
    } catch (const ConfigError&) {
      throw;
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage_name(s), e.what());
    }
    done_.insert(s);
  }

  void write_text(const std::string& rel_path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path full = fs::path(cfg_.output_dir) / rel_path;
    fs::create_directories(full.parent_path());
    std::ofstream out(full, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + full.string());
    out << content;
    out.close();
    artifacts_.push_back({rel_path, content.size(), hash_hex(fnv1a64(content))});
  }

  std::span<const int> labels_of(const std::string& indicator) const {
    if (indicator == "SAR1") return labels_.sar1;
    if (indicator == "SAR2") return labels_.sar2;
    if (indicator == "SAR3") return labels_.sar3;
    return labels_.sar4;
  }

  RowMatrix working_matrix() const {
    RowMatrix x(working_rows_.size(), model_cols_.size());
    for (std::size_t i = 0; i < working_rows_.size(); ++i)
      for (std::size_t j = 0; j < model_cols_.size(); ++j) {
        const std::size_t r = working_rows_[i];
        x.at(i, j) = table_.is_missing(r, model_cols_[j])
                         ? std::numeric_limits<double>::quiet_NaN()
                         : table_.value(r, model_cols_[j]);
      }
    return x;
  }

  // ----- stages ------------------------------------------------------------

  void stage_ingest() {
    if (cfg_.has_synth) {
      const SynthResult res = synth_generate(cfg_.synth, derive_seed(cfg_.seed, kSeedIngest));
      table_ = res.table;
      write_text("data.csv", table_csv(table_));
      nlohmann::json latent;
      latent["school_intercepts"] = res.latent.school_intercepts;
      latent["country_intercepts"] = res.latent.country_intercepts;
      latent["margins"] = res.latent.margins;
      latent["probabilities"] = res.latent.probabilities;
      latent["outcomes"] = res.latent.outcomes;
      write_text("latent.json", latent.dump(2) + "\n");
    } else {
      try {
        table_ = load_table_file(cfg_.data_csv, schema_, cfg_.load);
      } catch (const SchemaError& e) {
        throw ConfigError(e.what());
      }
    }
    for (const auto& f : cfg_.model_features) model_cols_.push_back(table_.feature_index(f));
  }

  void stage_indicators() {
    MultilevelOptions mopt;
    labels_ = build_sar1(table_, cfg_.indicators);
    inequality_ = school_ses_correlation(table_, cfg_.indicators);
    build_sar3(labels_, inequality_, table_);
    fit_ = fit_indicator_model(table_, labels_, cfg_.indicators, mopt);
    build_sar2(labels_, fit_, table_, cfg_.indicators);
    build_sar4(labels_, fit_, table_);
    for (std::size_t r = 0; r < table_.n_rows(); ++r)
      if (labels_.working[r]) working_rows_.push_back(r);

    std::ostringstream report;
    CsvWriter w(report);
    w.row({"student_id", "school_id", "country_id", "ses_quintile", "y_hat", "school_rho",
           "SAR1", "SAR2", "SAR3", "SAR4"});
    for (std::size_t r : working_rows_) {
      w.row({table_.student_ids[r], table_.school_names[table_.school_of_row[r]],
             table_.country_names[table_.country_of_row[r]],
             std::to_string(labels_.ses_quintile[r]), format_double(labels_.y_hat[r]),
             format_double(inequality_.rho[table_.school_of_row[r]]),
             std::to_string(labels_.sar1[r]), std::to_string(labels_.sar2[r]),
             std::to_string(labels_.sar3[r]), std::to_string(labels_.sar4[r])});
    }
    write_text("indicator_report.csv", report.str());

    const RatesReport rates = rates_report(labels_, table_, cfg_.indicators);
    std::ostringstream rcsv;
    CsvWriter rw(rcsv);
    std::vector<std::string> header{"indicator"};
    header.insert(header.end(), rates.columns.begin(), rates.columns.end());
    rw.row(header);
    const char* names[4] = {"SAR1", "SAR2", "SAR3", "SAR4"};
    for (int i = 0; i < 4; ++i) {
      std::vector<std::string> row{names[i]};
      for (const auto& col : rates.rates) row.push_back(format_double(col[i]));
      rw.row(row);
    }
    std::vector<std::string> nrow{"N"};
    for (std::size_t c : rates.counts) nrow.push_back(std::to_string(c));
    rw.row(nrow);
    write_text("rates.csv", rcsv.str());

    nlohmann::json fj;
    fj["beta0"] = fit_.beta0;
    fj["beta_ses"] = fit_.beta_ses;
    fj["beta_school_ses"] = fit_.beta_school_ses;
    fj["se_beta0"] = fit_.se_beta0;
    fj["se_beta_ses"] = fit_.se_beta_ses;
    fj["se_beta_school_ses"] = fit_.se_beta_school_ses;
    fj["sigma2_school"] = fit_.sigma2_school;
    fj["sigma2_country"] = fit_.sigma2_country;
    fj["level1_variance"] = MultilevelFit::level1_variance;
    fj["school_intercepts"] = fit_.school_intercepts;
    fj["country_intercepts"] = fit_.country_intercepts;
    fj["convergence"] = {{"converged", fit_.convergence.converged},
                         {"outer_iterations", fit_.convergence.outer_iterations},
                         {"final_relative_change", fit_.convergence.final_relative_change},
                         {"final_gradient_norm", fit_.convergence.final_gradient_norm},
                         {"warnings", fit_.convergence.warnings}};
    write_text("multilevel_fit.json", fj.dump(2) + "\n");
  }

  void stage_summarize() {
    const FeatureTable working = subset_table(table_, working_rows_);
    for (const auto& indicator : cfg_.indicator_names) {
      const auto all_labels = labels_of(indicator);
      std::vector<int> mask(working_rows_.size(), 0);
      for (std::size_t i = 0; i < working_rows_.size(); ++i)
        mask[i] = all_labels[working_rows_[i]] == 1;
      const GroupSummary gs = summarize_groups(working, mask);
      std::ostringstream csv;
      CsvWriter w(csv);
      w.row({"covariate", "n_nsar", "n_sar", "mean_nsar", "mean_sar", "difference", "t", "p",
             "stars", "defined"});
      for (const auto& cs : gs.covariates) {
        w.row({cs.name, std::to_string(cs.n_a), std::to_string(cs.n_b),
               format_double(cs.mean_a), format_double(cs.mean_b),
               format_double(cs.difference), cs.defined ? format_double(cs.t) : "",
               cs.defined ? format_double(cs.p) : "", stars(cs.tier),
               cs.defined ? "1" : "0"});
      }
      write_text("group_summary_" + indicator + ".csv", csv.str());
    }
  }

  void stage_grid_search() {
    const RowMatrix x = working_matrix();
    std::size_t ind_index = 0;
    for (const auto& indicator : cfg_.indicator_names) {
      const auto all_labels = labels_of(indicator);
      std::vector<int> y(working_rows_.size());
      for (std::size_t i = 0; i < working_rows_.size(); ++i)
        y[i] = all_labels[working_rows_[i]] == 1;

      const FoldAssignment folds = stratified_undersampled_folds(
          y, cfg_.folds, derive_seed(cfg_.seed, kSeedFolds + ind_index));
      std::vector<GridPoint> grid = cfg_.grid;
      for (std::size_t g = 0; g < grid.size(); ++g) {
        if (std::holds_alternative<GbtParams>(grid[g].params)) {
          auto p = std::get<GbtParams>(grid[g].params);
          p.seed = derive_seed(cfg_.seed, kSeedGrid + ind_index * 100 + g);
          grid[g].params = p;
        }
      }
      const GridSearchResult res = grid_search(x, y, grid, folds);
      grid_results_[indicator] = res;
      grid_points_[indicator] = grid;

      std::ostringstream csv;
      CsvWriter w(csv);
      w.row({"name", "kind", "mean_auroc", "mean_auprc", "winner"});
      for (std::size_t g = 0; g < res.points.size(); ++g) {
        const bool is_gbt = std::holds_alternative<GbtParams>(grid[g].params);
        w.row({res.points[g].name, is_gbt ? "gbt" : "linear",
               format_double(res.points[g].mean_auroc),
               format_double(res.points[g].mean_auprc), g == res.winner ? "1" : "0"});
      }
      write_text("grid_" + indicator + ".csv", csv.str());
      ++ind_index;
    }
  }

  // 1:1 undersampled training rows (indices into the working matrix).
  std::vector<std::size_t> balanced_training_rows(std::span<const int> y, std::uint64_t seed) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(i);
    const std::size_t keep = std::min(pos.size(), neg.size());
    if (keep == 0) throw std::runtime_error("single-class indicator labels");
    Rng rng(seed);
    auto pick = [&](std::vector<std::size_t>& cls) {
      if (cls.size() <= keep) return;
      auto chosen = rng.sample_without_replacement(cls.size(), keep);
      std::vector<std::size_t> kept;
      for (std::size_t c : chosen) kept.push_back(cls[c]);
      cls = std::move(kept);
    };
    pick(pos);
    pick(neg);
    std::vector<std::size_t> rows;
    rows.insert(rows.end(), pos.begin(), pos.end());
    rows.insert(rows.end(), neg.begin(), neg.end());
    std::sort(rows.begin(), rows.end());
    return rows;
  }

  // Best tree-based grid point for an indicator (attribution needs trees).
  GbtParams best_gbt_params(const std::string& indicator) const {
    const auto& res = grid_results_.at(indicator);
    const auto& grid = grid_points_.at(indicator);
    if (std::holds_alternative<GbtParams>(grid[res.winner].params))
      return std::get<GbtParams>(grid[res.winner].params);
    double best = -1.0;
    const GbtParams* params = nullptr;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (!std::holds_alternative<GbtParams>(grid[g].params)) continue;
      if (res.points[g].mean_auroc > best) {
        best = res.points[g].mean_auroc;
        params = &std::get<GbtParams>(grid[g].params);
      }
    }
    if (!params) throw std::runtime_error("attribution requires a tree model in the grid");
    return *params;
  }

  void stage_fit() {
    const RowMatrix x = working_matrix();
    std::size_t ind_index = 0;
    for (const auto& indicator : cfg_.indicator_names) {
      const auto all_labels = labels_of(indicator);
      std::vector<int> y(working_rows_.size());
      for (std::size_t i = 0; i < working_rows_.size(); ++i)
        y[i] = all_labels[working_rows_[i]] == 1;
      const auto train_rows =
          balanced_training_rows(y, derive_seed(cfg_.seed, kSeedFit + ind_index));
      RowMatrix xt(train_rows.size(), x.cols);
      std::vector<int> yt(train_rows.size());
      for (std::size_t i = 0; i < train_rows.size(); ++i) {
        yt[i] = y[train_rows[i]];
        for (std::size_t j = 0; j < x.cols; ++j) xt.at(i, j) = x.at(train_rows[i], j);
      }

      GbtParams params = best_gbt_params(indicator);
      params.seed = derive_seed(cfg_.seed, kSeedFit + 500 + ind_index);
      const BoostedEnsemble tree_model = fit_gbt(xt, yt, params);
      nlohmann::json tree_json = ensemble_to_json(tree_model);
      tree_json["kind"] = "gbt";
      tree_json["indicator"] = indicator;
      tree_json["feature_names"] = cfg_.model_features;

      const auto& winner_point = grid_points_.at(indicator)[grid_results_.at(indicator).winner];
      if (std::holds_alternative<GbtParams>(winner_point.params)) {
        model_files_[indicator] = "model_" + indicator + ".json";
        write_text(model_files_[indicator], tree_json.dump() + "\n");
      } else {
        // The overall winner is the linear arm: dump it as the model of
        // record, and keep the best tree model alongside for attribution.
        const auto& lp = std::get<LinearGridParams>(winner_point.params);
        const LinearModel lin = fit_penalized_logit(xt, yt, lp.penalty, lp.c);
        nlohmann::json lj = linear_model_to_json(lin);
        lj["kind"] = "linear";
        lj["indicator"] = indicator;
        lj["feature_names"] = cfg_.model_features;
        write_text("model_" + indicator + ".json", lj.dump() + "\n");
        model_files_[indicator] = "model_" + indicator + "_gbt.json";
        write_text(model_files_[indicator], tree_json.dump() + "\n");
      }
      ++ind_index;
    }
  }

  void stage_explain() {
    const RowMatrix x = working_matrix();
    std::vector<std::string> keys;
    for (std::size_t r : working_rows_) keys.push_back(table_.student_ids[r]);

    for (const auto& indicator : cfg_.indicator_names) {
      // Attribution consumes the serialized model dump, not the in-memory
      // object: the JSON file is the contract between the stages.
      const BoostedEnsemble model = ensemble_from_json(
          load_json((std::filesystem::path(cfg_.output_dir) / model_files_.at(indicator))
                        .string()));
      models_[indicator] = model;
      const ShapMatrix shap =
          compute_shap_matrix(model, x, keys, cfg_.model_features, cfg_.threads);

      std::ostringstream scsv;
      CsvWriter sw(scsv);
      std::vector<std::string> header{"student_id"};
      header.insert(header.end(), cfg_.model_features.begin(), cfg_.model_features.end());
      header.push_back("base_value");
      sw.row(header);
      for (std::size_t i = 0; i < shap.values.rows; ++i) {
        std::vector<std::string> row{keys[i]};
        for (std::size_t j = 0; j < shap.values.cols; ++j)
          row.push_back(format_double(shap.values.at(i, j)));
        row.push_back(format_double(shap.base_value));
        sw.row(row);
      }
      write_text("shap_" + indicator + ".csv", scsv.str());

      const ImportanceRanking ranking = global_importance(shap, cfg_.top_n);
      std::ostringstream icsv;
      CsvWriter iw(icsv);
      iw.row({"rank", "feature", "mean_abs_shap"});
      ImportanceBarData bar;
      bar.title = indicator + ": ranked mean |SHAP|";
      for (std::size_t i = 0; i < ranking.names.size(); ++i) {
        iw.row({std::to_string(i + 1), ranking.names[i], format_double(ranking.mean_abs_shap[i])});
        bar.bars.emplace_back(ranking.names[i], ranking.mean_abs_shap[i]);
      }
      write_text("importance_" + indicator + ".csv", icsv.str());
      write_text("importance_" + indicator + ".svg", render_svg(bar));

      std::vector<std::size_t> bee_feats;
      if (cfg_.beeswarm_features.empty()) {
        const auto full = global_importance(shap, std::min<std::size_t>(10, x.cols));
        bee_feats = full.order;
      } else {
        for (const auto& name : cfg_.beeswarm_features) {
          for (std::size_t j = 0; j < cfg_.model_features.size(); ++j)
            if (cfg_.model_features[j] == name) bee_feats.push_back(j);
        }
      }
      const auto points = beeswarm_export(shap, x, bee_feats);
      std::ostringstream bcsv;
      CsvWriter bw(bcsv);
      bw.row({"student_id", "feature", "shap", "raw", "color", "missing", "jitter"});
      for (const auto& p : points) {
        bw.row({keys[p.row], cfg_.model_features[p.feature], format_double(p.shap),
                p.missing ? "" : format_double(p.raw), format_double(p.color),
                p.missing ? "1" : "0", format_double(p.jitter)});
      }
      write_text("beeswarm_" + indicator + ".csv", bcsv.str());
      BeeswarmData bee;
      bee.title = indicator + ": SHAP beeswarm";
      for (std::size_t j : bee_feats) bee.feature_names.push_back(cfg_.model_features[j]);
      bee.points = points;
      for (auto& p : bee.points) {  // band index within the selected features
        for (std::size_t k = 0; k < bee_feats.size(); ++k)
          if (bee_feats[k] == p.feature) {
            p.feature = k;
            break;
          }
      }
      write_text("beeswarm_" + indicator + ".svg", render_svg(bee));

      const LocalProfiles profiles = local_profiles(shap, x, cfg_.local_top_k);
      std::ostringstream lcsv;
      CsvWriter lw(lcsv);
      lw.row({"profile", "student_id", "total_shap", "rank", "feature", "shap", "raw"});
      auto write_profile = [&](const char* which, const LocalProfile& p) {
        for (std::size_t i = 0; i < p.top.size(); ++i) {
          lw.row({which, p.row_key, format_double(p.total), std::to_string(i + 1),
                  p.top[i].name, format_double(p.top[i].shap),
                  p.top[i].missing ? "" : format_double(p.top[i].raw)});
        }
      };
      write_profile("max", profiles.max_profile);
      write_profile("min", profiles.min_profile);
      write_text("local_profiles_" + indicator + ".csv", lcsv.str());
      auto profile_svg = [&](const char* which, const LocalProfile& p) {
        LocalProfileData d;
        d.title = indicator + " " + which + " profile (" + p.row_key +
                  ", total=" + format_double(p.total) + ")";
        for (const auto& e : p.top)
          d.entries.emplace_back(e.name, e.shap, e.missing ? "missing" : format_double(e.raw));
        write_text("local_profile_" + indicator + "_" + which + ".svg", render_svg(d));
      };
      profile_svg("max", profiles.max_profile);
      profile_svg("min", profiles.min_profile);

      for (const auto& student : cfg_.interaction_rows) {
        std::size_t row = keys.size();
        for (std::size_t i = 0; i < keys.size(); ++i)
          if (keys[i] == student) {
            row = i;
            break;
          }
        if (row == keys.size())
          throw std::runtime_error("interaction row not in working sample: " + student);
        const RowMatrix tensor = shap_interactions(model, x.row(row));
        std::ostringstream tcsv;
        CsvWriter tw(tcsv);
        std::vector<std::string> th{"feature"};
        th.insert(th.end(), cfg_.model_features.begin(), cfg_.model_features.end());
        tw.row(th);
        for (std::size_t i = 0; i < tensor.rows; ++i) {
          std::vector<std::string> row_cells{cfg_.model_features[i]};
          for (std::size_t j = 0; j < tensor.cols; ++j)
            row_cells.push_back(format_double(tensor.at(i, j)));
          tw.row(row_cells);
        }
        write_text("interactions_" + indicator + "_" + student + ".csv", tcsv.str());
      }
    }
  }

  void stage_depend() {
    const RowMatrix x = working_matrix();
    for (const auto& indicator : cfg_.indicator_names) {
      const BoostedEnsemble& model = models_.at(indicator);
      for (const auto& feature : cfg_.dependence_features) {
        std::size_t col = cfg_.model_features.size();
        for (std::size_t j = 0; j < cfg_.model_features.size(); ++j)
          if (cfg_.model_features[j] == feature) col = j;
        if (col == cfg_.model_features.size())
          throw std::runtime_error("dependence feature not among model features: " + feature);
        const PdpCurve curve =
            partial_dependence(model, x, col, feature, {}, cfg_.threads);

        std::ostringstream csv;
        CsvWriter w(csv);
        w.row({"feature", "grid_value", "f_s", "rp", "or", "or_unbounded", "baseline"});
        for (std::size_t g = 0; g < curve.grid.size(); ++g) {
          w.row({feature, format_double(curve.grid[g]), format_double(curve.f_s[g]),
                 format_double(curve.rp[g]),
                 curve.odds_unbounded[g] ? "" : format_double(curve.odds_ratio[g]),
                 curve.odds_unbounded[g] ? "1" : "0", format_double(curve.baseline)});
        }
        write_text("pdp_" + indicator + "_" + feature + ".csv", csv.str());

        PdpCurveData plot;
        plot.title = indicator + " vs " + feature +
                     " (reference p=" + format_double(curve.reference_probability) + ")";
        plot.x_label = feature;
        plot.y_label = "odds ratio (OR)";
        plot.x = curve.grid;
        plot.y = curve.odds_ratio;
        write_text("pdp_" + indicator + "_" + feature + ".svg", render_svg(plot));
      }
    }
  }

  void stage_subsample() {
    std::ostringstream sumcsv;
    CsvWriter sw(sumcsv);
    sw.row({"indicator", "comparison", "n_common", "spearman_rho", "p_value", "status"});

    std::size_t cmp_index = 0;
    for (const auto& cmp : cfg_.comparisons) {
      const int col = table_.feature_index(cmp.feature);
      std::size_t ind_index = 0;
      for (const auto& indicator : cfg_.indicator_names) {
        const auto arm = [&](double value, std::uint64_t seed)
            -> std::optional<std::pair<ImportanceRanking, ShapMatrix>> {
          std::vector<std::size_t> rows;  // indices into working_rows_
          for (std::size_t i = 0; i < working_rows_.size(); ++i) {
            const std::size_t r = working_rows_[i];
            if (!table_.is_missing(r, col) && table_.value(r, col) == value) rows.push_back(i);
          }
          const auto all_labels = labels_of(indicator);
          std::vector<int> y(rows.size());
          bool pos = false, neg = false;
          for (std::size_t i = 0; i < rows.size(); ++i) {
            y[i] = all_labels[working_rows_[rows[i]]] == 1;
            (y[i] ? pos : neg) = true;
          }
          if (rows.size() < 10 || !pos || !neg) return std::nullopt;
          const RowMatrix full = working_matrix();
          RowMatrix xa(rows.size(), full.cols);
          std::vector<std::string> keys;
          for (std::size_t i = 0; i < rows.size(); ++i) {
            keys.push_back(table_.student_ids[working_rows_[rows[i]]]);
            for (std::size_t j = 0; j < full.cols; ++j) xa.at(i, j) = full.at(rows[i], j);
          }
          const auto train = balanced_training_rows(y, seed);
          RowMatrix xt(train.size(), xa.cols);
          std::vector<int> yt(train.size());
          for (std::size_t i = 0; i < train.size(); ++i) {
            yt[i] = y[train[i]];
            for (std::size_t j = 0; j < xa.cols; ++j) xt.at(i, j) = xa.at(train[i], j);
          }
          GbtParams params = best_gbt_params(indicator);
          params.seed = derive_seed(seed, 1);
          const BoostedEnsemble model = fit_gbt(xt, yt, params);
          const ShapMatrix shap =
              compute_shap_matrix(model, xa, keys, cfg_.model_features, cfg_.threads);
          return std::pair{global_importance(shap), shap};
        };

        const std::uint64_t base =
            derive_seed(cfg_.seed, kSeedSubsample + cmp_index * 8 + ind_index * 2);
        const auto arm_a = arm(cmp.value_a, base);
        const auto arm_b = arm(cmp.value_b, derive_seed(base, 1));
        if (!arm_a || !arm_b) {
          sw.row({indicator, cmp.name, "0", "", "", "skipped: degenerate arm"});
          ++ind_index;
          continue;
        }
        const auto& rank_a = arm_a->first;
        const auto& rank_b = arm_b->first;

        // Intersection of the two top-25 sets, ordered by arm A rank.
        const std::size_t top = 25;
        std::set<std::size_t> a_set(rank_a.order.begin(),
                                    rank_a.order.begin() +
                                        std::min(top, rank_a.order.size()));
        std::set<std::size_t> b_set(rank_b.order.begin(),
                                    rank_b.order.begin() +
                                        std::min(top, rank_b.order.size()));
        std::vector<std::size_t> common;
        for (std::size_t j : rank_a.order)
          if (a_set.count(j) && b_set.count(j)) common.push_back(j);

        auto mean_abs_of = [&](const ImportanceRanking& r, std::size_t feature) {
          for (std::size_t i = 0; i < r.order.size(); ++i)
            if (r.order[i] == feature) return r.mean_abs_shap[i];
          return 0.0;
        };
        auto rank_of = [&](const ImportanceRanking& r, std::size_t feature) {
          for (std::size_t i = 0; i < r.order.size(); ++i)
            if (r.order[i] == feature) return i + 1;
          return r.order.size() + 1;
        };

        std::ostringstream pcsv;
        CsvWriter pw(pcsv);
        pw.row({"feature", "mean_abs_shap_a", "rank_a", "mean_abs_shap_b", "rank_b"});
        PairedImportanceData plot;
        plot.title = indicator + ": " + cmp.name;
        plot.left_label = cmp.label_a;
        plot.right_label = cmp.label_b;
        std::vector<double> va, vb;
        for (std::size_t j : common) {
          const double a_val = mean_abs_of(rank_a, j);
          const double b_val = mean_abs_of(rank_b, j);
          va.push_back(a_val);
          vb.push_back(b_val);
          pw.row({cfg_.model_features[j], format_double(a_val),
                  std::to_string(rank_of(rank_a, j)), format_double(b_val),
                  std::to_string(rank_of(rank_b, j))});
          plot.rows.emplace_back(cfg_.model_features[j], a_val, b_val);
        }
        write_text("paired_importance_" + indicator + "_" + cmp.name + ".csv", pcsv.str());
        write_text("paired_importance_" + indicator + "_" + cmp.name + ".svg",
                   render_svg(plot));

        if (common.size() >= 3) {
          const SpearmanResult rho = spearman(va, vb);
          sw.row({indicator, cmp.name, std::to_string(common.size()),
                  rho.defined ? format_double(rho.rho) : "",
                  rho.defined ? format_double(rho.p) : "",
                  rho.defined ? "ok" : "undefined: zero rank variance"});
        } else {
          sw.row({indicator, cmp.name, std::to_string(common.size()), "", "",
                  "skipped: fewer than 3 common features"});
        }
        ++ind_index;
      }
      ++cmp_index;
    }
    write_text("subsample_spearman.csv", sumcsv.str());
  }

  void stage_report() {
    std::vector<Artifact> sorted = artifacts_;
    std::sort(sorted.begin(), sorted.end(),
              [](const Artifact& a, const Artifact& b) { return a.path < b.path; });
    nlohmann::json j;
    j["seed"] = cfg_.seed;
    j["artifacts"] = nlohmann::json::array();
    for (const auto& a : sorted)
      j["artifacts"].push_back({{"path", a.path}, {"bytes", a.bytes}, {"hash", a.hash}});
    write_text("manifest.json", j.dump(2) + "\n");
  }

  static std::string table_csv(const FeatureTable& t) {
    std::ostringstream out;
    CsvWriter w(out);
    std::vector<std::string> header{"student_id", "school_id", "country_id", "weight"};
    for (const auto& f : t.schema) header.push_back(f.name);
    if (t.scores) {
      header.push_back("pv_math");
      header.push_back("pv_read");
      header.push_back("pv_scie");
    }
    w.row(header);
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
      std::vector<std::string> row{t.student_ids[r], t.school_names[t.school_of_row[r]],
                                   t.country_names[t.country_of_row[r]],
                                   format_double(t.weights[r])};
      for (std::size_t j = 0; j < t.schema.size(); ++j)
        row.push_back(t.is_missing(r, j) ? "" : format_double(t.value(r, j)));
      if (t.scores) {
        row.push_back(format_double(t.scores->math[r]));
        row.push_back(format_double(t.scores->reading[r]));
        row.push_back(format_double(t.scores->science[r]));
      }
      w.row(row);
    }
    return out.str();
  }

  PipelineConfig cfg_;
  std::vector<FeatureSpec> schema_;
  FeatureTable table_;
  SarLabelSet labels_;
  SchoolInequality inequality_;
  MultilevelFit fit_;
  std::vector<std::size_t> working_rows_;
  std::vector<int> model_cols_;
  std::map<std::string, GridSearchResult> grid_results_;
  std::map<std::string, std::vector<GridPoint>> grid_points_;
  std::map<std::string, BoostedEnsemble> models_;
  std::map<std::string, std::string> model_files_;
  std::vector<Artifact> artifacts_;
  std::set<Stage> done_;
};

}  // namespace sarlab
