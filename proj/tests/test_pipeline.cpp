#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "sarlab/pipeline.hpp"

using namespace sarlab;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config(const std::string& out_dir) {
  PipelineConfig cfg;
  cfg.has_synth = true;
  cfg.synth.countries = 3;
  cfg.synth.schools_per_country = 8;
  cfg.synth.students_per_school = 25;
  cfg.synth.beta0 = 0.2;
  cfg.synth.beta_ses = 0.45;
  cfg.synth.beta_school_ses = 0.2;
  cfg.synth.sigma2_school = 1.0;
  cfg.synth.sigma2_country = 0.2;
  cfg.synth.feature_effects = {{"StudBKGD_Gender", 0.5},
                               {"StudBKGD_RepePrim", -0.8},
                               {"CovidBKGD_Closeddays", -0.004}};
  cfg.synth.missing_rate = 0.02;
  cfg.folds = 3;
  GbtParams g;
  g.n_trees = 25;
  g.learning_rate = 0.3;
  g.max_depth = 3;
  cfg.grid.push_back({"gbt", g});
  cfg.grid.push_back({"linear", LinearGridParams{}});
  cfg.indicator_names = {"SAR1", "SAR2"};
  cfg.comparisons.push_back({"urban-rural", "SchBKGD_Urban", 1.0, 0.0, "urban", "rural"});
  cfg.local_top_k = 6;
  cfg.seed = 11;
  cfg.threads = 2;
  cfg.output_dir = out_dir;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("full pipeline run is deterministic for a fixed seed") {
  TempDir a("sarlab_test_run_a"), b("sarlab_test_run_b");
  {
    Pipeline p(small_config(a.path.string()));
    p.run_through(Stage::kReport);
  }
  {
    Pipeline p(small_config(b.path.string()));
    p.run_through(Stage::kReport);
  }
  const std::string ma = slurp(a.path / "manifest.json");
  const std::string mb = slurp(b.path / "manifest.json");
  CHECK(ma == mb);
  CHECK(ma.find("\"artifacts\"") != std::string::npos);

  SECTION("a different seed changes artifact hashes") {
    TempDir c("sarlab_test_run_c");
    auto cfg = small_config(c.path.string());
    cfg.seed = 12;
    Pipeline p(std::move(cfg));
    p.run_through(Stage::kReport);
    CHECK(slurp(c.path / "manifest.json") != ma);
  }
}

TEST_CASE("config validation fails fast, before any stage runs") {
  TempDir dir("sarlab_test_validate");

  SECTION("unknown dependence feature") {
    auto cfg = small_config(dir.path.string());
    cfg.dependence_features = {"NoSuchFeature"};
    cfg.dependence_features_explicit = true;
    CHECK_THROWS_AS(Pipeline(std::move(cfg)), ConfigError);
    CHECK(fs::is_empty(dir.path));  // nothing was written
  }
  SECTION("input and synth are mutually exclusive") {
    auto cfg = small_config(dir.path.string());
    cfg.has_input = true;
    cfg.data_csv = "/nonexistent.csv";
    cfg.schema_json = "/nonexistent.json";
    CHECK_THROWS_AS(Pipeline(std::move(cfg)), ConfigError);
  }
  SECTION("neither input nor synth") {
    PipelineConfig cfg;
    cfg.output_dir = dir.path.string();
    CHECK_THROWS_AS(Pipeline(std::move(cfg)), ConfigError);
  }
  SECTION("unknown indicator name") {
    auto cfg = small_config(dir.path.string());
    cfg.indicator_names = {"SAR9"};
    CHECK_THROWS_AS(Pipeline(std::move(cfg)), ConfigError);
  }
}

TEST_CASE("emitted data.csv loads back into an identical table") {
  TempDir dir("sarlab_test_roundtrip");
  auto cfg = small_config(dir.path.string());
  Pipeline p(std::move(cfg));
  p.run_through(Stage::kIngest);
  const FeatureTable& original = p.table();

  LoadOptions opt;
  opt.weight_column = "weight";
  const FeatureTable back =
      load_table_file((dir.path / "data.csv").string(), synth_schema(), opt);
  REQUIRE(back.n_rows() == original.n_rows());
  CHECK(back.student_ids == original.student_ids);
  CHECK(back.missing == original.missing);
  for (std::size_t i = 0; i < back.values.size(); ++i) {
    if (std::isnan(original.values[i]))
      CHECK(std::isnan(back.values[i]));
    else
      CHECK(back.values[i] == original.values[i]);
  }
  REQUIRE(back.scores.has_value());
  CHECK(back.scores->math == original.scores->math);
}

TEST_CASE("pipeline config JSON round-trips through the parser") {
  const std::string text = R"({
    "synth": {"countries": 2, "schools_per_country": 4, "students_per_school": 10,
              "feature_effects": {"StudBKGD_Gender": 0.4}},
    "model": {"folds": 3, "indicators": ["SAR1"],
              "grid": [{"kind": "gbt", "n_trees": 10},
                        {"kind": "linear", "penalty": "l1", "c": 0.5}]},
    "explain": {"top_n": 5, "dependence_features": ["StudBKGD_Curiosity"]},
    "subsample": {"comparisons": [{"feature": "SchBKGD_Private"}]},
    "seed": 3
  })";
  const auto cfg = pipeline_config_from_json(nlohmann::json::parse(text));
  CHECK(cfg.has_synth);
  CHECK_FALSE(cfg.has_input);
  CHECK(cfg.synth.countries == 2);
  CHECK(cfg.synth.feature_effects.size() == 1);
  CHECK(cfg.folds == 3);
  REQUIRE(cfg.grid.size() == 2);
  CHECK(std::holds_alternative<GbtParams>(cfg.grid[0].params));
  CHECK(std::get<LinearGridParams>(cfg.grid[1].params).penalty == PenaltyKind::kL1);
  CHECK(cfg.indicator_names == std::vector<std::string>{"SAR1"});
  CHECK(cfg.dependence_features == std::vector<std::string>{"StudBKGD_Curiosity"});
  CHECK(cfg.comparisons.size() == 1);
  CHECK(cfg.seed == 3);

  CHECK_THROWS_AS(
      pipeline_config_from_json(nlohmann::json::parse(
          R"({"synth": {}, "model": {"grid": [{"kind": "mystery"}]}})")),
      ConfigError);
}

TEST_CASE("svg rendering contracts") {
  SECTION("empty data yields a valid no-data document") {
    ImportanceBarData empty;
    empty.title = "empty";
    const std::string svg = render_svg(PlotData{empty});
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("no data") != std::string::npos);
    CHECK(svg.rfind("</svg>\n") == svg.size() - 7);
  }
  SECTION("same data renders byte-identically") {
    PdpCurveData d;
    d.title = "curve";
    d.x = {1, 2, 3};
    d.y = {0.9, 1.0, 1.3};
    CHECK(render_svg(PlotData{d}) == render_svg(PlotData{d}));
  }
  SECTION("importance bar draws one descending bar per feature") {
    ImportanceBarData d;
    d.title = "bars";
    for (int i = 0; i < 25; ++i)
      d.bars.emplace_back("f" + std::to_string(i), 25.0 - i);
    const std::string svg = render_svg(PlotData{d});
    std::size_t count = 0, pos = 0;
    double prev_width = 1e18;
    bool descending = true;
    while ((pos = svg.find("fill=\"#4c78a8\"", pos)) != std::string::npos) {
      const std::size_t w = svg.rfind("width=\"", pos);
      const double width = std::stod(svg.substr(w + 7));
      descending = descending && width <= prev_width;
      prev_width = width;
      ++count;
      ++pos;
    }
    CHECK(count == 25);
    CHECK(descending);
  }
  SECTION("beeswarm rejects out-of-range feature bands") {
    BeeswarmData d;
    d.title = "bad";
    d.feature_names = {"a"};
    BeeswarmPoint p;
    p.feature = 3;
    d.points.push_back(p);
    CHECK_THROWS(render_svg(PlotData{d}));
  }
}

TEST_CASE("stage failures carry the stage name") {
  TempDir dir("sarlab_test_stagefail");
  auto cfg = small_config(dir.path.string());
  cfg.interaction_rows = {"not_a_student"};
  Pipeline p(std::move(cfg));
  try {
    p.run_through(Stage::kExplain);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage_name == "explain");
    // Artifacts from earlier stages persist.
    CHECK(fs::exists(dir.path / "rates.csv"));
    CHECK(fs::exists(dir.path / "grid_SAR1.csv"));
  }
}
