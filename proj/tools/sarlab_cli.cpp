// Command-line front end for the resilience-indicator pipeline. Subcommands
// execute the pipeline through the named stage; `run` executes everything and
// writes the artifact manifest; `report` hashes an existing output directory.
//
// Exit codes: 0 success, 2 config validation failure, 3 stage failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sarlab/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
};

void attach_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "pipeline config JSON")->required();
  cmd->add_option("--seed", flags.seed, "master seed (overrides config)");
  cmd->add_option("--out", flags.out_dir, "output directory (overrides config)");
  cmd->add_option("--threads", flags.threads, "worker threads (overrides config)");
}

int run_stage(const CommonFlags& flags, sarlab::Stage target) {
  sarlab::PipelineConfig cfg;
  try {
    cfg = sarlab::load_pipeline_config(flags.config_path);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.out_dir) cfg.output_dir = *flags.out_dir;
    if (flags.threads) cfg.threads = *flags.threads;
    sarlab::Pipeline pipeline(std::move(cfg));
    pipeline.run_through(target);
    std::cout << "wrote " << pipeline.artifacts().size() << " artifact(s)\n";
    return 0;
  } catch (const sarlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const sarlab::StageError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"academic-resilience modeling and attribution pipeline"};
  app.require_subcommand(1);

  struct SubcommandSpec {
    const char* name;
    const char* help;
    sarlab::Stage stage;
  };
  static const SubcommandSpec specs[] = {
      {"synth", "generate synthetic survey data", sarlab::Stage::kIngest},
      {"indicators", "build SAR1-SAR4 labels and the rates table", sarlab::Stage::kIndicators},
      {"summarize", "group summaries by resilience status", sarlab::Stage::kSummarize},
      {"grid-search", "cross-validated hyperparameter search", sarlab::Stage::kGridSearch},
      {"fit", "train the final per-indicator models", sarlab::Stage::kFit},
      {"explain", "SHAP matrices, rankings, beeswarm and local profiles",
       sarlab::Stage::kExplain},
      {"depend", "partial-dependence / odds-ratio curves", sarlab::Stage::kDepend},
      {"subsample", "paired importance across school sub-systems", sarlab::Stage::kSubsample},
      {"run", "all stages plus the artifact manifest", sarlab::Stage::kReport},
  };

  static std::vector<CommonFlags> flags(std::size(specs));
  int exit_code = 0;
  for (std::size_t i = 0; i < std::size(specs); ++i) {
    auto* cmd = app.add_subcommand(specs[i].name, specs[i].help);
    attach_common(cmd, flags[i]);
    const sarlab::Stage stage = specs[i].stage;
    cmd->callback([&, i, stage] { exit_code = run_stage(flags[i], stage); });
  }

  static std::string report_dir;
  auto* report = app.add_subcommand("report", "write a manifest for an existing output dir");
  report->add_option("--out", report_dir, "output directory to hash")->required();
  report->callback([&] {
    try {
      const std::string manifest = sarlab::Pipeline::manifest_existing(report_dir);
      std::ofstream out(std::filesystem::path(report_dir) / "manifest.json", std::ios::binary);
      out << manifest;
      std::cout << "wrote manifest.json\n";
      exit_code = 0;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      exit_code = 3;
    }
  });

  CLI11_PARSE(app, argc, argv);
  return exit_code;
}
