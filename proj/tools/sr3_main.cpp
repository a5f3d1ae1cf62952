// sr3 command-line entry point: preprocess, train, sample, evaluate, eda.

#include <CLI11.hpp>

#include <iostream>

#include "sr3/commands.hpp"
#include "sr3/errors.hpp"

namespace {

// Unrecognised "--key value" / "--key=value" pairs become config overrides.
sr3::KeyValues overrides_from(const std::vector<std::string>& extras) {
  sr3::KeyValues out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw sr3::ConfigError("unexpected argument '" + arg + "'");
    const std::string body = arg.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < extras.size()) {
      out.emplace_back(body, extras[++i]);
    } else {
      throw sr3::ConfigError("missing value for '" + arg + "'");
    }
  }
  return out;
}

struct CommonFlags {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  bool toy = false;
  std::optional<long> iters;
  std::optional<int> steps;
  std::string out;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "Flat key = value configuration file");
    app->add_option("--preset", preset, "gen1 | gen2");
    app->add_option("--seed", seed, "Random seed");
    app->add_flag("--toy", toy, "Use the synthetic toy corpus at desk scale");
    app->add_option("--iters", iters, "Training iterations");
    app->add_option("--steps", steps, "Reverse steps for sampling (0 = full schedule)");
    app->add_option("--out", out, "Output directory");
    app->allow_extras();
  }

  sr3::RunConfig resolve(const CLI::App* app) const {
    auto overrides = overrides_from(app->remaining());
    if (seed) overrides.emplace_back("seed", std::to_string(*seed));
    if (iters) overrides.emplace_back("train.total_iters", std::to_string(*iters));
    if (steps) overrides.emplace_back("sample.steps", std::to_string(*steps));
    if (!out.empty()) overrides.emplace_back("out", out);
    return sr3::resolve_config(preset, toy, config, overrides);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional diffusion super-resolution"};
  app.require_subcommand(1);

  CommonFlags common;
  std::string raw_dir, resume, checkpoint, input, sr_dir, hr_dir, triplet_dir;

  auto* preprocess = app.add_subcommand("preprocess", "Clean raw images and build the corpus layout");
  common.attach(preprocess);
  preprocess->add_option("raw_dir", raw_dir, "Directory of raw images (first level = class label)")
      ->required();

  auto* train = app.add_subcommand("train", "Train the denoiser");
  common.attach(train);
  train->add_option("--resume", resume, "Checkpoint to continue from");

  auto* sample = app.add_subcommand("sample", "Super-resolve LR images with a checkpoint");
  common.attach(sample);
  sample->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  sample->add_option("--input", input, "LR image or directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "PSNR/SSIM of SR images against HR images");
  common.attach(evaluate);
  evaluate->add_option("sr_dir", sr_dir)->required();
  evaluate->add_option("hr_dir", hr_dir)->required();

  auto* eda = app.add_subcommand("eda", "Metrics and brightness/contrast histograms of triplets");
  common.attach(eda);
  eda->add_option("triplet_dir", triplet_dir, "Directory with lr/, sr/, hr/ subdirectories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? sr3::kExitOk : sr3::kExitConfig;
  }

  try {
    if (preprocess->parsed()) {
      const auto cfg = common.resolve(preprocess);
      sr3::cmd_preprocess(raw_dir, cfg.out, cfg, std::cout);
    } else if (train->parsed()) {
      const auto cfg = common.resolve(train);
      sr3::cmd_train(cfg, std::cout, resume);
    } else if (sample->parsed()) {
      const auto cfg = common.resolve(sample);
      sr3::SampleOptions options{checkpoint, input, cfg.out, cfg.seed, cfg.sample_steps};
      sr3::cmd_sample(options, std::cout);
    } else if (evaluate->parsed()) {
      const auto cfg = common.resolve(evaluate);
      std::cout << "evaluate.sr_dir = " << sr_dir << "\nevaluate.hr_dir = " << hr_dir
                << "\nout = " << cfg.out << "\n";
      sr3::cmd_evaluate(sr_dir, hr_dir, cfg.out, std::cout);
    } else if (eda->parsed()) {
      const auto cfg = common.resolve(eda);
      std::cout << "eda.triplet_dir = " << triplet_dir << "\nout = " << cfg.out << "\n";
      sr3::cmd_eda(triplet_dir, cfg.out, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return sr3::exit_code_for(e);
  }
  return sr3::kExitOk;
}
