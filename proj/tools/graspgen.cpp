// graspgen: command-line driver for the data -> generator -> discriminator
// -> evaluation recipe. See README.md for the config format.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "graspgen/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kMissingDependency = 3, kNumericFailure = 4 };

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> top_k;
  std::optional<double> threshold;
  bool quiet = false;
};

graspgen::PipelineConfig load(const Options& o) {
  graspgen::PipelineConfig cfg = graspgen::load_pipeline_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.batch) cfg.sample_batch = *o.batch;
  if (o.top_k) cfg.top_k = *o.top_k;
  if (o.threshold) cfg.threshold = *o.threshold;
  try {
    cfg.validate();
  } catch (const graspgen::Error& e) {
    throw graspgen::ConfigError(0, std::string("command-line override: ") + e.what());
  }
  return cfg;
}

int run(const Options& o, const std::function<void(graspgen::Pipeline&)>& body) {
  try {
    graspgen::Pipeline p(load(o), [&](const std::string& msg) {
      if (!o.quiet) std::fprintf(stderr, "%s\n", msg.c_str());
    });
    body(p);
    return kOk;
  } catch (const graspgen::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const graspgen::MissingStage& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMissingDependency;
  } catch (const graspgen::FormatError& e) {
    std::fprintf(stderr, "error: unreadable artifact: %s\n", e.what());
    return kMissingDependency;
  } catch (const graspgen::OptimizerError& e) {
    std::fprintf(stderr, "error: numeric failure in '%s': %s\n", e.param().c_str(), e.what());
    return kNumericFailure;
  } catch (const graspgen::DegenerateExtent& e) {
    std::fprintf(stderr, "error: numeric failure: %s\n", e.what());
    return kNumericFailure;
  } catch (const graspgen::DegenerateLabels& e) {
    std::fprintf(stderr, "error: numeric failure: %s\n", e.what());
    return kNumericFailure;
  } catch (const graspgen::InvalidInput& e) {
    std::fprintf(stderr, "error: invalid input: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graspgen: diffusion grasp generation recipe on analytic-oracle toy data"};
  app.require_subcommand(1);
  Options opt;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config_path, "pipeline config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "base seed for every stage without an explicit seed");
    sub->add_flag("-q,--quiet", opt.quiet, "suppress progress messages");
  };
  const auto sampling = [&](CLI::App* sub) {
    sub->add_option("--batch", opt.batch, "grasps sampled per object before filtering");
    sub->add_option("--top-k", opt.top_k, "keep at most this many grasps after thresholding");
    sub->add_option("--threshold", opt.threshold, "discriminator score threshold in [0, 1]");
  };

  struct Command {
    const char* name;
    const char* help;
    graspgen::Stage stage;
    bool sampling;
  };
  const Command commands[] = {
      {"gen-data", "build the object suites and offline oracle-labeled grasp datasets", graspgen::Stage::Data, false},
      {"train-gen", "compute kappa and train the diffusion generator", graspgen::Stage::Generator, false},
      {"build-ongen", "sample and label the on-generator dataset", graspgen::Stage::OnGenerator, false},
      {"train-disc", "train the discriminator head on the frozen encoder", graspgen::Stage::Discriminator, false},
      {"sample", "sample, score and filter grasps for the held-out objects", graspgen::Stage::Sample, true},
      {"eval", "precision-coverage curves, AUC and pose errors of the sampled grasps", graspgen::Stage::Eval, true},
      {"emd", "EMD between on-generator and offline negatives", graspgen::Stage::Emd, false},
      {"sweep", "threshold x batch-size tuning sweep", graspgen::Stage::Sweep, false},
  };
  graspgen::Stage chosen = graspgen::Stage::Data;
  bool all = false;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    common(sub);
    if (c.sampling) sampling(sub);
    sub->callback([&chosen, s = c.stage] { chosen = s; });
  }
  CLI::App* run_all = app.add_subcommand("run-all", "run every stage that is not already up to date");
  common(run_all);
  sampling(run_all);
  run_all->callback([&all] { all = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  return run(opt, [&](graspgen::Pipeline& p) {
    if (all) {
      p.run_all();
    } else {
      p.run(chosen);
    }
    std::fprintf(stdout, "%s\n", all ? p.out_dir().string().c_str() : p.stage_dir(chosen).string().c_str());
  });
}
