// Command-line front end: one subcommand per pipeline stage, plus run,
// sweep and config.

#include <omp.h>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "bdlab/cli/config.h"
#include "bdlab/cli/pipeline.h"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kStageFailure = 3;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", c.config, "Experiment config (JSON)");
  if (needs_config) opt->required();
  cmd->add_option("--out", c.out, "Output directory (overrides output_dir)");
  cmd->add_option("--seed", c.seed, "Derive every seed from this value");
  cmd->add_option("--jobs", c.jobs, "Worker threads (sweep: parallel points)")->check(CLI::NonNegativeNumber);
  cmd->add_flag("--force", c.force, "Rerun stages even when their digests match");
}

bdlab::ExperimentConfig resolve(const Common& c) {
  bdlab::ExperimentConfig cfg = bdlab::load_config(c.config);
  if (c.seed) cfg.override_seed(*c.seed);
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void print_outcome(const bdlab::StageOutcome& o) {
  std::cout << bdlab::stage_name(o.stage) << (o.reused ? " reused " : " done ") << o.digest;
  if (!o.reused) std::cout << " (" << o.seconds << " s)";
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio backdoor attack lab"};
  app.require_subcommand(1);
  Common common;

  std::string stage_flag;
  auto* run = app.add_subcommand("run", "Run the whole pipeline (reusing current stages)");
  add_common(run, common);
  run->add_option("--stage", stage_flag, "Stop after this stage");

  auto* sweep = app.add_subcommand("sweep", "Run every grid point of the config's sweep block");
  add_common(sweep, common);

  std::string target = "w0";
  auto* config = app.add_subcommand("config", "Print the default config");
  config->add_option("--target", target, "Target class name");

  std::vector<std::pair<CLI::App*, bdlab::Stage>> stage_cmds;
  for (bdlab::Stage s : {bdlab::Stage::kPrepareData, bdlab::Stage::kTrainSurrogate,
                         bdlab::Stage::kGenTrigger, bdlab::Stage::kPoison,
                         bdlab::Stage::kTrainVictim, bdlab::Stage::kEvaluate,
                         bdlab::Stage::kDefend, bdlab::Stage::kChannelSim,
                         bdlab::Stage::kReport}) {
    auto* cmd = app.add_subcommand(bdlab::stage_name(s), std::string("Run the ") +
                                                          bdlab::stage_name(s) + " stage");
    add_common(cmd, common);
    stage_cmds.emplace_back(cmd, s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  if (config->parsed()) {
    std::cout << bdlab::default_config(target).to_json().dump(2) << "\n";
    return kOk;
  }

  try {
    const bdlab::ExperimentConfig cfg = resolve(common);
    if (common.jobs > 0 && !sweep->parsed()) omp_set_num_threads(common.jobs);

    if (sweep->parsed()) {
      const int failed = bdlab::run_sweep(cfg, cfg.output_dir, std::max(1, common.jobs), &std::cerr);
      std::cout << "sweep finished, " << failed << " failed point(s); summary in "
                << (cfg.output_dir / "sweep" / "summary.csv").string() << "\n";
      return failed == 0 ? kOk : kStageFailure;
    }

    bdlab::Pipeline pipe(cfg, cfg.output_dir, &std::cerr);
    if (run->parsed()) {
      std::optional<bdlab::Stage> until;
      if (!stage_flag.empty()) {
        until = bdlab::parse_stage(stage_flag);
        if (!until) throw bdlab::ConfigError({"--stage: unknown stage '" + stage_flag + "'"});
      }
      for (const auto& o : pipe.run(until, common.force)) print_outcome(o);
      return kOk;
    }
    for (const auto& [cmd, s] : stage_cmds) {
      if (cmd->parsed()) {
        bdlab::write_resolved_config(cfg, cfg.output_dir);
        print_outcome(pipe.run_stage(s, common.force));
        return kOk;
      }
    }
  } catch (const bdlab::ConfigError& e) {
    std::cerr << "config validation failed:\n";
    for (const std::string& p : e.problems()) std::cerr << "  " << p << "\n";
    return kValidation;
  } catch (const bdlab::StageFailure& e) {
    std::cerr << "stage failed: " << e.what() << "\n";
    return kStageFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageFailure;
  }
  return kOk;
}
