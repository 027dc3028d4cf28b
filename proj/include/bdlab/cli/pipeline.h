#ifndef BDLAB_CLI_PIPELINE_H_
#define BDLAB_CLI_PIPELINE_H_

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "bdlab/cli/config.h"

namespace bdlab {

enum class Stage {
  kPrepareData,
  kTrainSurrogate,
  kGenTrigger,
  kPoison,
  kTrainVictim,
  kEvaluate,
  kDefend,
  kChannelSim,
  kReport,
};

const char* stage_name(Stage s);
// Accepts the subcommand spelling, e.g. "gen-trigger".
std::optional<Stage> parse_stage(const std::string& name);
// Stages the given stage reads from.
std::vector<Stage> stage_inputs(Stage s);

class StageFailure : public std::runtime_error {
 public:
  StageFailure(Stage s, const std::string& what);
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

struct StageOutcome {
  Stage stage;
  bool reused = false;
  std::string digest;
  double seconds = 0.0;
  nlohmann::json metrics;
};

// One experiment's artifact tree. Each stage writes into its own
// subdirectory and finishes by writing stage.json with its digest; a stage
// whose stage.json digest matches is reused instead of rerun.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, std::filesystem::path out, std::ostream* log = nullptr);

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& out() const { return out_; }

  // Order of a full run: the six core stages, then defend and channel-sim
  // when enabled, then report.
  std::vector<Stage> plan() const;
  // Hash of the config slice a stage reads plus the digests of its inputs.
  std::string stage_digest(Stage s) const;
  bool is_current(Stage s) const;

  // Runs one stage; its inputs must already be current.
  StageOutcome run_stage(Stage s, bool force = false);
  // Runs the plan in order, stopping after `until` when given.
  std::vector<StageOutcome> run(std::optional<Stage> until = {}, bool force = false);

  std::filesystem::path stage_dir(Stage s) const;

 private:
  nlohmann::json execute(Stage s);

  ExperimentConfig cfg_;
  std::filesystem::path out_;
  std::ostream* log_;
  mutable std::map<Stage, std::string> digests_;
};

struct SweepPoint {
  std::string name;
  std::map<std::string, nlohmann::json> assignment;
  ExperimentConfig config;
};

// Cartesian product of cfg.sweep; every point gets an isolated
// subdirectory of `out`/sweep.
std::vector<SweepPoint> expand_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out);
// Runs every point (up to `jobs` at a time) and writes sweep/summary.json
// and sweep/summary.csv. Returns the number of failed points.
int run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out, int jobs,
              std::ostream* log = nullptr);

// Writes config.resolved.json at the root of `out`.
void write_resolved_config(const ExperimentConfig& cfg, const std::filesystem::path& out);

}  // namespace bdlab

#endif  // BDLAB_CLI_PIPELINE_H_
