#pragma once

// End-to-end experiment pipeline:
//   load or generate -> split -> tasks -> pretrain -> meta-train -> adapt + rank -> metrics
//
// Each stage is exposed separately so tests can wrap the graph the training
// stages read from.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tkgr/error.hpp"
#include "tkgr/kg.hpp"
#include "tkgr/meta.hpp"
#include "tkgr/objective.hpp"
#include "tkgr/params.hpp"
#include "tkgr/synthetic.hpp"

namespace tkgr {

struct ExperimentConfig {
  std::string dataset;                     // TSV path; exclusive with synthetic
  std::optional<SyntheticSpec> synthetic;
  TrainConfig train;
  std::array<double, 4> ratios{0.4, 0.25, 0.1, 0.25};
  Mode mode = Mode::kFull;
  bool filter = true;
  bool time_aware_filter = false;
  bool per_direction = false;
  std::string out_dir;

  // Sets the training seed and, for synthetic data, the generator seed.
  void set_seed(std::uint64_t seed);
  // Throws ConfigError on a missing or doubled dataset source, an unreadable
  // path, or invalid training settings.
  void validate() const;
};

// Flat `key = value` text; '#' starts a comment. Unknown keys are errors.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);

// An error tagged with the pipeline stage it came from.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

TemporalKG load_graph(const ExperimentConfig& config);

struct PreparedData {
  TemporalKG kg;
  SplitAssignment split;
  std::vector<FewShotTask> train_tasks;
  std::vector<FewShotTask> test_tasks;
  std::size_t valid_entities = 0;
  // The full graph minus every task's query facts.
  TemporalKG context;
  std::vector<Quadruple> background_facts;
  std::size_t background_rows = 0;
  std::size_t train_rows = 0;
};

// Builds tasks with config.train.shots / intervals.
PreparedData prepare_data(TemporalKG kg, const ExperimentConfig& config);

struct TrainedModel {
  ModelParams params;
  std::vector<double> pretrain_losses;
  std::vector<LogRecord> log;
};

PretrainResult pretrain_stage(const PreparedData& data, const EventSource& graph, const ExperimentConfig& config);
TrainedModel meta_stage(const PreparedData& data, const EventSource& graph, const PretrainResult& pretrained,
                        const ExperimentConfig& config, MetaObserver* observer = nullptr);

// Adapts to every meta-test entity and ranks its query facts in both
// directions. `params` is extended to the full vocabulary as needed.
std::vector<RankedQuery> evaluate(const PreparedData& data, const EventSource& graph, const ModelParams& params,
                                  const ExperimentConfig& config);

struct ExperimentResult {
  MetricsReport metrics;
  MetricsReport subject_metrics;  // filled when per_direction is set
  MetricsReport object_metrics;
  TrainedModel model;
  double mean_drift = 0.0;
  std::size_t train_tasks = 0;
  std::size_t test_tasks = 0;
};

// Runs every stage and, when out_dir is set, writes metrics.json,
// metrics.csv, train_log.jsonl, checkpoint.json and split.txt. On failure
// throws StageError and leaves no partial outputs behind.
ExperimentResult run_experiment(const ExperimentConfig& config);

struct AblationRow {
  Mode mode = Mode::kFull;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  double mean_drift = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;  // mode-major within each seed
  std::size_t intervals = 0;

  std::vector<AblationRow> of(Mode mode) const;
  double mean_mrr(Mode mode) const;
  std::string to_csv() const;
};

// Runs the four modes on identical data per seed. Pretraining is shared
// across modes of a seed.
AblationTable run_ablation_suite(const ExperimentConfig& config, std::span<const std::uint64_t> seeds);

// Meta-trains with `train_shots` and adapts/evaluates with `test_shots`.
MetricsReport run_cross_shot(const ExperimentConfig& config, std::size_t train_shots, std::size_t test_shots);

}  // namespace tkgr
