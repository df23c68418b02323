#pragma once

// Bi-level meta-training: background pretraining, one-step inner
// adaptation per new entity, the temporal adaptation regularizer, and the
// interval-by-interval outer loop with its ablation modes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tkgr/encoder.hpp"
#include "tkgr/kg.hpp"
#include "tkgr/params.hpp"

namespace tkgr {

enum class OptimizerKind : std::uint8_t { kAdam, kSgd };
enum class Mode : std::uint8_t { kFull, kStaticMaml, kNoRegularizer, kFinetuneOnly };

const char* mode_name(Mode mode) noexcept;
Mode parse_mode(std::string_view name);
const char* optimizer_name(OptimizerKind kind) noexcept;
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  double inner_lr = 1e-4;  // eta
  double outer_lr = 1e-4;  // beta
  double margin = 0.5;     // gamma
  std::size_t shots = 3;
  std::size_t intervals = 3;
  std::size_t budget = 16;
  Timestamp window = 1'000'000'000;
  std::size_t dim = 128;
  std::size_t layers = 1;
  double delta = 0.1;
  double kl_variance = 1.0;  // sigma^2
  std::size_t negatives = 10;
  std::size_t epochs = 50;
  std::size_t batch_size = 20;
  std::uint64_t seed = 0;

  std::size_t inner_steps = 1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t pretrain_epochs = 10;
  double pretrain_lr = 1e-3;
  std::size_t pretrain_batch = 64;
  // Fraction of eligible meta-train entities turned into tasks.
  double task_fraction = 1.0;
  bool filter_negatives = false;
  // Facts at time t are scored from representations at t - history_lag.
  Timestamp history_lag = 1;

  // Throws ConfigError naming the offending field.
  void validate() const;
  EncoderConfig encoder() const { return {layers, budget, window}; }
};

// A positive fact with its negatives fixed in advance, so that a loss over
// examples is a deterministic function of the parameters.
struct TrainingExample {
  Quadruple fact;
  Side corrupt = Side::kObject;
  std::vector<EntityId> negatives;
};

// Corrupts the endpoint opposite `entity` in every fact.
std::vector<TrainingExample> draw_task_examples(std::span<const Quadruple> facts, EntityId entity,
                                                std::size_t num_entities, std::size_t negatives,
                                                std::mt19937_64& rng);

struct LossAndGrad {
  double loss = 0.0;
  ParamArrays grad;
};

// Summed hinge loss over the examples and its gradient.
LossAndGrad example_loss(NeighborCache& neighbors, const ModelParams& params,
                         std::span<const TrainingExample> examples, const TrainConfig& config);
// The same loss through the tape-free encoder.
double example_loss_value(NeighborCache& neighbors, const ModelParams& params,
                          std::span<const TrainingExample> examples, const TrainConfig& config);

// Adam or plain descent over ParamArrays. step() returns the update to add.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr);
  ParamArrays step(const ParamArrays& grad);
  OptimizerKind kind() const noexcept { return kind_; }
  double lr() const noexcept { return lr_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::size_t t_ = 0;
  ParamArrays m_;
  ParamArrays v_;
};

struct PretrainResult {
  ModelParams params;
  std::vector<double> epoch_losses;  // mean hinge loss per fact
};

// Plain margin training over `facts` starting from `init`. The corrupted
// side is a fair coin per example. Throws ArgumentError on empty facts.
PretrainResult pretrain_background(NeighborCache& neighbors, ModelParams init, std::span<const Quadruple> facts,
                                   const TrainConfig& config);

// `steps` gradient steps of size lr on a generic loss; phi is not modified.
// Throws NumericError naming the block if a gradient is not finite.
using GradFn = std::function<ParamArrays(const ParamArrays&)>;
ParamArrays inner_adapt(const ParamArrays& phi, const GradFn& grad, double lr, std::size_t steps);

// One (or inner_steps) gradient steps on the support loss.
ModelParams inner_adapt(const ModelParams& phi, NeighborCache& neighbors,
                        std::span<const TrainingExample> support, const TrainConfig& config);

// ||new - old||^2 / (2 sigma^2)
double kl_point_gaussian(const ParamArrays& phi_new, const ParamArrays& phi_old, double variance);
// sqrt((kl + ln(D / delta)) / (2D - 1))
double regularizer_penalty(double kl, std::size_t d_size, double delta);
// emp_loss + regularizer_penalty(kl, d_size, delta)
double temporal_regularizer(double emp_loss, double kl, std::size_t d_size, double delta);
// Gradient of the penalty with respect to phi_new.
ParamArrays penalty_gradient(const ParamArrays& phi_new, const ParamArrays& phi_old, double variance,
                             std::size_t d_size, double delta);
// Radius r with r * (1 + lr * c(r)) = target, where c(r) is the penalty
// gradient per unit of displacement at distance r. 0 <= r <= target.
double shrink_radius(double target, double lr, double variance, std::size_t d_size, double delta);

struct LogRecord {
  std::size_t epoch = 0;
  std::size_t interval = 0;  // 0 for pooled intervals
  double empirical_loss = 0.0;
  double kl = 0.0;
  double penalty = 0.0;
  double drift = 0.0;
  std::size_t query_facts = 0;
  std::size_t updates = 0;
};

void write_train_log(std::span<const LogRecord> log, std::ostream& out);

class MetaObserver {
 public:
  virtual ~MetaObserver() = default;
  // Query facts (indices into the task's source graph) read for a task.
  virtual void on_query_access(std::size_t /*interval*/, const FewShotTask& /*task*/,
                               std::span<const std::size_t> /*facts*/) {}
  virtual void on_record(const LogRecord& /*record*/) {}
};

struct MetaState {
  ModelParams phi;
  std::size_t interval = 0;
  std::vector<LogRecord> log;
  std::mt19937_64 rng;
  Optimizer optimizer;

  MetaState(ModelParams init, const TrainConfig& config);
};

struct StepStats {
  double empirical_loss = 0.0;  // mean over query facts
  std::size_t query_facts = 0;
  bool skipped = false;
};

// One outer update on a batch of tasks using query interval `interval`
// (1-based; 0 pools every interval). `anchor` is phi at the start of the
// interval. With `regularize` the displacement from the anchor is shrunk so
// that the step solves the implicit update including the penalty gradient.
StepStats outer_step(MetaState& state, NeighborCache& neighbors, std::span<const FewShotTask> tasks,
                     std::size_t interval, const ParamArrays& anchor, bool regularize, const TrainConfig& config,
                     MetaObserver* observer = nullptr);

// First-order outer gradient: mean over query facts of the query-loss
// gradient taken at each task's adapted parameters.
struct OuterGradient {
  double empirical_loss = 0.0;
  std::size_t query_facts = 0;
  ParamArrays grad;
};
OuterGradient first_order_gradient(NeighborCache& neighbors, const ModelParams& phi,
                                   std::span<const std::vector<TrainingExample>> supports,
                                   std::span<const std::vector<TrainingExample>> queries, const TrainConfig& config);

// The embedding table must already cover every task entity.
MetaState meta_train(NeighborCache& neighbors, std::span<const FewShotTask> tasks, ModelParams phi0,
                     const TrainConfig& config, Mode mode, MetaObserver* observer = nullptr);

// Grows the entity table to `rows`; every new row is the mean of the rows
// of its first `shots` facts' counterparts already in the table (zero if
// none).
void extend_entity_table(ModelParams& params, std::size_t rows, const TemporalKG& kg, std::size_t shots);

// Extends the table for an unseen entity from its support counterparts,
// then adapts on the support facts. phi is not modified.
ModelParams meta_test_adapt(const ModelParams& phi, NeighborCache& neighbors, EntityId entity,
                            std::span<const Quadruple> support, const TrainConfig& config, std::mt19937_64& rng);

// Mean distance between consecutive interval endpoints over the log.
double mean_drift(std::span<const LogRecord> log);

}  // namespace tkgr
