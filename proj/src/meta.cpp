#include "tkgr/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include <json.hpp>

#include "tkgr/error.hpp"
#include "tkgr/objective.hpp"

namespace tkgr {

const char* mode_name(Mode mode) noexcept {
  switch (mode) {
    case Mode::kFull: return "full";
    case Mode::kStaticMaml: return "static_maml";
    case Mode::kNoRegularizer: return "no_regularizer";
    case Mode::kFinetuneOnly: return "finetune_only";
  }
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::kFull, Mode::kStaticMaml, Mode::kNoRegularizer, Mode::kFinetuneOnly}) {
    if (name == mode_name(m)) return m;
  }
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

const char* optimizer_name(OptimizerKind kind) noexcept { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid config: ") + what);
  };
  // Zero learning rates are allowed: they are exact fixed points and useful in checks.
  require(inner_lr >= 0.0 && std::isfinite(inner_lr), "inner_lr must be >= 0");
  require(outer_lr >= 0.0 && std::isfinite(outer_lr), "outer_lr must be >= 0");
  require(margin > 0.0 && std::isfinite(margin), "margin must be > 0");
  require(kl_variance > 0.0 && std::isfinite(kl_variance), "kl_variance must be > 0");
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  require(shots >= 1, "shots must be >= 1");
  require(intervals >= 1, "intervals must be >= 1");
  require(budget >= 1, "budget must be >= 1");
  require(window >= 0, "window must be >= 0");
  require(dim >= 1, "dim must be >= 1");
  require(layers >= 1, "layers must be >= 1");
  require(negatives >= 1, "negatives must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(inner_steps >= 1, "inner_steps must be >= 1");
  require(pretrain_lr >= 0.0 && std::isfinite(pretrain_lr), "pretrain_lr must be >= 0");
  require(pretrain_batch >= 1, "pretrain_batch must be >= 1");
  require(task_fraction > 0.0 && task_fraction <= 1.0, "task_fraction must lie in (0, 1]");
  require(history_lag >= 0, "history_lag must be >= 0");
}

std::vector<TrainingExample> draw_task_examples(std::span<const Quadruple> facts, EntityId entity,
                                                std::size_t num_entities, std::size_t negatives,
                                                std::mt19937_64& rng) {
  std::vector<TrainingExample> out;
  out.reserve(facts.size());
  for (const Quadruple& q : facts) {
    TrainingExample ex;
    ex.fact = q;
    ex.corrupt = q.subject == entity ? Side::kObject : Side::kSubject;
    for (const Quadruple& neg : sample_negatives(num_entities, q, ex.corrupt, negatives, rng)) {
      ex.negatives.push_back(ex.corrupt == Side::kObject ? neg.object : neg.subject);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

LossAndGrad example_loss(NeighborCache& neighbors, const ModelParams& params,
                         std::span<const TrainingExample> examples, const TrainConfig& config) {
  LossAndGrad out;
  if (examples.empty()) {
    out.grad = zeros_like(params.trainable);
    return out;
  }
  Tape tape;
  const BoundParams bound = bind(tape, params);
  TapeEncoder encoder(neighbors.graph(), bound, config.encoder(), &neighbors);
  std::vector<Var> losses;
  losses.reserve(examples.size());
  for (const TrainingExample& ex : examples) {
    const Timestamp t = ex.fact.time - config.history_lag;
    const bool object_side = ex.corrupt == Side::kObject;
    const Var anchor = encoder.encode(object_side ? ex.fact.subject : ex.fact.object, t);
    auto score_with = [&](EntityId candidate) {
      const Var h = encoder.encode(candidate, t);
      return object_side ? score(bound, anchor, ex.fact.relation, h) : score(bound, h, ex.fact.relation, anchor);
    };
    const Var pos = score_with(object_side ? ex.fact.object : ex.fact.subject);
    std::vector<Var> negs;
    negs.reserve(ex.negatives.size());
    for (EntityId e : ex.negatives) negs.push_back(score_with(e));
    losses.push_back(hinge_loss(pos, negs, config.margin));
  }
  const Var total = sum(concat(losses));
  out.loss = total.scalar();
  out.grad = gradients_of(tape.backward(total), bound);
  return out;
}

double example_loss_value(NeighborCache& neighbors, const ModelParams& params,
                          std::span<const TrainingExample> examples, const TrainConfig& config) {
  ValueEncoder encoder(neighbors.graph(), params, config.encoder(), &neighbors);
  std::vector<double> pos;
  std::vector<std::vector<double>> negs;
  for (const TrainingExample& ex : examples) {
    const Timestamp t = ex.fact.time - config.history_lag;
    const bool object_side = ex.corrupt == Side::kObject;
    const Tensor anchor = encoder.encode(object_side ? ex.fact.subject : ex.fact.object, t);
    auto score_with = [&](EntityId candidate) {
      const Tensor& h = encoder.encode(candidate, t);
      return object_side ? score(params, anchor.values(), ex.fact.relation, h.values())
                         : score(params, h.values(), ex.fact.relation, anchor.values());
    };
    pos.push_back(score_with(object_side ? ex.fact.object : ex.fact.subject));
    std::vector<double> group;
    for (EntityId e : ex.negatives) group.push_back(score_with(e));
    negs.push_back(std::move(group));
  }
  if (pos.empty()) return 0.0;
  return hinge_loss(pos, negs, config.margin);
}

Optimizer::Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

ParamArrays Optimizer::step(const ParamArrays& grad) {
  ParamArrays delta = zeros_like(grad);
  if (kind_ == OptimizerKind::kSgd) {
    axpy(-lr_, grad, delta);
    return delta;
  }
  if (m_[0].empty() && m_[1].empty()) {
    m_ = zeros_like(grad);
    v_ = zeros_like(grad);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    // The entity table may have grown since the last step; new rows start with zero moments.
    if (grad[b].is_matrix() && m_[b].rows() < grad[b].rows()) {
      m_[b].resize_rows(grad[b].rows());
      v_[b].resize_rows(grad[b].rows());
    }
    if (!m_[b].same_shape(grad[b])) throw ShapeError(std::string("optimizer state mismatch in ") + block_name(b));
    auto g = grad[b].values();
    auto m = m_[b].values();
    auto v = v_[b].values();
    auto d = delta[b].values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      d[i] = -lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
  return delta;
}

namespace {

void check_finite(const ParamArrays& p, const char* what) {
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    if (!p[b].all_finite()) throw NumericError(std::string(what) + ": non-finite values in " + block_name(b));
  }
}

void scale_in_place(ParamArrays& p, double c) {
  for (Tensor& t : p) {
    for (double& v : t.values()) v *= c;
  }
}

void check_table(const ModelParams& params, const Quadruple& q) {
  const auto rows = static_cast<EntityId>(params.num_entities());
  if (q.subject >= rows || q.object >= rows) {
    throw ArgumentError("fact references an entity outside the embedding table");
  }
}

}  // namespace

PretrainResult pretrain_background(NeighborCache& neighbors, ModelParams init, std::span<const Quadruple> facts,
                                   const TrainConfig& config) {
  config.validate();
  if (facts.empty()) throw ArgumentError("pretrain_background: no background facts");
  for (const Quadruple& q : facts) check_table(init, q);
  PretrainResult out;
  out.params = std::move(init);
  Optimizer optimizer(config.optimizer, config.pretrain_lr);
  std::mt19937_64 rng(config.seed ^ 0x5eed'ba5e'0000'0001ULL);
  std::bernoulli_distribution coin(0.5);
  std::vector<std::size_t> order(facts.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t rows = out.params.num_entities();

  for (std::size_t epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.pretrain_batch) {
      const std::size_t end = std::min(order.size(), begin + config.pretrain_batch);
      std::vector<TrainingExample> batch;
      for (std::size_t i = begin; i < end; ++i) {
        TrainingExample ex;
        ex.fact = facts[order[i]];
        ex.corrupt = coin(rng) ? Side::kSubject : Side::kObject;
        for (const Quadruple& neg : sample_negatives(rows, ex.fact, ex.corrupt, config.negatives, rng)) {
          ex.negatives.push_back(ex.corrupt == Side::kObject ? neg.object : neg.subject);
        }
        batch.push_back(std::move(ex));
      }
      LossAndGrad lg = example_loss(neighbors, out.params, batch, config);
      epoch_loss += lg.loss;
      scale_in_place(lg.grad, 1.0 / static_cast<double>(batch.size()));
      check_finite(lg.grad, "pretrain gradient");
      axpy(1.0, optimizer.step(lg.grad), out.params.trainable);
    }
    out.epoch_losses.push_back(epoch_loss / static_cast<double>(facts.size()));
  }
  return out;
}

ParamArrays inner_adapt(const ParamArrays& phi, const GradFn& grad, double lr, std::size_t steps) {
  ParamArrays adapted = phi;
  for (std::size_t s = 0; s < steps; ++s) {
    const ParamArrays g = grad(adapted);
    check_finite(g, "inner gradient");
    for (std::size_t b = 0; b < kNumBlocks; ++b) {
      if (!g[b].same_shape(adapted[b])) throw ShapeError(std::string("inner gradient shape in ") + block_name(b));
    }
    axpy(-lr, g, adapted);
  }
  return adapted;
}

ModelParams inner_adapt(const ModelParams& phi, NeighborCache& neighbors,
                        std::span<const TrainingExample> support, const TrainConfig& config) {
  if (support.empty()) throw ArgumentError("inner_adapt: empty support set");
  ModelParams adapted = phi;
  if (config.inner_lr == 0.0) return adapted;
  ModelParams scratch = phi;
  adapted.trainable = inner_adapt(
      phi.trainable,
      [&](const ParamArrays& p) {
        scratch.trainable = p;
        return example_loss(neighbors, scratch, support, config).grad;
      },
      config.inner_lr, config.inner_steps);
  return adapted;
}

double kl_point_gaussian(const ParamArrays& phi_new, const ParamArrays& phi_old, double variance) {
  if (!(variance > 0.0)) throw ConfigError("kl_point_gaussian: variance must be positive");
  return squared_distance(phi_new, phi_old) / (2.0 * variance);
}

double regularizer_penalty(double kl, std::size_t d_size, double delta) {
  if (d_size == 0) throw ArgumentError("temporal_regularizer: empty query set");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("temporal_regularizer: delta must lie in (0, 1)");
  if (!(kl >= 0.0)) throw ArgumentError("temporal_regularizer: negative KL");
  const auto n = static_cast<double>(d_size);
  return std::sqrt((kl + std::log(n / delta)) / (2.0 * n - 1.0));
}

double temporal_regularizer(double emp_loss, double kl, std::size_t d_size, double delta) {
  return emp_loss + regularizer_penalty(kl, d_size, delta);
}

ParamArrays penalty_gradient(const ParamArrays& phi_new, const ParamArrays& phi_old, double variance,
                             std::size_t d_size, double delta) {
  const double kl = kl_point_gaussian(phi_new, phi_old, variance);
  const double s = regularizer_penalty(kl, d_size, delta);
  const double c = 1.0 / (2.0 * variance * (2.0 * static_cast<double>(d_size) - 1.0) * s);
  ParamArrays g = zeros_like(phi_new);
  axpy(c, phi_new, g);
  axpy(-c, phi_old, g);
  return g;
}

double shrink_radius(double target, double lr, double variance, std::size_t d_size, double delta) {
  if (!(target > 0.0) || lr == 0.0) return std::max(target, 0.0);
  const double denom = 2.0 * variance * (2.0 * static_cast<double>(d_size) - 1.0);
  auto f = [&](double r) {
    const double s = regularizer_penalty(r * r / (2.0 * variance), d_size, delta);
    return r * (1.0 + lr / (denom * s));
  };
  double lo = 0.0;
  double hi = target;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * target; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void write_train_log(std::span<const LogRecord> log, std::ostream& out) {
  for (const LogRecord& r : log) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["interval"] = r.interval;
    j["empirical_loss"] = r.empirical_loss;
    j["kl"] = r.kl;
    j["penalty"] = r.penalty;
    j["drift"] = r.drift;
    j["query_facts"] = r.query_facts;
    j["updates"] = r.updates;
    out << j.dump() << '\n';
  }
}

MetaState::MetaState(ModelParams init, const TrainConfig& config)
    : phi(std::move(init)), rng(config.seed ^ 0x6d65'7461'0000'0002ULL), optimizer(config.optimizer, config.outer_lr) {}

OuterGradient first_order_gradient(NeighborCache& neighbors, const ModelParams& phi,
                                   std::span<const std::vector<TrainingExample>> supports,
                                   std::span<const std::vector<TrainingExample>> queries, const TrainConfig& config) {
  if (supports.size() != queries.size()) throw ArgumentError("first_order_gradient: supports and queries differ");
  OuterGradient out;
  out.grad = zeros_like(phi.trainable);
  double loss = 0.0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (queries[i].empty()) continue;
    const ModelParams adapted = inner_adapt(phi, neighbors, supports[i], config);
    const LossAndGrad lg = example_loss(neighbors, adapted, queries[i], config);
    loss += lg.loss;
    axpy(1.0, lg.grad, out.grad);
    out.query_facts += queries[i].size();
  }
  if (out.query_facts > 0) {
    const double inv = 1.0 / static_cast<double>(out.query_facts);
    out.empirical_loss = loss * inv;
    scale_in_place(out.grad, inv);
  }
  return out;
}

StepStats outer_step(MetaState& state, NeighborCache& neighbors, std::span<const FewShotTask> tasks,
                     std::size_t interval, const ParamArrays& anchor, bool regularize, const TrainConfig& config,
                     MetaObserver* observer) {
  if (interval > config.intervals) throw ArgumentError("outer_step: interval index out of range");
  const std::size_t rows = state.phi.num_entities();
  std::vector<std::vector<TrainingExample>> supports;
  std::vector<std::vector<TrainingExample>> queries;
  for (const FewShotTask& task : tasks) {
    std::vector<Quadruple> facts;
    std::vector<std::size_t> indices;
    for (std::size_t m = 0; m < task.query_intervals.size(); ++m) {
      if (interval != 0 && m + 1 != interval) continue;
      facts.insert(facts.end(), task.query_intervals[m].begin(), task.query_intervals[m].end());
      if (m < task.query_interval_facts.size()) {
        indices.insert(indices.end(), task.query_interval_facts[m].begin(), task.query_interval_facts[m].end());
      }
    }
    if (facts.empty()) continue;
    if (observer != nullptr) observer->on_query_access(interval, task, indices);
    supports.push_back(draw_task_examples(task.support, task.entity, rows, config.negatives, state.rng));
    queries.push_back(draw_task_examples(facts, task.entity, rows, config.negatives, state.rng));
  }

  StepStats stats;
  if (queries.empty()) {
    stats.skipped = true;
    return stats;
  }
  const OuterGradient og = first_order_gradient(neighbors, state.phi, supports, queries, config);
  check_finite(og.grad, "outer gradient");
  stats.empirical_loss = og.empirical_loss;
  stats.query_facts = og.query_facts;

  const ParamArrays step = state.optimizer.step(og.grad);
  if (!regularize) {
    axpy(1.0, step, state.phi.trainable);
  } else {
    // Proposed displacement from the interval anchor, then the implicit
    // penalty shrink along that direction.
    ParamArrays disp = state.phi.trainable;
    axpy(-1.0, anchor, disp);
    axpy(1.0, step, disp);
    const double norm = std::sqrt(squared_norm(disp));
    if (norm > 0.0) {
      const double r = shrink_radius(norm, config.outer_lr, config.kl_variance, og.query_facts, config.delta);
      ParamArrays next = anchor;
      axpy(r / norm, disp, next);
      state.phi.trainable = std::move(next);
    }
  }
  check_finite(state.phi.trainable, "outer update");
  return stats;
}

MetaState meta_train(NeighborCache& neighbors, std::span<const FewShotTask> tasks, ModelParams phi0,
                     const TrainConfig& config, Mode mode, MetaObserver* observer) {
  config.validate();
  if (tasks.empty()) throw TaskError("meta_train: no eligible new entities");
  for (const FewShotTask& task : tasks) {
    for (const Quadruple& q : task.support) check_table(phi0, q);
    for (const auto& bucket : task.query_intervals) {
      for (const Quadruple& q : bucket) check_table(phi0, q);
    }
  }
  MetaState state(std::move(phi0), config);
  if (mode == Mode::kFinetuneOnly) return state;

  std::vector<std::size_t> order(tasks.size());
  std::iota(order.begin(), order.end(), 0);

  auto run_interval = [&](std::size_t epoch, std::size_t interval, bool regularize) {
    const ParamArrays anchor = state.phi.trainable;
    state.interval = interval;
    LogRecord rec;
    rec.epoch = epoch;
    rec.interval = interval;
    double loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<FewShotTask> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(tasks[order[i]]);
      const StepStats stats = outer_step(state, neighbors, batch, interval, anchor, regularize, config, observer);
      if (stats.skipped) continue;
      ++rec.updates;
      loss += stats.empirical_loss * static_cast<double>(stats.query_facts);
      rec.query_facts += stats.query_facts;
    }
    rec.kl = kl_point_gaussian(state.phi.trainable, anchor, config.kl_variance);
    if (rec.query_facts > 0) {
      rec.empirical_loss = loss / static_cast<double>(rec.query_facts);
      rec.penalty = regularizer_penalty(rec.kl, rec.query_facts, config.delta);
    }
    rec.drift = std::sqrt(squared_distance(state.phi.trainable, anchor));
    state.log.push_back(rec);
    if (observer != nullptr) observer->on_record(rec);
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), state.rng);
    if (mode == Mode::kStaticMaml) {
      run_interval(epoch, 0, false);
    } else {
      for (std::size_t m = 1; m <= config.intervals; ++m) run_interval(epoch, m, mode == Mode::kFull);
    }
  }
  return state;
}

namespace {

void warm_start_row(ModelParams& params, EntityId entity, std::span<const EntityId> counterparts,
                    std::size_t known_rows) {
  Tensor& table = params.entity_emb();
  auto row = table.row(static_cast<std::size_t>(entity));
  std::fill(row.begin(), row.end(), 0.0);
  std::vector<EntityId> seen;
  for (EntityId c : counterparts) {
    if (c == entity || c < 0 || static_cast<std::size_t>(c) >= known_rows) continue;
    if (std::find(seen.begin(), seen.end(), c) != seen.end()) continue;
    seen.push_back(c);
  }
  if (seen.empty()) return;
  for (EntityId c : seen) {
    auto src = table.row(static_cast<std::size_t>(c));
    for (std::size_t k = 0; k < row.size(); ++k) row[k] += src[k];
  }
  for (double& v : row) v /= static_cast<double>(seen.size());
}

std::vector<EntityId> counterparts_of(EntityId entity, std::span<const Quadruple> facts) {
  std::vector<EntityId> out;
  for (const Quadruple& q : facts) out.push_back(q.subject == entity ? q.object : q.subject);
  return out;
}

}  // namespace

void extend_entity_table(ModelParams& params, std::size_t rows, const TemporalKG& kg, std::size_t shots) {
  const std::size_t known = params.num_entities();
  if (rows <= known) return;
  if (rows > kg.num_entities()) throw ArgumentError("extend_entity_table: more rows than entities");
  params.entity_emb().resize_rows(rows);
  for (std::size_t e = known; e < rows; ++e) {
    const auto entity = static_cast<EntityId>(e);
    std::vector<Quadruple> first;
    for (std::size_t f : kg.facts_of(entity)) {
      if (first.size() == shots) break;
      first.push_back(kg.quadruple(f));
    }
    warm_start_row(params, entity, counterparts_of(entity, first), known);
  }
}

ModelParams meta_test_adapt(const ModelParams& phi, NeighborCache& neighbors, EntityId entity,
                            std::span<const Quadruple> support, const TrainConfig& config, std::mt19937_64& rng) {
  if (support.empty()) throw ArgumentError("meta_test_adapt: empty support set");
  if (entity < 0) throw ArgumentError("meta_test_adapt: negative entity id");
  const ModelParams* base = &phi;
  ModelParams extended;
  if (static_cast<std::size_t>(entity) >= phi.num_entities()) {
    extended = phi;
    const std::size_t known = phi.num_entities();
    extended.entity_emb().resize_rows(static_cast<std::size_t>(entity) + 1);
    warm_start_row(extended, entity, counterparts_of(entity, support), known);
    base = &extended;
  }
  const auto examples = draw_task_examples(support, entity, base->num_entities(), config.negatives, rng);
  return inner_adapt(*base, neighbors, examples, config);
}

double mean_drift(std::span<const LogRecord> log) {
  if (log.empty()) return 0.0;
  double total = 0.0;
  for (const LogRecord& r : log) total += r.drift;
  return total / static_cast<double>(log.size());
}

}  // namespace tkgr
