#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "tkgr/error.hpp"
#include "tkgr/grad_check.hpp"
#include "tkgr/meta.hpp"
#include "tkgr/synthetic.hpp"

using namespace tkgr;
using tkgr::testing::kg_from_text;
using tkgr::testing::random_params;

namespace {

struct Toy {
  TemporalKG kg;
  std::vector<FewShotTask> tasks;
  TrainConfig cfg;
};

// Small synthetic graph; every entity first seen after t = 10 with more than
// K facts becomes a task.
Toy make_toy(std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.entities_per_block = 8;
  spec.blocks = 2;
  spec.relations = 2;
  spec.horizon = 30;
  spec.drift_period = 10;
  spec.arrival_rate = 0.5;
  spec.seed = seed;
  Toy toy;
  toy.kg = generate_synthetic(spec).kg;
  toy.cfg.dim = 3;
  toy.cfg.budget = 6;
  toy.cfg.window = 10;
  toy.cfg.negatives = 3;
  toy.cfg.shots = 2;
  toy.cfg.intervals = 3;
  toy.cfg.inner_lr = 0.05;
  toy.cfg.outer_lr = 0.01;
  toy.cfg.epochs = 2;
  toy.cfg.batch_size = 4;
  toy.cfg.pretrain_epochs = 3;
  toy.cfg.pretrain_lr = 0.01;
  toy.cfg.seed = seed;
  for (EntityId e : new_entities(toy.kg, 10, 30)) {
    if (toy.kg.facts_of(e).size() > toy.cfg.shots + 2) toy.tasks.push_back(build_task(toy.kg, e, toy.cfg.shots, 3));
  }
  return toy;
}

ModelParams toy_params(const Toy& toy, std::uint64_t seed = 3) {
  return init_params(toy.kg.num_entities(), toy.kg.num_relations(), toy.cfg.dim, seed);
}

double max_abs_diff(const ParamArrays& a, const ParamArrays& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < kNumBlocks; ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) m = std::max(m, std::abs(a[k][i] - b[k][i]));
  }
  return m;
}

class IntervalAudit final : public MetaObserver {
 public:
  void on_query_access(std::size_t interval, const FewShotTask& task, std::span<const std::size_t> facts) override {
    intervals.push_back(interval);
    for (std::size_t f : facts) {
      bool inside = false;
      if (interval == 0) {
        inside = std::find(task.query_facts.begin(), task.query_facts.end(), f) != task.query_facts.end();
      } else {
        const auto& bucket = task.query_interval_facts.at(interval - 1);
        inside = std::find(bucket.begin(), bucket.end(), f) != bucket.end();
      }
      if (!inside) ++violations;
    }
  }
  void on_record(const LogRecord& rec) override { records.push_back(rec); }

  std::vector<std::size_t> intervals;
  std::vector<LogRecord> records;
  std::size_t violations = 0;
};

}  // namespace

TEST_SUITE("meta") {

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.delta = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.margin = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.shots = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.kl_variance = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_mode("static_maml") == Mode::kStaticMaml);
  CHECK_THROWS_AS(parse_mode("bogus"), ConfigError);
}

TEST_CASE("KL between point Gaussians") {
  ParamArrays a;
  ParamArrays b;
  for (std::size_t k = 0; k < kNumBlocks; ++k) {
    a[k] = Tensor::vector(2);
    b[k] = Tensor::vector(2);
  }
  CHECK(kl_point_gaussian(a, a, 1.0) == 0.0);
  b[1] = Tensor::from({0.3, 0.4});
  CHECK(kl_point_gaussian(b, a, 1.0) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK_THROWS_AS(kl_point_gaussian(a, b, 0.0), ConfigError);

  const ModelParams p = random_params(5, 2, 3, 1);
  const ModelParams q = random_params(5, 2, 3, 2);
  ParamArrays twice = q.trainable;
  for (std::size_t k = 0; k < kNumBlocks; ++k) {
    for (std::size_t i = 0; i < twice[k].size(); ++i) twice[k][i] = p.trainable[k][i] + 2.0 * (q.trainable[k][i] - p.trainable[k][i]);
  }
  const double kl = kl_point_gaussian(q.trainable, p.trainable, 0.7);
  CHECK(kl == doctest::Approx(kl_point_gaussian(p.trainable, q.trainable, 0.7)).epsilon(1e-15));
  CHECK(kl_point_gaussian(twice, p.trainable, 0.7) == doctest::Approx(4.0 * kl).epsilon(1e-12));
}

TEST_CASE("regularizer closed form") {
  CHECK(temporal_regularizer(0.3, 0.0, 10, 0.1) == doctest::Approx(0.79232).epsilon(1e-5));
  CHECK(temporal_regularizer(0.3, 0.0, 10, 0.1) - 0.3 == doctest::Approx(std::sqrt(std::log(100.0) / 19.0)).epsilon(1e-14));
  CHECK(regularizer_penalty(0.0, 1'000'000, 0.1) < 0.004);
  CHECK_THROWS_AS(temporal_regularizer(0.3, 0.0, 0, 0.1), ArgumentError);
  CHECK_THROWS_AS(temporal_regularizer(0.3, 0.0, 5, 1.0), ConfigError);
}

TEST_CASE("regularizer is strictly increasing in kl and in the empirical loss") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> kl(0.0, 10.0);
  std::uniform_int_distribution<std::size_t> d(1, 500);
  std::uniform_real_distribution<double> delta(0.01, 0.99);
  for (int i = 0; i < 50; ++i) {
    const double k = kl(rng);
    const std::size_t n = d(rng);
    const double dl = delta(rng);
    CHECK(temporal_regularizer(0.2, k + 0.1, n, dl) > temporal_regularizer(0.2, k, n, dl));
    CHECK(temporal_regularizer(0.3, k, n, dl) > temporal_regularizer(0.2, k, n, dl));
  }
}

TEST_CASE("penalty gradient matches finite differences") {
  const ModelParams a = random_params(4, 2, 2, 5, 0.3);
  const ModelParams b = random_params(4, 2, 2, 6, 0.3);
  const double variance = 0.5;
  const ParamArrays g = penalty_gradient(a.trainable, b.trainable, variance, 7, 0.1);
  const std::vector<Tensor> start(a.trainable.begin(), a.trainable.end());
  const auto numeric = numeric_gradient(
      [&](std::span<const Tensor> p) {
        ParamArrays x;
        for (std::size_t k = 0; k < kNumBlocks; ++k) x[k] = p[k];
        return regularizer_penalty(kl_point_gaussian(x, b.trainable, variance), 7, 0.1);
      },
      start, 1e-5);
  double worst = 0.0;
  for (std::size_t k = 0; k < kNumBlocks; ++k) {
    for (std::size_t i = 0; i < g[k].size(); ++i) worst = std::max(worst, relative_error(g[k][i], numeric[k][i]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("shrink radius solves the implicit step") {
  for (double target : {1e-4, 0.01, 0.5, 3.0}) {
    const double r = shrink_radius(target, 0.01, 0.2, 40, 0.1);
    const double c = 1.0 / (2.0 * 0.2 * 79.0 * regularizer_penalty(r * r / 0.4, 40, 0.1));
    CHECK(r <= target);
    CHECK(r * (1.0 + 0.01 * c) == doctest::Approx(target).epsilon(1e-10));
  }
  CHECK(shrink_radius(0.0, 0.01, 1.0, 3, 0.1) == 0.0);
  CHECK(shrink_radius(0.7, 0.0, 1.0, 3, 0.1) == 0.7);
}

TEST_CASE("inner adaptation: zero step, scalar surrogate, NaN guard") {
  ParamArrays phi;
  for (std::size_t k = 0; k < kNumBlocks; ++k) phi[k] = Tensor::vector(1);
  auto quadratic = [](const ParamArrays& p) {
    ParamArrays g;
    for (std::size_t k = 0; k < kNumBlocks; ++k) g[k] = Tensor::from({2.0 * (p[k][0] - 1.0)});
    return g;
  };
  CHECK(inner_adapt(phi, quadratic, 0.0, 1) == phi);
  const ParamArrays one = inner_adapt(phi, quadratic, 0.1, 1);
  CHECK(one[0][0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(phi[0][0] == 0.0);

  auto broken = [](const ParamArrays& p) {
    ParamArrays g = p;
    g[2][0] = std::nan("");
    return g;
  };
  CHECK_THROWS_WITH_AS(inner_adapt(phi, broken, 0.1, 1), doctest::Contains(block_name(2)), NumericError);
}

TEST_CASE("inner adaptation on a toy task equals a finite-difference step") {
  Toy toy = make_toy();
  REQUIRE(!toy.tasks.empty());
  const ModelParams phi = random_params(toy.kg.num_entities(), toy.kg.num_relations(), 3, 4);
  NeighborCache cache(toy.kg, toy.cfg.budget, toy.cfg.window);
  std::mt19937_64 rng(2);
  const FewShotTask& task = toy.tasks.front();
  const auto support = draw_task_examples(task.support, task.entity, phi.num_entities(), 3, rng);

  const ModelParams adapted = inner_adapt(phi, cache, support, toy.cfg);
  const std::vector<Tensor> start(phi.trainable.begin(), phi.trainable.end());
  const auto g = numeric_gradient(
      [&](std::span<const Tensor> p) {
        ModelParams x = phi;
        for (std::size_t k = 0; k < kNumBlocks; ++k) x.trainable[k] = p[k];
        return example_loss_value(cache, x, support, toy.cfg);
      },
      start, 1e-5);
  double worst = 0.0;
  for (std::size_t k = 0; k < kNumBlocks; ++k) {
    for (std::size_t i = 0; i < g[k].size(); ++i) {
      const double expected = phi.trainable[k][i] - toy.cfg.inner_lr * g[k][i];
      worst = std::max(worst, relative_error(adapted.trainable[k][i], expected));
    }
  }
  CHECK(worst < 1e-4);

  TrainConfig frozen = toy.cfg;
  frozen.inner_lr = 0.0;
  CHECK(inner_adapt(phi, cache, support, frozen) == phi);
  CHECK_THROWS_AS(inner_adapt(phi, cache, {}, toy.cfg), ArgumentError);
}

TEST_CASE("tape and value losses agree") {
  Toy toy = make_toy(4);
  const ModelParams phi = random_params(toy.kg.num_entities(), toy.kg.num_relations(), 3, 9);
  NeighborCache cache(toy.kg, toy.cfg.budget, toy.cfg.window);
  std::mt19937_64 rng(6);
  for (const FewShotTask& task : toy.tasks) {
    const auto ex = draw_task_examples(task.query_intervals.back(), task.entity, phi.num_entities(), 3, rng);
    CHECK(example_loss(cache, phi, ex, toy.cfg).loss ==
          doctest::Approx(example_loss_value(cache, phi, ex, toy.cfg)).epsilon(1e-12));
  }
}

TEST_CASE("pretraining: zero epochs, decreasing loss, determinism") {
  Toy toy = make_toy();
  std::vector<Quadruple> facts(toy.kg.quadruples().begin(), toy.kg.quadruples().end());
  NeighborCache cache(toy.kg, toy.cfg.budget, toy.cfg.window);
  TrainConfig cfg = toy.cfg;
  cfg.pretrain_epochs = 0;
  const ModelParams init = toy_params(toy);
  CHECK(pretrain_background(cache, init, facts, cfg).params == init);
  CHECK_THROWS_AS(pretrain_background(cache, init, {}, cfg), ArgumentError);

  cfg.pretrain_epochs = 20;
  cfg.pretrain_lr = 0.02;
  const PretrainResult a = pretrain_background(cache, init, facts, cfg);
  REQUIRE(a.epoch_losses.size() == 20);
  CHECK(a.epoch_losses.back() < a.epoch_losses.front());
  const PretrainResult b = pretrain_background(cache, init, facts, cfg);
  CHECK(a.params == b.params);
}

TEST_CASE("outer step: zero outer rate is a fixed point") {
  Toy toy = make_toy();
  NeighborCache cache(toy.kg, toy.cfg.budget, toy.cfg.window);
  for (OptimizerKind kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    for (bool regularize : {false, true}) {
      TrainConfig cfg = toy.cfg;
      cfg.outer_lr = 0.0;
      cfg.optimizer = kind;
      MetaState state(toy_params(toy), cfg);
      const ModelParams before = state.phi;
      const StepStats stats = outer_step(state, cache, toy.tasks, 1, before.trainable, regularize, cfg);
      CHECK_FALSE(stats.skipped);
      CHECK(state.phi == before);
    }
  }
}

TEST_CASE("outer step: empty interval is skipped") {
  Toy toy = make_toy();
  NeighborCache cache(toy.kg, toy.cfg.budget, toy.cfg.window);
  std::vector<FewShotTask> hollow = toy.tasks;
  for (auto& t : hollow) {
    for (auto& b : t.query_intervals) b.clear();
  }
  MetaState state(toy_params(toy), toy.cfg);
  const ModelParams before = state.phi;
  CHECK(outer_step(state, cache, hollow, 2, before.trainable, true, toy.cfg).skipped);
  CHECK(state.phi == before);
  CHECK_THROWS_AS(outer_step(state, cache, hollow, 9, before.trainable, true, toy.cfg), ArgumentError);
}

TEST_CASE("outer step: the regularized displacement is never larger") {
  Toy toy = make_toy();
  NeighborCache cache(toy.kg, toy.cfg.budget, toy.cfg.window);
  for (OptimizerKind kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    TrainConfig cfg = toy.cfg;
    cfg.optimizer = kind;
    cfg.outer_lr = 0.05;
    cfg.kl_variance = 0.01;
    MetaState plain(toy_params(toy), cfg);
    MetaState reg(toy_params(toy), cfg);
    const ParamArrays anchor = plain.phi.trainable;
    for (int step = 0; step < 2; ++step) {
      outer_step(plain, cache, toy.tasks, 1, anchor, false, cfg);
      outer_step(reg, cache, toy.tasks, 1, anchor, true, cfg);
    }
    const double d_plain = std::sqrt(squared_distance(plain.phi.trainable, anchor));
    const double d_reg = std::sqrt(squared_distance(reg.phi.trainable, anchor));
    CHECK(d_plain > 0.0);
    CHECK(d_reg <= d_plain);
  }
}

TEST_CASE("meta_train: interval progression touches interval m only") {
  Toy toy = make_toy();
  NeighborCache cache(toy.kg, toy.cfg.budget, toy.cfg.window);
  IntervalAudit audit;
  const MetaState state = meta_train(cache, toy.tasks, toy_params(toy), toy.cfg, Mode::kFull, &audit);
  CHECK(audit.violations == 0);
  REQUIRE(!audit.intervals.empty());
  // Within an epoch the interval index never decreases.
  std::size_t resets = 0;
  for (std::size_t i = 1; i < audit.intervals.size(); ++i) {
    if (audit.intervals[i] < audit.intervals[i - 1]) ++resets;
  }
  CHECK(resets == toy.cfg.epochs - 1);
  REQUIRE(state.log.size() == toy.cfg.epochs * toy.cfg.intervals);
  for (std::size_t i = 0; i < state.log.size(); ++i) CHECK(state.log[i].interval == i % toy.cfg.intervals + 1);
  CHECK(audit.records.size() == state.log.size());
}

TEST_CASE("meta_train: static mode pools every interval") {
  Toy toy = make_toy();
  NeighborCache cache(toy.kg, toy.cfg.budget, toy.cfg.window);
  IntervalAudit audit;
  const MetaState state = meta_train(cache, toy.tasks, toy_params(toy), toy.cfg, Mode::kStaticMaml, &audit);
  CHECK(audit.violations == 0);
  for (std::size_t m : audit.intervals) CHECK(m == 0);
  CHECK(state.log.size() == toy.cfg.epochs);
}

TEST_CASE("meta_train: no-op cases, errors, determinism") {
  Toy toy = make_toy();
  NeighborCache cache(toy.kg, toy.cfg.budget, toy.cfg.window);
  const ModelParams phi0 = toy_params(toy);
  TrainConfig zero = toy.cfg;
  zero.epochs = 0;
  CHECK(meta_train(cache, toy.tasks, phi0, zero, Mode::kFull).phi == phi0);
  CHECK(meta_train(cache, toy.tasks, phi0, toy.cfg, Mode::kFinetuneOnly).phi == phi0);
  CHECK_THROWS_AS(meta_train(cache, {}, phi0, toy.cfg, Mode::kFull), TaskError);

  const MetaState a = meta_train(cache, toy.tasks, phi0, toy.cfg, Mode::kFull);
  NeighborCache fresh(toy.kg, toy.cfg.budget, toy.cfg.window);
  const MetaState b = meta_train(fresh, toy.tasks, phi0, toy.cfg, Mode::kFull);
  CHECK(a.phi == b.phi);
  CHECK_FALSE(a.phi == phi0);
}

TEST_CASE("meta-test adaptation: reduction, warm start, copy-on-adapt") {
  const TemporalKG kg = kg_from_text("a\tr\tb\t1\nb\tr\tc\t2\nn\tr\tb\t3\nc\tr\tn\t4\nn\tr\ta\t5\n");
  const EntityId n = *kg.entities().find("n");
  const EntityId b = *kg.entities().find("b");
  const EntityId c = *kg.entities().find("c");
  TrainConfig cfg;
  cfg.dim = 2;
  cfg.negatives = 2;
  cfg.inner_lr = 0.1;
  NeighborCache cache(kg, 8, 10);

  // n is the last id; a table without its row treats it as unseen.
  ModelParams small = random_params(static_cast<std::size_t>(n), 1, 2, 3);
  const ModelParams small_before = small;
  const std::vector<Quadruple> support{kg.quadruple(2), kg.quadruple(3)};
  TrainConfig frozen = cfg;
  frozen.inner_lr = 0.0;
  std::mt19937_64 rng(1);
  const ModelParams warm = meta_test_adapt(small, cache, n, support, frozen, rng);
  REQUIRE(warm.num_entities() == static_cast<std::size_t>(n) + 1);
  for (std::size_t k = 0; k < 2; ++k) {
    const double mean = 0.5 * (small.entity_emb().at(static_cast<std::size_t>(b), k) +
                               small.entity_emb().at(static_cast<std::size_t>(c), k));
    CHECK(warm.entity_emb().at(static_cast<std::size_t>(n), k) == doctest::Approx(mean).epsilon(1e-15));
  }
  std::mt19937_64 rng2(1);
  const ModelParams adapted = meta_test_adapt(small, cache, n, support, cfg, rng2);
  CHECK(small == small_before);
  CHECK_FALSE(adapted == warm);

  // With the row present the call is exactly inner_adapt on the same draws.
  const ModelParams full = random_params(kg.num_entities(), 1, 2, 3);
  std::mt19937_64 r1(5), r2(5);
  const ModelParams via_meta = meta_test_adapt(full, cache, n, support, cfg, r1);
  const auto examples = draw_task_examples(support, n, full.num_entities(), cfg.negatives, r2);
  CHECK(via_meta == inner_adapt(full, cache, examples, cfg));
  CHECK_THROWS_AS(meta_test_adapt(full, cache, n, {}, cfg, r1), ArgumentError);
}

TEST_CASE("extend_entity_table warm-starts from earlier rows") {
  const TemporalKG kg = kg_from_text("a\tr\tb\t1\nc\tr\ta\t2\nc\tr\tb\t3\nd\tr\tc\t4\n");
  ModelParams p = random_params(2, 1, 2, 1);
  extend_entity_table(p, 4, kg, 2);
  REQUIRE(p.num_entities() == 4);
  // c's first two counterparts are a and b, both known.
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(p.entity_emb().at(2, k) == doctest::Approx(0.5 * (p.entity_emb().at(0, k) + p.entity_emb().at(1, k))));
    CHECK(p.entity_emb().at(3, k) == 0.0);  // d only meets c, which was not known
  }
  CHECK_THROWS_AS(extend_entity_table(p, 9, kg, 2), ArgumentError);
}

TEST_CASE("optimizers") {
  ParamArrays g;
  for (std::size_t k = 0; k < kNumBlocks; ++k) g[k] = Tensor::from({2.0, -0.5});
  Optimizer sgd(OptimizerKind::kSgd, 0.1);
  CHECK(sgd.step(g)[0][0] == doctest::Approx(-0.2));
  Optimizer adam(OptimizerKind::kAdam, 0.1);
  const ParamArrays d = adam.step(g);
  CHECK(d[0][0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(d[0][1] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("train log is one JSON object per record") {
  std::vector<LogRecord> log(3);
  log[1].interval = 2;
  log[2].drift = 0.25;
  std::ostringstream out;
  write_train_log(log, out);
  std::istringstream in(out.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("empirical_loss"));
    CHECK(j.contains("kl"));
    CHECK(j.contains("penalty"));
    CHECK(j.contains("drift"));
    ++n;
  }
  CHECK(n == 3);
  CHECK(mean_drift(log) == doctest::Approx(0.25 / 3));
}

}  // TEST_SUITE
