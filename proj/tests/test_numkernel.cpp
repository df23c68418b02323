#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "tkgr/error.hpp"
#include "tkgr/grad_check.hpp"
#include "tkgr/tape.hpp"

using namespace tkgr;

namespace {

Tensor random_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t = Tensor::vector(n);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

}  // namespace

TEST_SUITE("numkernel") {

TEST_CASE("relu of [-1, 0, 2]") {
  Tape tape;
  const Var x = tape.leaf(Tensor::from({-1.0, 0.0, 2.0}));
  CHECK(relu(x).value() == Tensor::from({0.0, 0.0, 2.0}));
}

TEST_CASE("exp then normalize on [ln 2, 0]") {
  Tape tape;
  const Var x = tape.leaf(Tensor::from({std::log(2.0), 0.0}));
  const Var e = exp(x);
  CHECK(e.value()[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(e.value()[1] == 1.0);
  const Var p = div_scalar(e, sum(e));
  CHECK(p.value()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(p.value()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Var s = softmax(x);
  CHECK(s.value()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("matvec with the identity") {
  Tape tape;
  const Var m = tape.leaf(Tensor::from(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  const Var v = tape.leaf(Tensor::from({1.0, 2.0, 3.0}));
  CHECK(matvec(m, v).value() == Tensor::from({1.0, 2.0, 3.0}));
}

TEST_CASE("shape mismatch names the primitive") {
  Tape tape;
  const Var a = tape.leaf(Tensor::from({1.0, 2.0}));
  const Var b = tape.leaf(Tensor::from({1.0, 2.0, 3.0}));
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), ShapeError);
  const Var m = tape.leaf(Tensor::matrix(2, 2));
  CHECK_THROWS_WITH_AS(matvec(m, b), doctest::Contains("matvec"), ShapeError);
}

TEST_CASE("non-finite inputs are rejected and non-finite results detected") {
  Tape tape;
  CHECK_THROWS_AS(tape.leaf(Tensor::from({std::nan("")})), NumericError);
  CHECK_THROWS_AS(tape.constant(Tensor::from({INFINITY})), NumericError);
  const Var x = tape.leaf(Tensor::from({-1.0}));
  CHECK_THROWS_AS(log(x), NumericError);
  const Var big = tape.leaf(Tensor::from({1000.0}));
  CHECK_THROWS_AS(exp(big), NumericError);
}

TEST_CASE("x^2 at 3 and x*y at (2, 5)") {
  Tape tape;
  const Var x = tape.leaf(Tensor::scalar(3.0));
  const Gradients g = tape.backward(mul(x, x));
  CHECK(g.of(x)[0] == 6.0);

  Tape tape2;
  const Var a = tape2.leaf(Tensor::scalar(2.0));
  const Var b = tape2.leaf(Tensor::scalar(5.0));
  const Gradients g2 = tape2.backward(mul(a, b));
  CHECK(g2.of(a)[0] == 5.0);
  CHECK(g2.of(b)[0] == 2.0);
}

TEST_CASE("backward needs a scalar root; unused leaves get zero") {
  Tape tape;
  const Var x = tape.leaf(Tensor::from({1.0, 2.0}));
  const Var unused = tape.leaf(Tensor::from({4.0, 4.0, 4.0}));
  CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), ShapeError);
  const Gradients g = tape.backward(sum(x));
  CHECK(g.of(unused) == Tensor::vector(3));
}

TEST_CASE("gradient of a plain sum is all ones") {
  std::mt19937_64 rng(4);
  Tape tape;
  const Var x = tape.leaf(random_vector(rng, 7));
  const Gradients g = tape.backward(sum(x));
  for (double v : g.of(x).values()) CHECK(v == 1.0);
}

TEST_CASE("gradient linearity") {
  std::mt19937_64 rng(8);
  const Tensor xv = random_vector(rng, 5);
  const Tensor mv = random_matrix(rng, 5, 5);
  auto grad_of = [&](double a, double b) {
    Tape tape;
    const Var x = tape.leaf(xv);
    const Var m = tape.leaf(mv);
    const Var f = sum(mul(matvec(m, x), x));
    const Var h = sum(exp(scale(x, 0.3)));
    const Var root = add(scale(f, a), scale(h, b));
    const Gradients g = tape.backward(root);
    return std::pair{g.of(x), g.of(m)};
  };
  const auto [fx, fm] = grad_of(1.0, 0.0);
  const auto [hx, hm] = grad_of(0.0, 1.0);
  const auto [cx, cm] = grad_of(2.5, -1.5);
  for (std::size_t i = 0; i < fx.size(); ++i) CHECK(cx[i] == doctest::Approx(2.5 * fx[i] - 1.5 * hx[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < fm.size(); ++i) CHECK(cm[i] == doctest::Approx(2.5 * fm[i] - 1.5 * hm[i]).epsilon(1e-12));
}

TEST_CASE("two backward passes and a replay are identical") {
  std::mt19937_64 rng(12);
  Tape tape;
  const Var x = tape.leaf(random_vector(rng, 4));
  const Var m = tape.leaf(random_matrix(rng, 4, 4));
  const Var root = sum(relu(vecmat(softmax(x), m)));
  const double before = root.scalar();
  const Gradients g1 = tape.backward(root);
  const Gradients g2 = tape.backward(root);
  CHECK(g1.of(x) == g2.of(x));
  CHECK(g1.of(m) == g2.of(m));
  tape.replay();
  CHECK(root.scalar() == before);
}

TEST_CASE("grad_check: quadratic form is exact to 1e-9") {
  // Central differences carry no truncation error here, so a wide step only shrinks rounding.
  std::mt19937_64 rng(1);
  const std::vector<Tensor> params{random_vector(rng, 4), random_matrix(rng, 4, 4)};
  const auto report = grad_check(
      [](Tape&, std::span<const Var> p) { return dot(p[0], matvec(p[1], p[0])); }, params, 1e-3);
  CHECK(report.kink_count == 0);
  CHECK(report.max_rel_error < 1e-9);
}

TEST_CASE("grad_check: every primitive against central differences") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> pos(0.5, 2.0);
  Tensor positive = Tensor::vector(4);
  for (double& v : positive.values()) v = pos(rng);
  const std::vector<Tensor> params{random_vector(rng, 4), random_matrix(rng, 3, 4), positive, random_vector(rng, 3)};
  const auto report = grad_check(
      [](Tape&, std::span<const Var> p) {
        const Var a = matvec(p[1], p[0]);                  // 3
        const Var b = vecmat(p[3], p[1]);                  // 4
        const Var c = add(mul(b, p[0]), sub(p[2], p[0]));  // 4
        const Var d = add(log(p[2]), sqrt(p[2]));
        const Var e = div_scalar(c, sum(p[2]));
        const Var f = concat({a, scale(add_scalar(d, 0.5), 0.7), e});
        const Var g = stack(std::vector<Var>{gather_row(p[1], 0), gather_row(p[1], 2)});
        const Var h = vecmat(scale(concat({p[3], p[3]}), 0.1), stack(std::vector<Var>(6, p[0])));
        const Var k = dot(softmax(a), p[3]);
        return add(add(sum(exp(scale(f, 0.2))), sum(relu(g))), add(dot(h, p[0]), k));
      },
      params, 1e-5);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("grad_check: a ReLU kink is flagged and excluded") {
  const std::vector<Tensor> params{Tensor::from({0.0, 1.0})};
  const auto report = grad_check([](Tape&, std::span<const Var> p) { return sum(relu(p[0])); }, params, 1e-5);
  CHECK(report.kink_count == 1);
  REQUIRE(report.coordinates.size() == 2);
  CHECK(report.coordinates[0].kink);
  CHECK_FALSE(report.coordinates[1].kink);
  CHECK(report.max_rel_error < 1e-9);
}

TEST_CASE("grad_check: nondeterministic loss is detected") {
  int calls = 0;
  const std::vector<Tensor> params{Tensor::from({1.0})};
  CHECK_THROWS_AS(grad_check(
                      [&](Tape& tape, std::span<const Var> p) {
                        ++calls;
                        return add(sum(p[0]), sum(tape.constant(Tensor::scalar(calls))));
                      },
                      params, 1e-5),
                  NumericError);
  CHECK_THROWS_AS(grad_check([](Tape&, std::span<const Var> p) { return sum(p[0]); }, params, 0.0), ArgumentError);
}

TEST_CASE("relative error definition") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 1e-12) == doctest::Approx(1e-4));
}

TEST_CASE("end-to-end encoder loss on a 4-entity toy graph matches central differences") {
  const TemporalKG kg = tkgr::testing::kg_from_text(
      "a\tr0\tb\t1\nb\tr1\tc\t2\nc\tr0\td\t3\nd\tr1\ta\t4\na\tr1\tc\t5\nb\tr0\td\t6\nc\tr1\ta\t7\n");
  TrainConfig cfg;
  cfg.dim = 3;
  cfg.budget = 4;
  cfg.window = 10;
  cfg.negatives = 2;
  const ModelParams base = tkgr::testing::random_params(kg.num_entities(), kg.num_relations(), cfg.dim, 5);
  std::mt19937_64 rng(3);
  std::vector<TrainingExample> examples;
  for (std::size_t i = 3; i < kg.num_quadruples(); ++i) {
    const auto ex = draw_task_examples(std::span(&kg.quadruple(i), 1), kg.quadruple(i).subject, kg.num_entities(),
                                       cfg.negatives, rng);
    examples.push_back(ex[0]);
  }
  NeighborCache cache(kg, cfg.budget, cfg.window);
  const std::vector<Tensor> params(base.trainable.begin(), base.trainable.end());
  const auto report = grad_check(
      [&](Tape&, std::span<const Var> p) {
        return tkgr::testing::example_loss_on(p, base, cache, examples, cfg);
      },
      params, 1e-5);
  CHECK(report.coordinates.size() == parameter_count(base.trainable));
  CHECK(report.max_rel_error < 1e-4);
}

}  // TEST_SUITE
