#include "tkgr/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "tkgr/error.hpp"

namespace tkgr {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Evaluation {
  double value;
  std::vector<bool> pattern;
};

Evaluation evaluate(const LossBuilder& loss, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
  Var root = loss(tape, leaves);
  return {root.scalar(), tape.activation_pattern()};
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss, std::span<const Tensor> params, double step) {
  if (!(step > 0.0)) throw ArgumentError("grad_check: step must be positive");

  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
  Var root = loss(tape, leaves);
  const Gradients grads = tape.backward(root);
  const std::vector<bool> base_pattern = tape.activation_pattern();

  const Evaluation again = evaluate(loss, params);
  if (again.value != root.scalar()) {
    throw NumericError("grad_check: loss is not deterministic");
  }

  GradCheckReport report;
  std::vector<Tensor> work(params.begin(), params.end());
  for (std::size_t p = 0; p < work.size(); ++p) {
    const Tensor& analytic = grads.of(leaves[p]);
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double original = work[p][i];
      work[p][i] = original + step;
      const Evaluation plus = evaluate(loss, work);
      work[p][i] = original - step;
      const Evaluation minus = evaluate(loss, work);
      work[p][i] = original;

      CoordinateCheck check;
      check.where = {p, i};
      check.analytic = analytic[i];
      check.numeric = (plus.value - minus.value) / (2.0 * step);
      check.rel_error = relative_error(check.analytic, check.numeric);
      check.kink = plus.pattern != base_pattern || minus.pattern != base_pattern;
      if (check.kink) {
        ++report.kink_count;
      } else if (!report.worst || check.rel_error > report.max_rel_error) {
        report.max_rel_error = check.rel_error;
        report.worst = check.where;
      }
      report.coordinates.push_back(check);
    }
  }
  return report;
}

std::vector<Tensor> numeric_gradient(const std::function<double(std::span<const Tensor>)>& f,
                                     std::span<const Tensor> params, double step) {
  std::vector<Tensor> work(params.begin(), params.end());
  std::vector<Tensor> out;
  for (const Tensor& p : params) {
    out.push_back(p.is_matrix() ? Tensor::matrix(p.rows(), p.cols()) : Tensor::vector(p.size()));
  }
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double original = work[p][i];
      work[p][i] = original + step;
      const double plus = f(work);
      work[p][i] = original - step;
      const double minus = f(work);
      work[p][i] = original;
      out[p][i] = (plus - minus) / (2.0 * step);
    }
  }
  return out;
}

}  // namespace tkgr
