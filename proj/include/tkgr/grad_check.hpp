#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tkgr/tape.hpp"
#include "tkgr/tensor.hpp"

namespace tkgr {

// Builds a scalar loss on `tape` from leaves holding the parameters, in the
// order the parameters were passed to grad_check. Must be deterministic.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct Coordinate {
  std::size_t param = 0;
  std::size_t index = 0;
};

struct CoordinateCheck {
  Coordinate where;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  // The +/- step evaluations took a different ReLU branch than the base point.
  bool kink = false;
};

struct GradCheckReport {
  // Largest relative error over coordinates not flagged as kinks.
  double max_rel_error = 0.0;
  std::optional<Coordinate> worst;
  std::size_t kink_count = 0;
  std::vector<CoordinateCheck> coordinates;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

// |a - f| / max(|a|, |f|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares reverse-mode gradients with central differences coordinate-wise.
// Throws NumericError if two forward passes at the same point disagree.
GradCheckReport grad_check(const LossBuilder& loss, std::span<const Tensor> params, double step);

// Central-difference gradient of a plain scalar function.
std::vector<Tensor> numeric_gradient(const std::function<double(std::span<const Tensor>)>& f,
                                     std::span<const Tensor> params, double step);

}  // namespace tkgr
