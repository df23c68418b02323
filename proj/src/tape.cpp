#include "tkgr/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tkgr/error.hpp"

namespace tkgr {

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kMatVec: return "matvec";
    case Op::kVecMat: return "vecmat";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSqrt: return "sqrt";
    case Op::kConcat: return "concat";
    case Op::kStack: return "stack";
    case Op::kSum: return "sum";
    case Op::kDivScalar: return "div_scalar";
    case Op::kGatherRow: return "gather_row";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on tensor " + v.shape_string());
  return v[0];
}

const Tensor& Gradients::of(Var leaf) const {
  if (leaf.id() >= grads_.size() || !is_leaf_[leaf.id()]) {
    throw ArgumentError("gradient requested for a non-leaf node");
  }
  return grads_[leaf.id()];
}

namespace {

[[noreturn]] void shape_fail(Op op, std::span<const Tensor* const> in) {
  std::string msg = std::string(op_name(op)) + ": incompatible operand shapes";
  for (const Tensor* t : in) msg += " " + t->shape_string();
  throw ShapeError(msg);
}

void check_shapes(Op op, std::span<const Tensor* const> in, std::size_t index) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                       " operands, got " + std::to_string(in.size()));
    }
  };
  switch (op) {
    case Op::kLeaf:
    case Op::kConstant:
      break;
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
      arity(2);
      if (!in[0]->same_shape(*in[1])) shape_fail(op, in);
      break;
    case Op::kScale:
    case Op::kAddScalar:
    case Op::kRelu:
    case Op::kExp:
    case Op::kLog:
    case Op::kSqrt:
    case Op::kSum:
      arity(1);
      break;
    case Op::kMatVec:
      arity(2);
      if (!in[0]->is_matrix() || !in[1]->is_vector() || in[0]->cols() != in[1]->size()) {
        shape_fail(op, in);
      }
      break;
    case Op::kVecMat:
      arity(2);
      if (!in[0]->is_vector() || !in[1]->is_matrix() || in[1]->rows() != in[0]->size()) {
        shape_fail(op, in);
      }
      break;
    case Op::kConcat:
      if (in.empty()) shape_fail(op, in);
      for (const Tensor* t : in) {
        if (!t->is_vector()) shape_fail(op, in);
      }
      break;
    case Op::kStack:
      if (in.empty()) shape_fail(op, in);
      for (const Tensor* t : in) {
        if (!t->is_vector() || t->size() != in[0]->size()) shape_fail(op, in);
      }
      break;
    case Op::kDivScalar:
      arity(2);
      if (!in[0]->is_vector() || in[1]->size() != 1) shape_fail(op, in);
      break;
    case Op::kGatherRow:
      arity(1);
      if (!in[0]->is_matrix() || index >= in[0]->rows()) {
        throw ShapeError(std::string("gather_row: row ") + std::to_string(index) +
                         " out of range for " + in[0]->shape_string());
      }
      break;
  }
}

Tensor like(const Tensor& t) {
  return t.is_matrix() ? Tensor::matrix(t.rows(), t.cols()) : Tensor::vector(t.size());
}

Tensor evaluate(Op op, std::span<const Tensor* const> in, double aux, std::size_t index) {
  switch (op) {
    case Op::kLeaf:
    case Op::kConstant:
      break;
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      Tensor out = like(*in[0]);
      auto a = in[0]->values();
      auto b = in[1]->values();
      auto o = out.values();
      for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = op == Op::kAdd ? a[i] + b[i] : op == Op::kSub ? a[i] - b[i] : a[i] * b[i];
      }
      return out;
    }
    case Op::kScale:
    case Op::kAddScalar:
    case Op::kRelu:
    case Op::kExp:
    case Op::kLog:
    case Op::kSqrt: {
      Tensor out = like(*in[0]);
      auto a = in[0]->values();
      auto o = out.values();
      for (std::size_t i = 0; i < o.size(); ++i) {
        switch (op) {
          case Op::kScale: o[i] = a[i] * aux; break;
          case Op::kAddScalar: o[i] = a[i] + aux; break;
          case Op::kRelu: o[i] = a[i] > 0.0 ? a[i] : 0.0; break;
          case Op::kExp: o[i] = std::exp(a[i]); break;
          case Op::kLog: o[i] = std::log(a[i]); break;
          default: o[i] = std::sqrt(a[i]); break;
        }
      }
      return out;
    }
    case Op::kMatVec: {
      const Tensor& m = *in[0];
      Tensor out = Tensor::vector(m.rows());
      for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), in[1]->values());
      return out;
    }
    case Op::kVecMat: {
      const Tensor& v = *in[0];
      const Tensor& m = *in[1];
      Tensor out = Tensor::vector(m.cols());
      for (std::size_t r = 0; r < m.rows(); ++r) {
        const double w = v[r];
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) out[c] += w * row[c];
      }
      return out;
    }
    case Op::kConcat: {
      std::size_t n = 0;
      for (const Tensor* t : in) n += t->size();
      std::vector<double> values;
      values.reserve(n);
      for (const Tensor* t : in) values.insert(values.end(), t->values().begin(), t->values().end());
      return Tensor::from(std::move(values));
    }
    case Op::kStack: {
      const std::size_t cols = in[0]->size();
      std::vector<double> values;
      values.reserve(in.size() * cols);
      for (const Tensor* t : in) values.insert(values.end(), t->values().begin(), t->values().end());
      return Tensor::from(in.size(), cols, std::move(values));
    }
    case Op::kSum: {
      double s = 0.0;
      for (double v : in[0]->values()) s += v;
      return Tensor::scalar(s);
    }
    case Op::kDivScalar: {
      Tensor out = like(*in[0]);
      const double d = (*in[1])[0];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] / d;
      return out;
    }
    case Op::kGatherRow: {
      auto row = in[0]->row(index);
      return Tensor::from(std::vector<double>(row.begin(), row.end()));
    }
  }
  return {};
}

}  // namespace

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite input " + value.shape_string());
  nodes_.push_back({Op::kLeaf, static_cast<std::uint32_t>(parent_pool_.size()), 0, 0.0, 0,
                    std::move(value)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite input " + value.shape_string());
  nodes_.push_back({Op::kConstant, static_cast<std::uint32_t>(parent_pool_.size()), 0, 0.0, 0,
                    std::move(value)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::apply(Op op, std::span<const Var> operands, double aux, std::size_t index) {
  if (op == Op::kLeaf || op == Op::kConstant) {
    throw ArgumentError("apply: inputs are created with leaf() or constant()");
  }
  std::vector<const Tensor*> in;
  in.reserve(operands.size());
  for (const Var& v : operands) {
    if (v.tape() != this) throw ArgumentError(std::string(op_name(op)) + ": operand from another tape");
    in.push_back(&nodes_[v.id()].value);
  }
  check_shapes(op, in, index);
  Tensor out = evaluate(op, in, aux, index);
  if (!out.all_finite()) {
    throw NumericError(std::string(op_name(op)) + ": non-finite result");
  }
  const auto begin = static_cast<std::uint32_t>(parent_pool_.size());
  for (const Var& v : operands) parent_pool_.push_back(v.id());
  nodes_.push_back({op, begin, static_cast<std::uint32_t>(operands.size()), aux, index, std::move(out)});
  return Var(this, nodes_.size() - 1);
}

Tensor Tape::compute(const Node& node) const {
  std::vector<const Tensor*> in;
  for (std::size_t p : parents(node)) in.push_back(&nodes_[p].value);
  return evaluate(node.op, in, node.aux, node.index);
}

void Tape::replay() {
  for (Node& node : nodes_) {
    if (node.op == Op::kLeaf || node.op == Op::kConstant) continue;
    node.value = compute(node);
  }
}

void Tape::set_input(Var input, Tensor value) {
  Node& node = nodes_.at(input.id());
  if (node.op != Op::kLeaf && node.op != Op::kConstant) throw ArgumentError("set_input on a derived node");
  if (!value.same_shape(node.value)) throw ShapeError("set_input: shape changed");
  node.value = std::move(value);
}

std::vector<bool> Tape::activation_pattern() const {
  std::vector<bool> pattern;
  for (const Node& node : nodes_) {
    if (node.op != Op::kRelu) continue;
    for (double v : nodes_[parents(node)[0]].value.values()) pattern.push_back(v > 0.0);
  }
  return pattern;
}

Gradients Tape::backward(Var root) const {
  if (root.tape() != this) throw ArgumentError("backward: root from another tape");
  if (nodes_[root.id()].value.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + nodes_[root.id()].value.shape_string());
  }
  std::vector<Tensor> grads(nodes_.size());
  auto grad_of = [&](std::size_t id) -> Tensor& {
    if (grads[id].empty()) grads[id] = like(nodes_[id].value);
    return grads[id];
  };
  grad_of(root.id())[0] = 1.0;

  for (std::size_t id = root.id() + 1; id-- > 0;) {
    if (grads[id].empty()) continue;
    const Node& node = nodes_[id];
    if (node.op == Op::kLeaf || node.op == Op::kConstant) continue;
    const Tensor& g = grads[id];
    auto ps = parents(node);
    switch (node.op) {
      case Op::kAdd:
      case Op::kSub: {
        Tensor& ga = grad_of(ps[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = grad_of(ps[1]);
        const double sign = node.op == Op::kAdd ? 1.0 : -1.0;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
        break;
      }
      case Op::kMul: {
        const Tensor& a = nodes_[ps[0]].value;
        const Tensor& b = nodes_[ps[1]].value;
        Tensor& ga = grad_of(ps[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        Tensor& gb = grad_of(ps[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        break;
      }
      case Op::kScale: {
        Tensor& ga = grad_of(ps[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * node.aux;
        break;
      }
      case Op::kAddScalar: {
        Tensor& ga = grad_of(ps[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
      case Op::kMatVec: {
        const Tensor& m = nodes_[ps[0]].value;
        const Tensor& v = nodes_[ps[1]].value;
        Tensor& gm = grad_of(ps[0]);
        Tensor& gv = grad_of(ps[1]);
        for (std::size_t r = 0; r < m.rows(); ++r) {
          auto mrow = m.row(r);
          auto gmrow = gm.row(r);
          for (std::size_t c = 0; c < m.cols(); ++c) {
            gmrow[c] += g[r] * v[c];
            gv[c] += g[r] * mrow[c];
          }
        }
        break;
      }
      case Op::kVecMat: {
        const Tensor& v = nodes_[ps[0]].value;
        const Tensor& m = nodes_[ps[1]].value;
        Tensor& gv = grad_of(ps[0]);
        Tensor& gm = grad_of(ps[1]);
        for (std::size_t r = 0; r < m.rows(); ++r) {
          auto mrow = m.row(r);
          auto gmrow = gm.row(r);
          double acc = 0.0;
          for (std::size_t c = 0; c < m.cols(); ++c) {
            acc += mrow[c] * g[c];
            gmrow[c] += v[r] * g[c];
          }
          gv[r] += acc;
        }
        break;
      }
      case Op::kRelu: {
        const Tensor& x = nodes_[ps[0]].value;
        Tensor& ga = grad_of(ps[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (x[i] > 0.0) ga[i] += g[i];
        }
        break;
      }
      case Op::kExp: {
        Tensor& ga = grad_of(ps[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * node.value[i];
        break;
      }
      case Op::kLog: {
        const Tensor& x = nodes_[ps[0]].value;
        Tensor& ga = grad_of(ps[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
        break;
      }
      case Op::kSqrt: {
        Tensor& ga = grad_of(ps[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / node.value[i];
        break;
      }
      case Op::kConcat: {
        std::size_t offset = 0;
        for (std::size_t p : ps) {
          Tensor& gp = grad_of(p);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
          offset += gp.size();
        }
        break;
      }
      case Op::kStack: {
        for (std::size_t r = 0; r < ps.size(); ++r) {
          Tensor& gp = grad_of(ps[r]);
          auto grow = g.row(r);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += grow[i];
        }
        break;
      }
      case Op::kSum: {
        Tensor& ga = grad_of(ps[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
        break;
      }
      case Op::kDivScalar: {
        const Tensor& v = nodes_[ps[0]].value;
        const double d = nodes_[ps[1]].value[0];
        Tensor& gv = grad_of(ps[0]);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          gv[i] += g[i] / d;
          acc += g[i] * v[i];
        }
        grad_of(ps[1])[0] -= acc / (d * d);
        break;
      }
      case Op::kGatherRow: {
        Tensor& gm = grad_of(ps[0]);
        auto grow = gm.row(node.index);
        for (std::size_t i = 0; i < g.size(); ++i) grow[i] += g[i];
        break;
      }
      case Op::kLeaf:
      case Op::kConstant:
        break;
    }
  }

  Gradients out;
  out.is_leaf_.resize(nodes_.size(), false);
  out.grads_.resize(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].op != Op::kLeaf) continue;
    out.is_leaf_[id] = true;
    out.grads_[id] = grads[id].empty() ? like(nodes_[id].value) : std::move(grads[id]);
  }
  return out;
}

namespace {
Var unary(Op op, Var a, double aux = 0.0, std::size_t index = 0) {
  const Var ops[] = {a};
  return a.tape()->apply(op, ops, aux, index);
}
Var binary(Op op, Var a, Var b) {
  const Var ops[] = {a, b};
  return a.tape()->apply(op, ops);
}
}  // namespace

Var add(Var a, Var b) { return binary(Op::kAdd, a, b); }
Var sub(Var a, Var b) { return binary(Op::kSub, a, b); }
Var mul(Var a, Var b) { return binary(Op::kMul, a, b); }
Var scale(Var a, double c) { return unary(Op::kScale, a, c); }
Var add_scalar(Var a, double c) { return unary(Op::kAddScalar, a, c); }
Var matvec(Var m, Var v) { return binary(Op::kMatVec, m, v); }
Var vecmat(Var v, Var m) { return binary(Op::kVecMat, v, m); }
Var relu(Var a) { return unary(Op::kRelu, a); }
Var exp(Var a) { return unary(Op::kExp, a); }
Var log(Var a) { return unary(Op::kLog, a); }
Var sqrt(Var a) { return unary(Op::kSqrt, a); }
Var sum(Var a) { return unary(Op::kSum, a); }
Var div_scalar(Var v, Var s) { return binary(Op::kDivScalar, v, s); }
Var gather_row(Var m, std::size_t row) { return unary(Op::kGatherRow, m, 0.0, row); }

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  return parts[0].tape()->apply(Op::kConcat, parts);
}
Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}
Var stack(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack: no operands");
  return rows[0].tape()->apply(Op::kStack, rows);
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

Var softmax(Var a) {
  const auto values = a.value().values();
  const double top = *std::max_element(values.begin(), values.end());
  Var e = exp(add_scalar(a, -top));
  return div_scalar(e, sum(e));
}

}  // namespace tkgr
