// SPDX-License-Identifier: Apache-2.0
//
// Reference interpreter for cell specifications.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "strnn/core_math.hpp"
#include "strnn/spec_dsl.hpp"

namespace strnn::dsl {

/// Parameters of one affine node. general / orthogonal / symmetric: M is
/// rows x (sum of operand dims). diagonal: M is n x 1 holding the diagonal.
/// scalar: M is 1 x 1. `b` is empty unless the node has a bias.
struct AffineTensors {
  Matrix M;
  Vector b;
};

using SpecParams = std::vector<AffineTensors>;  // index = affine id - 1
using Env = std::map<std::string, Vector, std::less<>>;

struct StepResult {
  Env next_state;  // keyed by state port name
  Env bindings;    // keyed by printed target, e.g. "z" or "h'"
};

namespace detail {

struct Value {
  std::optional<double> scalar;
  Vector v;
};

class Interpreter {
public:
  Interpreter(const CellSpec& spec, const SpecParams& params, const Env& state, const Env& inputs)
      : spec_(spec), params_(params) {
    if (params.size() != static_cast<std::size_t>(spec.affine_count)) {
      throw DimensionError("interpret_step: expected " + std::to_string(spec.affine_count) +
                           " affine parameter blocks, got " + std::to_string(params.size()));
    }
    for (const auto& p : spec.ports) {
      const Env& src = p.is_state ? state : inputs;
      auto it = src.find(p.name);
      if (it == src.end()) throw std::invalid_argument("interpret_step: unbound port '" + p.name + "'");
      env_[p.name] = it->second;
    }
  }

  StepResult run() {
    StepResult r;
    for (const auto& s : spec_.statements) {
      Value val = eval(s.expr);
      if (val.scalar) {
        throw DimensionError("interpret_step: '" + target_name(s) + "' evaluates to a bare constant");
      }
      r.bindings[target_name(s)] = val.v;
      if (s.next_state) {
        const Vector& old = env_.at(s.target);
        detail_require(val.v.dim() == old.dim(), "next state " + target_name(s), val.v.dim(), old.dim());
        primed_[s.target] = val.v;
        r.next_state[s.target] = std::move(val.v);
      } else {
        env_[s.target] = std::move(val.v);
      }
    }
    return r;
  }

private:
  const CellSpec& spec_;
  const SpecParams& params_;
  Env env_;
  Env primed_;

  static void detail_require(bool ok, const std::string& what, std::size_t got, std::size_t want) {
    strnn::detail::require_dims(ok, what.c_str(), got, want);
  }

  static Value vec(Vector v) { return Value{std::nullopt, std::move(v)}; }

  static double apply(UnaryFn f, double factor, double x) {
    switch (f) {
      case UnaryFn::sigmoid: return sigmoid(x);
      case UnaryFn::tanh: return tanh_open(x);
      case UnaryFn::relu: return relu(x);
      case UnaryFn::scale: return factor * x;
    }
    return x;
  }
  static double apply(BinaryFn f, double a, double b) {
    switch (f) {
      case BinaryFn::add: return a + b;
      case BinaryFn::sub: return a - b;
      case BinaryFn::max: return a > b ? a : b;
      case BinaryFn::min: return a < b ? a : b;
    }
    return a;
  }

  template <class F>
  static Value zip(const Value& a, const Value& b, F f, const char* what) {
    if (a.scalar && b.scalar) return Value{f(*a.scalar, *b.scalar), {}};
    if (a.scalar) {
      Vector out(b.v.dim());
      for (std::size_t i = 0; i < out.dim(); ++i) out[i] = f(*a.scalar, b.v[i]);
      return vec(std::move(out));
    }
    if (b.scalar) {
      Vector out(a.v.dim());
      for (std::size_t i = 0; i < out.dim(); ++i) out[i] = f(a.v[i], *b.scalar);
      return vec(std::move(out));
    }
    strnn::detail::require_dims(a.v.dim() == b.v.dim(), what, a.v.dim(), b.v.dim());
    Vector out(a.v.dim());
    for (std::size_t i = 0; i < out.dim(); ++i) out[i] = f(a.v[i], b.v[i]);
    return vec(std::move(out));
  }

  Value eval(const Expr& e) {
    switch (e.kind) {
      case ExprKind::ref: {
        const Env& src = e.primed ? primed_ : env_;
        auto it = src.find(e.name);
        if (it == src.end()) throw std::invalid_argument("interpret_step: unbound name '" + e.name + "'");
        return vec(it->second);
      }
      case ExprKind::constant:
        return Value{e.value, {}};
      case ExprKind::unary: {
        Value a = eval(e.args[0]);
        if (a.scalar) return Value{apply(e.unary, e.value, *a.scalar), {}};
        for (double& x : a.v) x = apply(e.unary, e.value, x);
        return a;
      }
      case ExprKind::binary: {
        const BinaryFn f = e.binary;
        return zip(eval(e.args[0]), eval(e.args[1]), [f](double a, double b) { return apply(f, a, b); },
                   "binary operands");
      }
      case ExprKind::gate:
        return zip(eval(e.args[0]), eval(e.args[1]), [](double a, double b) { return a * b; },
                   "gate operands");
      case ExprKind::affine:
        return vec(affine(e));
    }
    return Value{0.0, {}};
  }

  Vector affine(const Expr& e) {
    std::vector<double> cat;
    for (const auto& a : e.args) {
      const Value v = eval(a);
      if (v.scalar) throw DimensionError("interpret_step: affine operand is a bare constant");
      cat.insert(cat.end(), v.v.begin(), v.v.end());
    }
    const AffineTensors& p = params_[static_cast<std::size_t>(e.affine_id - 1)];
    const std::string what = "affine#" + std::to_string(e.affine_id);
    Vector out;
    switch (e.matrix) {
      case MatrixKind::general:
      case MatrixKind::orthogonal:
      case MatrixKind::symmetric: {
        strnn::detail::require_dims(p.M.cols() == cat.size(), what.c_str(), cat.size(), p.M.cols());
        if (e.matrix == MatrixKind::symmetric) {
          strnn::detail::require_dims(p.M.rows() == p.M.cols(), what.c_str(), p.M.rows(), p.M.cols());
        }
        out = Vector(p.M.rows());
        matvec_acc(p.M, cat, out.span());
        break;
      }
      case MatrixKind::diagonal: {
        strnn::detail::require_dims(p.M.rows() == cat.size() && p.M.cols() == 1, what.c_str(),
                                    p.M.rows(), cat.size());
        out = Vector(cat.size());
        for (std::size_t i = 0; i < cat.size(); ++i) out[i] = p.M(i, 0) * cat[i];
        break;
      }
      case MatrixKind::scalar: {
        strnn::detail::require_dims(p.M.rows() == 1 && p.M.cols() == 1, what.c_str(), p.M.size(), 1);
        out = Vector(cat.size());
        for (std::size_t i = 0; i < cat.size(); ++i) out[i] = p.M(0, 0) * cat[i];
        break;
      }
    }
    if (e.bias) {
      strnn::detail::require_dims(p.b.dim() == out.dim(), what.c_str(), p.b.dim(), out.dim());
      for (std::size_t i = 0; i < out.dim(); ++i) out[i] = p.b[i] + out[i];
    } else if (!p.b.empty()) {
      throw DimensionError("interpret_step: " + what + " has no bias term but a bias was given");
    }
    return out;
  }
};

}  // namespace detail

/// Evaluates the statements of `spec` once, in order.
inline StepResult interpret_step(const CellSpec& spec, const SpecParams& params, const Env& state,
                                 const Env& inputs) {
  return detail::Interpreter(spec, params, state, inputs).run();
}

}  // namespace strnn::dsl
