// SPDX-License-Identifier: Apache-2.0
//
// The cell specifications shipped in specs/, embedded so the CLI and tests
// do not depend on the working directory. Keep in sync with the .cell files
// (checked by the test-suite).

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "strnn/cells.hpp"
#include "strnn/interpret.hpp"
#include "strnn/spec_dsl.hpp"

namespace strnn::dsl {

struct ShippedSpec {
  std::string_view name;         // file stem in specs/
  std::optional<CellKind> kind;  // native cell, if any
  bool well_typed;
  std::string_view text;
};

inline const std::array<ShippedSpec, 9>& shipped_specs() {
  static const std::array<ShippedSpec, 9> specs{{
    ShippedSpec{"rnn", CellKind::rnn, false, R"cell(# Vanilla RNN: the recurrent matrix acts on the state every step.
cell rnn {
  state h: H;
  input x: X;
  h' = sigmoid(affine[general, bias](h, x));
}
)cell"},
    ShippedSpec{"lstm", CellKind::lstm, false, R"cell(# LSTM without an input gate.
cell lstm {
  state h: H;
  state c: H;
  input x: X;
  z = tanh(affine[general, bias](h, x));
  f = sigmoid(affine[general, bias](h, x));
  o = tanh(affine[general, bias](h, x));
  c' = f (*) c + (1 - f) (*) z;
  h' = o (*) tanh(c');
}
)cell"},
    ShippedSpec{"gru", CellKind::gru, false, R"cell(cell gru {
  state h: H;
  input x: X;
  z = sigmoid(affine[general, bias](h, x));
  f = sigmoid(affine[general, bias](h, x));
  o = tanh(affine[general, bias](z (*) h, x));
  h' = f (*) h + (1 - f) (*) o;
}
)cell"},
    ShippedSpec{"t_rnn", CellKind::t_rnn, true, R"cell(cell t_rnn {
  state h: H;
  input x: X;
  z = affine[general](x);
  f = sigmoid(affine[general, bias](x));
  h' = f (*) h + (1 - f) (*) z;
}
)cell"},
    ShippedSpec{"t_lstm", CellKind::t_lstm, true, R"cell(# The previous input is carried as a state port.
cell t_lstm {
  state h: H;
  state c: H;
  state xp: X;
  input x: X;
  z = affine[general, bias](xp, x);
  f = sigmoid(affine[general, bias](xp, x));
  o = tanh(affine[general, bias](xp, x));
  c' = f (*) c + (1 - f) (*) z;
  h' = o (*) c';
  xp' = x;
}
)cell"},
    ShippedSpec{"t_gru", CellKind::t_gru, true, R"cell(cell t_gru {
  state h: H;
  state xp: X;
  input x: X;
  z = affine[general, bias](xp, x);
  f = sigmoid(affine[general, bias](xp, x));
  o = tanh(affine[general, bias](xp, x));
  h' = f (*) h + z (*) o;
  xp' = x;
}
)cell"},
    ShippedSpec{"t_mr", CellKind::t_mr, true, R"cell(cell t_mr {
  state h: H;
  input x: X;
  h' = relu(affine[diagonal](h) + affine[general, bias](x));
}
)cell"},
    ShippedSpec{"scrn_state", CellKind::scrn_state, true, R"cell(# Slow context layer: alpha and 1 - alpha are the two scalars.
cell scrn_state {
  state s: S;
  input x: X;
  s' = affine[scalar](s) + affine[scalar](affine[general](x));
}
)cell"},
    ShippedSpec{"rnn_symmetric", std::nullopt, true, R"cell(cell rnn_symmetric {
  state h: H;
  input x: X;
  h' = sigmoid(affine[symmetric](h) + affine[general, bias](x));
}
)cell"},
  }};
  return specs;
}

/// Looks a shipped spec up by name; '-' and '_' are interchangeable.
inline const ShippedSpec* find_shipped(std::string_view name) {
  std::string key(name);
  for (char& c : key)
    if (c == '-') c = '_';
  for (const auto& s : shipped_specs())
    if (s.name == key) return &s;
  return nullptr;
}

namespace detail {

inline Matrix hcat(const Matrix& a, const Matrix& b) {
  strnn::detail::require_dims(a.rows() == b.rows(), "hcat", a.rows(), b.rows());
  Matrix m(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) m(i, a.cols() + j) = b(i, j);
  }
  return m;
}

inline Matrix column(const Vector& v) {
  Matrix m(v.dim(), 1);
  for (std::size_t i = 0; i < v.dim(); ++i) m(i, 0) = v[i];
  return m;
}

inline Matrix one_by_one(double x) {
  Matrix m(1, 1);
  m(0, 0) = x;
  return m;
}

}  // namespace detail

/// Affine blocks of a shipped spec, in node order, from native parameters.
/// `rnn_symmetric` takes rnn parameters (V is used as given).
inline SpecParams spec_params(std::string_view spec_name, const CellParams& p) {
  using detail::hcat;
  const std::string name(find_shipped(spec_name) ? find_shipped(spec_name)->name : spec_name);
  auto full = [&](const AffineParams& g) { return AffineTensors{hcat(g.V, g.W), g.b}; };
  if (name == "rnn" && p.kind == CellKind::rnn) return {full(p.z)};
  if ((name == "lstm" && p.kind == CellKind::lstm) || (name == "gru" && p.kind == CellKind::gru) ||
      (name == "t_lstm" && p.kind == CellKind::t_lstm) || (name == "t_gru" && p.kind == CellKind::t_gru)) {
    return {full(p.z), full(p.f), full(p.o)};
  }
  if (name == "t_rnn" && p.kind == CellKind::t_rnn) {
    return {AffineTensors{p.z.W, Vector()}, AffineTensors{p.f.W, p.f.b}};
  }
  if (name == "t_mr" && p.kind == CellKind::t_mr) {
    return {AffineTensors{detail::column(p.decay), Vector()}, AffineTensors{p.z.W, p.offset}};
  }
  if (name == "scrn_state" && p.kind == CellKind::scrn_state) {
    return {AffineTensors{detail::one_by_one(p.alpha), Vector()},
            AffineTensors{detail::one_by_one(1.0 - p.alpha), Vector()}, AffineTensors{p.z.W, Vector()}};
  }
  if (name == "rnn_symmetric" && p.kind == CellKind::rnn) {
    return {AffineTensors{p.z.V, Vector()}, AffineTensors{p.z.W, p.z.b}};
  }
  throw std::invalid_argument("spec_params: no mapping from " + std::string(to_string(p.kind)) +
                              " parameters to spec '" + name + "'");
}

/// State ports of a shipped spec from a native state and previous input.
inline Env spec_state(std::string_view spec_name, const CellState& s, const Vector& x_prev) {
  const ShippedSpec* spec = find_shipped(spec_name);
  if (spec == nullptr) throw std::invalid_argument("spec_state: unknown spec");
  Env env;
  if (spec->name == "scrn_state") {
    env["s"] = s.h;
    return env;
  }
  env["h"] = s.h;
  if (s.c) env["c"] = *s.c;
  if (spec->kind && uses_prev_input(*spec->kind)) env["xp"] = x_prev;
  return env;
}

}  // namespace strnn::dsl
