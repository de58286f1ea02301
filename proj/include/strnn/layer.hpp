// SPDX-License-Identifier: Apache-2.0
//
// Whole-sequence forward passes for one cell layer and for stacks of layers.
//
// Input-side affine terms do not depend on the recurrent state, so they are
// computed for every time step before the sequential scan. For strongly-typed
// cells this is all of the learnware; only the coordinatewise firmware is left
// inside the scan.

#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "strnn/cells.hpp"

namespace strnn {

/// Everything backpropagation needs from one layer's forward pass.
struct LayerTape {
  CellKind kind = CellKind::rnn;
  std::vector<Vector> inputs;       // x_1..x_T as fed to the cell
  std::vector<Vector> prev_inputs;  // x_0..x_{T-1}; only for T-LSTM / T-GRU
  std::vector<CellState> states;    // T + 1 entries, states[0] is the initial state
  std::vector<StepActivations> acts;

  std::size_t steps() const noexcept { return acts.size(); }
  const Vector& output(std::size_t t) const { return states[t + 1].h; }
  std::vector<Vector> outputs() const {
    std::vector<Vector> out;
    out.reserve(steps());
    for (std::size_t t = 0; t < steps(); ++t) out.push_back(output(t));
    return out;
  }
};

namespace detail {

struct GateKernel {
  Matrix wt;  // W transposed
  Matrix vt;  // V transposed (may be empty)
  const Vector* bias = nullptr;

  explicit GateKernel(const AffineParams& g)
      : wt(g.W.transposed()), vt(g.V.empty() ? Matrix() : g.V.transposed()),
        bias(g.b.empty() ? nullptr : &g.b) {}

  /// b + W x (+ V u when `u` is given).
  Vector input_side(const Vector& x, const Vector* u) const {
    Vector a = bias ? *bias : Vector(wt.cols());
    matvec_acc_pretransposed(wt, x.span(), a.span());
    if (u != nullptr) matvec_acc_pretransposed(vt, u->span(), a.span());
    return a;
  }
  void add_recurrent(const Vector& h, Vector& a) const {
    matvec_acc_pretransposed(vt, h.span(), a.span());
  }
};

}  // namespace detail

/// Runs one layer over a sequence. `prev_inputs` is required (same length as
/// `inputs`) for T-LSTM / T-GRU and ignored otherwise.
inline LayerTape forward_layer(const CellParams& p, std::vector<Vector> inputs,
                               std::vector<Vector> prev_inputs, CellState init) {
  const std::size_t T = inputs.size();
  const std::size_t d = p.hidden_dim;
  for (const auto& x : inputs) detail::check_params(p, x.dim());
  detail::check_hidden(p, init.h, "forward_layer");
  if (has_memory_cell(p.kind) && !init.c) init.c = Vector(d);

  LayerTape tape;
  tape.kind = p.kind;
  tape.states.reserve(T + 1);
  tape.states.push_back(std::move(init));
  tape.acts.reserve(T);

  if (uses_prev_input(p.kind)) {
    if (prev_inputs.size() != T) {
      throw DimensionError("forward_layer: prev_inputs length must match inputs");
    }
    for (const auto& x : prev_inputs) detail::check_params(p, x.dim());
  } else {
    prev_inputs.clear();
  }

  switch (p.kind) {
    case CellKind::t_rnn:
    case CellKind::t_lstm:
    case CellKind::t_gru: {
      // Learnware for the whole window, then the firmware scan.
      const bool prev = uses_prev_input(p.kind);
      const detail::GateKernel kz(p.z), kf(p.f);
      std::optional<detail::GateKernel> ko;
      if (prev) ko.emplace(p.o);
      for (std::size_t t = 0; t < T; ++t) {
        const Vector* u = prev ? &prev_inputs[t] : nullptr;
        StepActivations a;
        a.z = kz.input_side(inputs[t], u);
        a.f = kf.input_side(inputs[t], u);
        coordwise_inplace(Unary::sigmoid(), a.f);
        if (prev) {
          Vector o = ko->input_side(inputs[t], u);
          coordwise_inplace(Unary::tanh(), o);
          a.o = std::move(o);
        }
        tape.acts.push_back(std::move(a));
      }
      for (std::size_t t = 0; t < T; ++t) {
        tape.states.push_back(typed_firmware(p.kind, tape.acts[t], tape.states[t]));
      }
      break;
    }
    case CellKind::rnn: {
      const detail::GateKernel k(p.z);
      for (std::size_t t = 0; t < T; ++t) {
        Vector a = k.input_side(inputs[t], nullptr);
        k.add_recurrent(tape.states[t].h, a);
        coordwise_inplace(Unary::sigmoid(), a);
        tape.states.push_back(CellState{a, std::nullopt});
        tape.acts.push_back(StepActivations{Vector(), std::move(a), std::nullopt});
      }
      break;
    }
    case CellKind::lstm: {
      const detail::GateKernel kz(p.z), kf(p.f), ko(p.o);
      for (std::size_t t = 0; t < T; ++t) {
        const CellState& s = tape.states[t];
        Vector z = kz.input_side(inputs[t], nullptr);
        Vector f = kf.input_side(inputs[t], nullptr);
        Vector o = ko.input_side(inputs[t], nullptr);
        kz.add_recurrent(s.h, z);
        kf.add_recurrent(s.h, f);
        ko.add_recurrent(s.h, o);
        coordwise_inplace(Unary::tanh(), z);
        coordwise_inplace(Unary::sigmoid(), f);
        coordwise_inplace(Unary::tanh(), o);
        const Vector& c = *s.c;
        Vector cn(d), hn(d);
        for (std::size_t i = 0; i < d; ++i) {
          cn[i] = f[i] * c[i] + (1.0 - f[i]) * z[i];
          hn[i] = tanh_open(cn[i]) * o[i];
        }
        tape.states.push_back(CellState{std::move(hn), std::move(cn)});
        tape.acts.push_back(StepActivations{std::move(f), std::move(z), std::move(o)});
      }
      break;
    }
    case CellKind::gru: {
      const detail::GateKernel kz(p.z), kf(p.f), ko(p.o);
      for (std::size_t t = 0; t < T; ++t) {
        const Vector& h = tape.states[t].h;
        Vector z = kz.input_side(inputs[t], nullptr);
        Vector f = kf.input_side(inputs[t], nullptr);
        Vector o = ko.input_side(inputs[t], nullptr);
        kz.add_recurrent(h, z);
        kf.add_recurrent(h, f);
        coordwise_inplace(Unary::sigmoid(), z);
        coordwise_inplace(Unary::sigmoid(), f);
        ko.add_recurrent(hadamard(z, h), o);
        coordwise_inplace(Unary::tanh(), o);
        Vector hn(d);
        for (std::size_t i = 0; i < d; ++i) hn[i] = f[i] * h[i] + (1.0 - f[i]) * o[i];
        tape.states.push_back(CellState{std::move(hn), std::nullopt});
        tape.acts.push_back(StepActivations{std::move(f), std::move(z), std::move(o)});
      }
      break;
    }
    case CellKind::t_mr: {
      const Matrix wt = p.z.W.transposed();
      for (std::size_t t = 0; t < T; ++t) {
        Vector a = p.offset;
        matvec_acc_pretransposed(wt, inputs[t].span(), a.span());
        const Vector& h = tape.states[t].h;
        for (std::size_t i = 0; i < d; ++i) a[i] += p.decay[i] * h[i];
        coordwise_inplace(Unary::relu(), a);
        tape.states.push_back(CellState{a, std::nullopt});
        tape.acts.push_back(StepActivations{Vector(), std::move(a), std::nullopt});
      }
      break;
    }
    case CellKind::scrn_state: {
      for (std::size_t t = 0; t < T; ++t) {
        Vector s = scrn_state_step(p.alpha, p.z.W, tape.states[t].h, inputs[t]);
        tape.states.push_back(CellState{s, std::nullopt});
        tape.acts.push_back(StepActivations{});
      }
      break;
    }
  }

  tape.inputs = std::move(inputs);
  tape.prev_inputs = std::move(prev_inputs);
  return tape;
}

// ---------------------------------------------------------------------------
// Stacks

/// State carried between consecutive windows of a stacked model.
struct StackState {
  std::vector<CellState> cells;   // per layer
  std::vector<Vector> last_inputs;  // per layer: undropped input at the last step

  static StackState zeros(std::span<const CellParams> layers) {
    StackState s;
    for (const auto& p : layers) {
      s.cells.push_back(CellState::zeros(p.kind, p.hidden_dim));
      s.last_inputs.emplace_back(p.input_dim);
    }
    return s;
  }
  friend bool operator==(const StackState&, const StackState&) = default;
};

struct StackTape {
  std::vector<LayerTape> layers;
  /// masks[l] scales the input of layer l (l >= 1); masks[L] scales the top
  /// output. All empty when dropout is off.
  std::vector<std::vector<Vector>> masks;
  std::vector<Vector> outputs;  // top-layer outputs after dropout
  StackState final_state;
};

inline void check_stack(std::span<const CellParams> layers) {
  if (layers.empty()) throw std::invalid_argument("stack: no layers");
  for (std::size_t l = 1; l < layers.size(); ++l) {
    detail::require_dims(layers[l].input_dim == layers[l - 1].hidden_dim, "stack layer input",
                         layers[l].input_dim, layers[l - 1].hidden_dim);
  }
}

/// Forward pass through stacked layers. Dropout (inverted, rate `dropout`)
/// touches only vertical connections: the input of every layer above the
/// first and the top output. Recurrent arguments (h_{t-1}, c_{t-1}, x_{t-1})
/// always see undropped values. A zero rate draws nothing from `rng`.
inline StackTape stack_forward(std::span<const CellParams> layers, std::span<const Vector> xs,
                               const StackState& init, double dropout = 0.0,
                               Rng* rng = nullptr) {
  check_stack(layers);
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument("stack_forward: dropout rate must lie in [0, 1)");
  }
  if (dropout > 0.0 && rng == nullptr) {
    throw std::invalid_argument("stack_forward: dropout requires an rng");
  }
  const std::size_t L = layers.size();
  const std::size_t T = xs.size();
  const double keep_scale = 1.0 / (1.0 - dropout);

  auto make_mask = [&](std::size_t dim) {
    Vector m(dim);
    for (double& x : m) x = rng->uniform() < dropout ? 0.0 : keep_scale;
    return m;
  };

  StackTape tape;
  tape.masks.resize(L + 1);
  std::vector<Vector> raw(xs.begin(), xs.end());  // undropped input of the current layer
  for (std::size_t l = 0; l < L; ++l) {
    const CellParams& p = layers[l];
    std::vector<Vector> inputs = raw;
    if (l > 0 && dropout > 0.0) {
      for (std::size_t t = 0; t < T; ++t) {
        tape.masks[l].push_back(make_mask(p.input_dim));
        inputs[t] = hadamard(inputs[t], tape.masks[l][t]);
      }
    }
    std::vector<Vector> prev;
    if (uses_prev_input(p.kind)) {
      prev.reserve(T);
      for (std::size_t t = 0; t < T; ++t) prev.push_back(t == 0 ? init.last_inputs[l] : raw[t - 1]);
    }
    tape.final_state.last_inputs.push_back(T == 0 ? init.last_inputs[l] : raw[T - 1]);
    tape.layers.push_back(forward_layer(p, std::move(inputs), std::move(prev), init.cells[l]));
    tape.final_state.cells.push_back(tape.layers.back().states.back());
    raw = tape.layers.back().outputs();
  }
  if (dropout > 0.0) {
    for (std::size_t t = 0; t < T; ++t) {
      tape.masks[L].push_back(make_mask(layers.back().hidden_dim));
      raw[t] = hadamard(raw[t], tape.masks[L][t]);
    }
  }
  tape.outputs = std::move(raw);
  return tape;
}

}  // namespace strnn
