// SPDX-License-Identifier: Apache-2.0
//
// Backpropagation through time for every cell kind, a central-difference
// oracle, and global-norm gradient clipping.

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "strnn/layer.hpp"

namespace strnn {

/// Gradients share the parameter layout.
using Gradients = CellParams;

inline Gradients zero_gradients(const CellParams& p) {
  Gradients g = make_params(p.kind, p.input_dim, p.hidden_dim);
  g.alpha = 0.0;
  return g;
}

struct LayerGradients {
  Gradients params;
  std::vector<Vector> d_inputs;       // dL/dx_t
  std::vector<Vector> d_prev_inputs;  // dL/dx_{t-1} through the gate path (T-LSTM / T-GRU)
  CellState d_initial;                // dL/d(initial state)
};

namespace detail {

inline void check_tape(const CellParams& p, const LayerTape& tape, std::size_t n_upstream) {
  if (tape.kind != p.kind) throw std::invalid_argument("bptt: tape was produced by another cell kind");
  if (tape.states.size() != tape.steps() + 1 || n_upstream != tape.steps()) {
    throw std::invalid_argument("bptt: tape and upstream lengths disagree");
  }
  if (!tape.inputs.empty() && tape.inputs[0].dim() != p.input_dim) {
    throw DimensionError("bptt: tape inputs do not match parameter shapes");
  }
}

/// Accumulates the gate-level gradient `da` into an affine block and the
/// input-side gradients.
inline void backprop_affine(const AffineParams& g, AffineParams& dg, const Vector& da,
                            const Vector& x, const Vector* u, Vector& dx, Vector* du) {
  outer_acc(da.span(), x.span(), dg.W);
  if (u != nullptr) outer_acc(da.span(), u->span(), dg.V);
  if (!dg.b.empty())
    for (std::size_t i = 0; i < da.dim(); ++i) dg.b[i] += da[i];
  matvec_transposed_acc(g.W, da.span(), dx.span());
  if (du != nullptr) matvec_transposed_acc(g.V, da.span(), du->span());
}

}  // namespace detail

/// Reverse-mode gradients of one layer given dL/dh_t for every step.
inline LayerGradients backward_layer(const CellParams& p, const LayerTape& tape,
                                     std::span<const Vector> d_outputs) {
  detail::check_tape(p, tape, d_outputs.size());
  const std::size_t T = tape.steps();
  const std::size_t d = p.hidden_dim;
  LayerGradients out;
  out.params = zero_gradients(p);
  out.d_inputs.assign(T, Vector(p.input_dim));
  if (uses_prev_input(p.kind)) out.d_prev_inputs.assign(T, Vector(p.input_dim));
  Gradients& g = out.params;

  Vector dh_next(d);
  Vector dc_next(d);
  for (std::size_t step = T; step-- > 0;) {
    const StepActivations& a = tape.acts[step];
    const CellState& prev = tape.states[step];
    const CellState& cur = tape.states[step + 1];
    const Vector& x = tape.inputs[step];
    Vector& dx = out.d_inputs[step];
    Vector dh = d_outputs[step] + dh_next;
    detail::require_dims(dh.dim() == d, "bptt upstream", dh.dim(), d);
    Vector dh_prev(d);

    switch (p.kind) {
      case CellKind::rnn: {
        Vector da(d);
        for (std::size_t i = 0; i < d; ++i) da[i] = dh[i] * a.z[i] * (1.0 - a.z[i]);
        detail::backprop_affine(p.z, g.z, da, x, &prev.h, dx, &dh_prev);
        break;
      }
      case CellKind::t_mr: {
        Vector da(d);
        for (std::size_t i = 0; i < d; ++i) da[i] = a.z[i] > 0.0 ? dh[i] : 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          g.decay[i] += da[i] * prev.h[i];
          g.offset[i] += da[i];
          dh_prev[i] = da[i] * p.decay[i];
        }
        outer_acc(da.span(), x.span(), g.z.W);
        matvec_transposed_acc(p.z.W, da.span(), dx.span());
        break;
      }
      case CellKind::t_rnn: {
        Vector dz(d), daf(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double f = a.f[i];
          dz[i] = dh[i] * (1.0 - f);
          daf[i] = dh[i] * (prev.h[i] - a.z[i]) * f * (1.0 - f);
          dh_prev[i] = dh[i] * f;
        }
        detail::backprop_affine(p.z, g.z, dz, x, nullptr, dx, nullptr);
        detail::backprop_affine(p.f, g.f, daf, x, nullptr, dx, nullptr);
        break;
      }
      case CellKind::lstm:
      case CellKind::t_lstm: {
        const bool typed = p.kind == CellKind::t_lstm;
        const Vector& c_prev = *prev.c;
        const Vector& c = *cur.c;
        const Vector& o = *a.o;
        Vector daz(d), daf(d), dao(d), dc_prev(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double tc = typed ? c[i] : tanh_open(c[i]);
          const double dtc = typed ? 1.0 : 1.0 - tc * tc;
          const double dc = dc_next[i] + dh[i] * o[i] * dtc;
          const double f = a.f[i];
          const double dz = dc * (1.0 - f);
          daz[i] = typed ? dz : dz * (1.0 - a.z[i] * a.z[i]);
          daf[i] = dc * (c_prev[i] - a.z[i]) * f * (1.0 - f);
          dao[i] = dh[i] * tc * (1.0 - o[i] * o[i]);
          dc_prev[i] = dc * f;
        }
        if (typed) {
          const Vector& u = tape.prev_inputs[step];
          Vector& du = out.d_prev_inputs[step];
          detail::backprop_affine(p.z, g.z, daz, x, &u, dx, &du);
          detail::backprop_affine(p.f, g.f, daf, x, &u, dx, &du);
          detail::backprop_affine(p.o, g.o, dao, x, &u, dx, &du);
        } else {
          detail::backprop_affine(p.z, g.z, daz, x, &prev.h, dx, &dh_prev);
          detail::backprop_affine(p.f, g.f, daf, x, &prev.h, dx, &dh_prev);
          detail::backprop_affine(p.o, g.o, dao, x, &prev.h, dx, &dh_prev);
        }
        dc_next = std::move(dc_prev);
        break;
      }
      case CellKind::gru: {
        const Vector& h = prev.h;
        const Vector& o = *a.o;
        Vector daf(d), dao(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double f = a.f[i];
          daf[i] = dh[i] * (h[i] - o[i]) * f * (1.0 - f);
          dao[i] = dh[i] * (1.0 - f) * (1.0 - o[i] * o[i]);
          dh_prev[i] = dh[i] * f;
        }
        const Vector r = hadamard(a.z, h);
        Vector dr(d);
        detail::backprop_affine(p.o, g.o, dao, x, &r, dx, &dr);
        Vector daz(d);
        for (std::size_t i = 0; i < d; ++i) {
          daz[i] = dr[i] * h[i] * a.z[i] * (1.0 - a.z[i]);
          dh_prev[i] += dr[i] * a.z[i];
        }
        detail::backprop_affine(p.z, g.z, daz, x, &h, dx, &dh_prev);
        detail::backprop_affine(p.f, g.f, daf, x, &h, dx, &dh_prev);
        break;
      }
      case CellKind::t_gru: {
        const Vector& o = *a.o;
        Vector daz(d), daf(d), dao(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double f = a.f[i];
          daz[i] = dh[i] * o[i];
          daf[i] = dh[i] * prev.h[i] * f * (1.0 - f);
          dao[i] = dh[i] * a.z[i] * (1.0 - o[i] * o[i]);
          dh_prev[i] = dh[i] * f;
        }
        const Vector& u = tape.prev_inputs[step];
        Vector& du = out.d_prev_inputs[step];
        detail::backprop_affine(p.z, g.z, daz, x, &u, dx, &du);
        detail::backprop_affine(p.f, g.f, daf, x, &u, dx, &du);
        detail::backprop_affine(p.o, g.o, dao, x, &u, dx, &du);
        break;
      }
      case CellKind::scrn_state:
        throw std::invalid_argument("bptt: the SCRN state layer is not trainable");
    }
    dh_next = std::move(dh_prev);
  }
  out.d_initial.h = std::move(dh_next);
  if (has_memory_cell(p.kind)) out.d_initial.c = std::move(dc_next);
  return out;
}

/// Jacobian of h_T with respect to the state the layer starts from. Columns
/// are h_0 followed by c_0 for cells with a memory cell.
inline Matrix state_jacobian(const CellParams& p, std::span<const Vector> xs,
                             std::span<const Vector> prev_inputs, const CellState& start) {
  if (xs.empty()) throw std::invalid_argument("state_jacobian: empty sequence");
  const std::size_t d = p.hidden_dim;
  const LayerTape tape = forward_layer(p, {xs.begin(), xs.end()},
                                       {prev_inputs.begin(), prev_inputs.end()}, start);
  const bool mem = has_memory_cell(p.kind);
  Matrix jac(d, mem ? 2 * d : d);
  std::vector<Vector> up(xs.size(), Vector(d));
  for (std::size_t i = 0; i < d; ++i) {
    up.back() = Vector::basis(d, i);
    const LayerGradients lg = backward_layer(p, tape, up);
    for (std::size_t j = 0; j < d; ++j) jac(i, j) = lg.d_initial.h[j];
    if (mem)
      for (std::size_t j = 0; j < d; ++j) jac(i, d + j) = (*lg.d_initial.c)[j];
  }
  return jac;
}

/// max_i sum_j |m_ij|
inline double inf_norm(const Matrix& m) {
  double best = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double x : m.row(i)) s += std::abs(x);
    best = std::max(best, s);
  }
  return best;
}

struct StackGradients {
  std::vector<Gradients> layers;
  std::vector<Vector> d_inputs;  // dL/dx_t for the bottom layer's inputs
};

/// Backpropagation through a stacked forward pass. `d_outputs[t]` is the
/// gradient with respect to `tape.outputs[t]` (the dropped-out top output).
/// For T-LSTM / T-GRU layers the x_{t-1} gate path is chained into the layer
/// below across time.
inline StackGradients bptt(std::span<const CellParams> layers, const StackTape& tape,
                           std::span<const Vector> d_outputs) {
  check_stack(layers);
  if (tape.layers.size() != layers.size()) {
    throw std::invalid_argument("bptt: tape depth does not match the parameter stack");
  }
  const std::size_t L = layers.size();
  const std::size_t T = d_outputs.size();
  std::vector<Vector> upstream(d_outputs.begin(), d_outputs.end());
  if (!tape.masks[L].empty()) {
    for (std::size_t t = 0; t < T; ++t) upstream[t] = hadamard(upstream[t], tape.masks[L][t]);
  }
  StackGradients out;
  out.layers.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    LayerGradients lg = backward_layer(layers[l], tape.layers[l], upstream);
    std::vector<Vector> below = std::move(lg.d_inputs);
    if (l > 0 && !tape.masks[l].empty()) {
      for (std::size_t t = 0; t < T; ++t) below[t] = hadamard(below[t], tape.masks[l][t]);
    }
    if (!lg.d_prev_inputs.empty()) {
      for (std::size_t t = 0; t + 1 < T; ++t) {
        const auto& dp = lg.d_prev_inputs[t + 1];
        for (std::size_t i = 0; i < dp.dim(); ++i) below[t][i] += dp[i];
      }
    }
    out.layers[l] = std::move(lg.params);
    upstream = std::move(below);
  }
  out.d_inputs = std::move(upstream);
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central differences (L(theta + eps) - L(theta - eps)) / 2 eps for every
/// scalar in every tensor of `params`. `params` is restored before returning.
inline std::vector<Gradients> finite_diff(
    std::vector<CellParams>& params,
    const std::function<double(const std::vector<CellParams>&)>& loss, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("finite_diff: eps must lie in [1e-7, 1e-3]");
  }
  auto eval = [&] {
    const double v = loss(params);
    if (!std::isfinite(v)) throw std::runtime_error("finite_diff: loss is not finite");
    return v;
  };
  std::vector<Gradients> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(zero_gradients(p));
  for (std::size_t l = 0; l < params.size(); ++l) {
    auto tensors = params[l].tensors();
    auto gtensors = grads[l].tensors();
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      for (std::size_t i = 0; i < tensors[k].values.size(); ++i) {
        double& theta = tensors[k].values[i];
        const double saved = theta;
        theta = saved + eps;
        const double up = eval();
        theta = saved - eps;
        const double down = eval();
        theta = saved;
        gtensors[k].values[i] = (up - down) / (2.0 * eps);
      }
    }
  }
  return grads;
}

/// ||a - b||_2 / max(||a||_2, ||b||_2, 1e-8).
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  detail::require_dims(a.size() == b.size(), "relative_error", a.size(), b.size());
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(num) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

// ---------------------------------------------------------------------------
// Clipping

struct ClipResult {
  double norm = 0.0;   // global L2 norm before clipping
  double scale = 1.0;  // factor applied to every tensor
};

inline double global_norm(const std::vector<std::span<double>>& tensors) {
  double s = 0.0;
  for (auto t : tensors)
    for (double x : t) s += x * x;
  return std::sqrt(s);
}

/// Rescales all tensors by max_norm / ||g|| when the global norm exceeds
/// `max_norm`. With no limit the tensors are left untouched.
inline ClipResult clip_global_norm(const std::vector<std::span<double>>& tensors,
                                   std::optional<double> max_norm) {
  ClipResult r;
  r.norm = global_norm(tensors);
  if (!max_norm || !(r.norm > *max_norm)) return r;
  r.scale = *max_norm / r.norm;
  for (auto t : tensors)
    for (double& x : t) x *= r.scale;
  return r;
}

inline ClipResult clip_global_norm(std::vector<Gradients>& grads, std::optional<double> max_norm) {
  std::vector<std::span<double>> spans;
  for (auto& g : grads)
    for (auto t : g.tensors()) spans.push_back(t.values);
  return clip_global_norm(spans, max_norm);
}

}  // namespace strnn
