// SPDX-License-Identifier: Apache-2.0
//
// Single-step updates for the classical (RNN, LSTM, GRU) and strongly-typed
// (T-RNN, T-LSTM, T-GRU, T-MR) cells, plus the SCRN context-state layer.
//
// Strongly-typed cells split into stateless learnware, which maps
// (x_{t-1}, x_t) to gate activations, and parameter-free firmware, which
// combines those activations with the state one coordinate at a time.
//
// Pre-activations are accumulated as  b + W*x + V*u  in that order by every
// code path (single steps and whole-sequence layers), so the two agree
// bit for bit.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "strnn/core_math.hpp"

namespace strnn {

enum class CellKind : std::uint8_t { rnn, lstm, gru, t_rnn, t_lstm, t_gru, t_mr, scrn_state };

inline constexpr std::array<CellKind, 7> kTrainableKinds = {
    CellKind::rnn,    CellKind::lstm,  CellKind::gru, CellKind::t_rnn,
    CellKind::t_lstm, CellKind::t_gru, CellKind::t_mr};

inline std::string_view to_string(CellKind k) {
  switch (k) {
    case CellKind::rnn: return "rnn";
    case CellKind::lstm: return "lstm";
    case CellKind::gru: return "gru";
    case CellKind::t_rnn: return "t_rnn";
    case CellKind::t_lstm: return "t_lstm";
    case CellKind::t_gru: return "t_gru";
    case CellKind::t_mr: return "t_mr";
    case CellKind::scrn_state: return "scrn_state";
  }
  return "?";
}

/// Accepts both the serialized form (`t_lstm`) and the CLI form (`t-lstm`).
inline CellKind parse_cell_kind(std::string_view name) {
  std::string s(name);
  for (char& c : s)
    if (c == '-') c = '_';
  for (auto k : {CellKind::rnn, CellKind::lstm, CellKind::gru, CellKind::t_rnn, CellKind::t_lstm,
                 CellKind::t_gru, CellKind::t_mr, CellKind::scrn_state}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown cell kind '" + std::string(name) + "'");
}

/// Cells whose gates read the previous same-layer input instead of h_{t-1}.
inline constexpr bool uses_prev_input(CellKind k) {
  return k == CellKind::t_lstm || k == CellKind::t_gru;
}
inline constexpr bool has_memory_cell(CellKind k) {
  return k == CellKind::lstm || k == CellKind::t_lstm;
}
inline constexpr bool is_strongly_typed(CellKind k) {
  return k == CellKind::t_rnn || k == CellKind::t_lstm || k == CellKind::t_gru ||
         k == CellKind::t_mr;
}

struct AffineParams {
  Matrix V;  // recurrent side: h_{t-1} (classical) or x_{t-1} (T-LSTM/T-GRU)
  Matrix W;  // input side
  Vector b;
  friend bool operator==(const AffineParams&, const AffineParams&) = default;
};

/// Mutable view of one named parameter tensor.
struct TensorRef {
  std::string_view name;
  std::size_t rows;
  std::size_t cols;
  std::span<double> values;
  bool is_vector = false;
};
struct ConstTensorRef {
  std::string_view name;
  std::size_t rows;
  std::size_t cols;
  std::span<const double> values;
  bool is_vector = false;
};

/// Parameters of one cell. Which members are populated depends on `kind`:
///
///   rnn         V = z.V (h x h), W = z.W, b = z.b
///   lstm, gru   V_g, W_g, b_g for g in {z, f, o}; V_g is h x h
///   t_lstm/gru  V_g, W_g, b_g for g in {z, f, o}; V_g is h x input
///   t_rnn       W = z.W, V = f.W (both h x input, both read x_t), b = f.b
///   t_mr        b = decay, c = offset, W = z.W
///   scrn_state  W_s = z.W, alpha
///
/// The same structure is used for gradients.
struct CellParams {
  CellKind kind = CellKind::rnn;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  AffineParams z, f, o;
  Vector decay;
  Vector offset;
  double alpha = 0.5;

  std::vector<TensorRef> tensors() { return collect<TensorRef>(*this); }
  std::vector<ConstTensorRef> tensors() const { return collect<ConstTensorRef>(*this); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.values.size();
    return n;
  }

  friend bool operator==(const CellParams&, const CellParams&) = default;

private:
  template <class Ref, class Self>
  static std::vector<Ref> collect(Self& p) {
    std::vector<Ref> out;
    auto mat = [&](std::string_view name, auto& m) {
      out.push_back(Ref{name, m.rows(), m.cols(), m.span(), false});
    };
    auto vec = [&](std::string_view name, auto& v) {
      out.push_back(Ref{name, v.dim(), 1, v.span(), true});
    };
    switch (p.kind) {
      case CellKind::rnn:
        mat("V", p.z.V);
        mat("W", p.z.W);
        vec("b", p.z.b);
        break;
      case CellKind::lstm:
      case CellKind::gru:
      case CellKind::t_lstm:
      case CellKind::t_gru:
        mat("V_z", p.z.V);
        mat("W_z", p.z.W);
        vec("b_z", p.z.b);
        mat("V_f", p.f.V);
        mat("W_f", p.f.W);
        vec("b_f", p.f.b);
        mat("V_o", p.o.V);
        mat("W_o", p.o.W);
        vec("b_o", p.o.b);
        break;
      case CellKind::t_rnn:
        mat("W", p.z.W);
        mat("V", p.f.W);
        vec("b", p.f.b);
        break;
      case CellKind::t_mr:
        vec("b", p.decay);
        vec("c", p.offset);
        mat("W", p.z.W);
        break;
      case CellKind::scrn_state:
        mat("W_s", p.z.W);
        break;
    }
    return out;
  }
};

/// Zero-valued parameters (or gradients) with the shapes `kind` requires.
inline CellParams make_params(CellKind kind, std::size_t input_dim, std::size_t hidden_dim) {
  CellParams p;
  p.kind = kind;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  const std::size_t h = hidden_dim;
  const std::size_t in = input_dim;
  switch (kind) {
    case CellKind::rnn:
      p.z = {Matrix(h, h), Matrix(h, in), Vector(h)};
      break;
    case CellKind::lstm:
    case CellKind::gru:
      for (auto* g : {&p.z, &p.f, &p.o}) *g = {Matrix(h, h), Matrix(h, in), Vector(h)};
      break;
    case CellKind::t_lstm:
    case CellKind::t_gru:
      for (auto* g : {&p.z, &p.f, &p.o}) *g = {Matrix(h, in), Matrix(h, in), Vector(h)};
      break;
    case CellKind::t_rnn:
      p.z.W = Matrix(h, in);
      p.f.W = Matrix(h, in);
      p.f.b = Vector(h);
      break;
    case CellKind::t_mr:
      p.decay = Vector(h);
      p.offset = Vector(h);
      p.z.W = Matrix(h, in);
      break;
    case CellKind::scrn_state:
      p.z.W = Matrix(h, in);
      break;
  }
  return p;
}

struct InitOptions {
  double init_scale = 0.08;       // uniform(-s, s)
  double forget_bias = 0.0;       // added to b_f
  bool identity_recurrent = false;  // I-RNN: V = I for the vanilla RNN
  double recurrent_scale = 1.0;   // multiplies V of the vanilla RNN after init
};

/// Uniform(-s, s) weights, zero biases. The T-MR decay vector is drawn from
/// uniform(0.5, 1) instead; a zero decay would make the cell stateless.
inline CellParams init_params(CellKind kind, std::size_t input_dim, std::size_t hidden_dim,
                              const InitOptions& opt, Rng& rng) {
  CellParams p = make_params(kind, input_dim, hidden_dim);
  for (auto t : p.tensors()) {
    if (t.is_vector) continue;  // biases start at zero
    for (double& x : t.values) x = rng.uniform(-opt.init_scale, opt.init_scale);
  }
  if (kind == CellKind::t_mr) {
    for (double& x : p.decay) x = rng.uniform(0.5, 1.0);
  }
  if (!p.f.b.empty() && opt.forget_bias != 0.0) {
    for (double& x : p.f.b) x += opt.forget_bias;
  }
  if (kind == CellKind::rnn) {
    if (opt.identity_recurrent) p.z.V = Matrix::identity(hidden_dim);
    if (opt.recurrent_scale != 1.0)
      for (double& x : p.z.V.span()) x *= opt.recurrent_scale;
  }
  return p;
}

struct CellState {
  Vector h;
  std::optional<Vector> c;

  static CellState zeros(CellKind kind, std::size_t hidden) {
    CellState s{Vector(hidden), std::nullopt};
    if (has_memory_cell(kind)) s.c = Vector(hidden);
    return s;
  }
  friend bool operator==(const CellState&, const CellState&) = default;
};

/// Gate values of one step. For the vanilla RNN and T-MR `z` holds the new
/// state and `f` is empty.
struct StepActivations {
  Vector f;
  Vector z;
  std::optional<Vector> o;
  friend bool operator==(const StepActivations&, const StepActivations&) = default;
};

struct StepOutput {
  CellState state;
  StepActivations acts;
};

namespace detail {

inline void check_params(const CellParams& p, std::size_t x_dim) {
  require_dims(x_dim == p.input_dim, "cell input", x_dim, p.input_dim);
}
inline void check_hidden(const CellParams& p, const Vector& v, const char* what) {
  require_dims(v.dim() == p.hidden_dim, what, v.dim(), p.hidden_dim);
}

/// b + W*x + V*u with the library-wide accumulation order.
inline Vector preactivation(const AffineParams& g, const Vector* u, const Vector& x) {
  Vector a = g.b.empty() ? Vector(g.W.rows()) : g.b;
  matvec_acc(g.W, x.span(), a.span());
  if (u != nullptr && !g.V.empty()) matvec_acc(g.V, u->span(), a.span());
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Strongly-typed learnware and firmware

/// Stateless part of T-RNN / T-LSTM / T-GRU: gate activations from inputs only.
inline StepActivations typed_learnware(const CellParams& p, const Vector& x_prev,
                                       const Vector& x) {
  detail::check_params(p, x.dim());
  StepActivations a;
  switch (p.kind) {
    case CellKind::t_rnn:
      a.z = detail::preactivation(p.z, nullptr, x);
      a.f = detail::preactivation(p.f, nullptr, x);
      coordwise_inplace(Unary::sigmoid(), a.f);
      break;
    case CellKind::t_lstm:
    case CellKind::t_gru: {
      detail::check_params(p, x_prev.dim());
      a.z = detail::preactivation(p.z, &x_prev, x);
      a.f = detail::preactivation(p.f, &x_prev, x);
      coordwise_inplace(Unary::sigmoid(), a.f);
      Vector o = detail::preactivation(p.o, &x_prev, x);
      coordwise_inplace(Unary::tanh(), o);
      a.o = std::move(o);
      break;
    }
    default:
      throw std::invalid_argument("typed_learnware: not a gated strongly-typed cell");
  }
  return a;
}

/// Parameter-free, coordinatewise state update of a strongly-typed cell.
inline CellState typed_firmware(CellKind kind, const StepActivations& a, const CellState& s) {
  const std::size_t d = a.f.dim();
  detail::require_dims(s.h.dim() == d, "firmware state", s.h.dim(), d);
  CellState out;
  switch (kind) {
    case CellKind::t_rnn: {
      out.h = Vector(d);
      for (std::size_t i = 0; i < d; ++i) out.h[i] = a.f[i] * s.h[i] + (1.0 - a.f[i]) * a.z[i];
      break;
    }
    case CellKind::t_lstm: {
      const Vector& c = s.c.value();
      Vector cn(d), h(d);
      for (std::size_t i = 0; i < d; ++i) {
        cn[i] = a.f[i] * c[i] + (1.0 - a.f[i]) * a.z[i];
        h[i] = cn[i] * (*a.o)[i];
      }
      out.h = std::move(h);
      out.c = std::move(cn);
      break;
    }
    case CellKind::t_gru: {
      out.h = Vector(d);
      for (std::size_t i = 0; i < d; ++i) out.h[i] = a.f[i] * s.h[i] + a.z[i] * (*a.o)[i];
      break;
    }
    default:
      throw std::invalid_argument("typed_firmware: not a gated strongly-typed cell");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single steps

inline StepOutput trnn_step(const CellParams& p, const Vector& h_prev, const Vector& x) {
  detail::check_hidden(p, h_prev, "trnn_step");
  StepActivations a = typed_learnware(p, Vector(), x);
  CellState s = typed_firmware(CellKind::t_rnn, a, CellState{h_prev, std::nullopt});
  return {std::move(s), std::move(a)};
}

inline StepOutput tlstm_step(const CellParams& p, const CellState& state, const Vector& x_prev,
                             const Vector& x) {
  detail::check_hidden(p, state.h, "tlstm_step");
  detail::check_hidden(p, state.c.value(), "tlstm_step");
  StepActivations a = typed_learnware(p, x_prev, x);
  CellState s = typed_firmware(CellKind::t_lstm, a, state);
  return {std::move(s), std::move(a)};
}

inline StepOutput tgru_step(const CellParams& p, const Vector& h_prev, const Vector& x_prev,
                            const Vector& x) {
  detail::check_hidden(p, h_prev, "tgru_step");
  StepActivations a = typed_learnware(p, x_prev, x);
  CellState s = typed_firmware(CellKind::t_gru, a, CellState{h_prev, std::nullopt});
  return {std::move(s), std::move(a)};
}

/// Vanilla RNN, LSTM (no input gate) and GRU, exactly as displayed:
///   RNN   h' = sigma(V h + W x + b)
///   LSTM  c' = f c + (1-f) z,  h' = tanh(c') o
///   GRU   o = tanh(V_o (z h) + W_o x + b_o),  h' = f h + (1-f) o
/// The GRU's gate names differ from the usual reset/update convention.
inline StepOutput classical_step(const CellParams& p, const CellState& state, const Vector& x) {
  detail::check_params(p, x.dim());
  detail::check_hidden(p, state.h, "classical_step");
  const Vector& h = state.h;
  const std::size_t d = p.hidden_dim;
  StepOutput out;
  switch (p.kind) {
    case CellKind::rnn: {
      Vector a = detail::preactivation(p.z, &h, x);
      coordwise_inplace(Unary::sigmoid(), a);
      out.state.h = a;
      out.acts.z = std::move(a);
      break;
    }
    case CellKind::lstm: {
      const Vector& c = state.c.value();
      detail::check_hidden(p, c, "classical_step");
      Vector z = detail::preactivation(p.z, &h, x);
      Vector f = detail::preactivation(p.f, &h, x);
      Vector o = detail::preactivation(p.o, &h, x);
      coordwise_inplace(Unary::tanh(), z);
      coordwise_inplace(Unary::sigmoid(), f);
      coordwise_inplace(Unary::tanh(), o);
      Vector cn(d), hn(d);
      for (std::size_t i = 0; i < d; ++i) {
        cn[i] = f[i] * c[i] + (1.0 - f[i]) * z[i];
        hn[i] = tanh_open(cn[i]) * o[i];
      }
      out.state = {std::move(hn), std::move(cn)};
      out.acts = {std::move(f), std::move(z), std::move(o)};
      break;
    }
    case CellKind::gru: {
      Vector z = detail::preactivation(p.z, &h, x);
      Vector f = detail::preactivation(p.f, &h, x);
      coordwise_inplace(Unary::sigmoid(), z);
      coordwise_inplace(Unary::sigmoid(), f);
      const Vector r = hadamard(z, h);
      Vector o = detail::preactivation(p.o, &r, x);
      coordwise_inplace(Unary::tanh(), o);
      Vector hn(d);
      for (std::size_t i = 0; i < d; ++i) hn[i] = f[i] * h[i] + (1.0 - f[i]) * o[i];
      out.state.h = std::move(hn);
      out.acts = {std::move(f), std::move(z), std::move(o)};
      break;
    }
    default:
      throw std::invalid_argument("classical_step: expects rnn, lstm or gru");
  }
  return out;
}

/// T-MR:  h' = relu(b (.) h + W x + c)
inline Vector tmr_step(const CellParams& p, const Vector& h_prev, const Vector& x) {
  detail::check_params(p, x.dim());
  detail::check_hidden(p, h_prev, "tmr_step");
  Vector a = p.offset;
  matvec_acc(p.z.W, x.span(), a.span());
  for (std::size_t i = 0; i < a.dim(); ++i) a[i] += p.decay[i] * h_prev[i];
  coordwise_inplace(Unary::relu(), a);
  return a;
}

/// SCRN context state:  s' = alpha s + (1 - alpha) W_s x,  alpha in (0, 1).
inline Vector scrn_state_step(double alpha, const Matrix& w_s, const Vector& s_prev,
                              const Vector& x) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("scrn_state_step: alpha must lie in (0, 1)");
  }
  detail::require_dims(w_s.rows() == s_prev.dim(), "scrn_state_step", w_s.rows(), s_prev.dim());
  Vector wx(w_s.rows());
  matvec_acc(w_s, x.span(), wx.span());
  Vector s(s_prev.dim());
  for (std::size_t i = 0; i < s.dim(); ++i) s[i] = alpha * s_prev[i] + (1.0 - alpha) * wx[i];
  return s;
}

/// One step of any cell. `x_prev` is only read by T-LSTM / T-GRU.
inline StepOutput cell_step(const CellParams& p, const CellState& state, const Vector& x_prev,
                            const Vector& x) {
  switch (p.kind) {
    case CellKind::rnn:
    case CellKind::lstm:
    case CellKind::gru: return classical_step(p, state, x);
    case CellKind::t_rnn: return trnn_step(p, state.h, x);
    case CellKind::t_lstm: return tlstm_step(p, state, x_prev, x);
    case CellKind::t_gru: return tgru_step(p, state.h, x_prev, x);
    case CellKind::t_mr: {
      StepOutput out;
      out.state.h = tmr_step(p, state.h, x);
      out.acts.z = out.state.h;
      return out;
    }
    case CellKind::scrn_state: {
      StepOutput out;
      out.state.h = scrn_state_step(p.alpha, p.z.W, state.h, x);
      return out;
    }
  }
  throw std::invalid_argument("cell_step: unknown kind");
}

}  // namespace strnn
