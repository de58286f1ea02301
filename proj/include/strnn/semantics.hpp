// SPDX-License-Identifier: Apache-2.0
//
// Closed-form semantics of the strongly-typed cells, written independently of
// the recurrent implementation so that each can check the other.
//
// A T-RNN output is an input-dependent weighted average of features W x_s:
//
//   h_t = sum_s P_t(s) (.) W x_s,   P_t(t) = 1 - f_t,   P_t(s) = f_t (.) P_{t-1}(s)
//
// Per coordinate the weights P_t(1..t) and the residual mass prod_r f_r left on
// the initial state sum to one. T-LSTM reweights the same average by its
// output gate; T-GRU sums gated features with cumulative forget products
//
//   F_s = prod_{r=s+1..t} f_r,
//
// which is what direct unrolling of h_t = f_t h_{t-1} + z_t o_t yields.
//
// The "concatenated" forms use U = [V  W  b] acting on x~_s = [x_{s-1}; x_s; 1].

#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "strnn/autodiff.hpp"
#include "strnn/cells.hpp"

namespace strnn {

struct PoolingWeights {
  std::vector<Vector> P;  // P[s] for s = 1..t (zero-based)
  Vector residual;        // mass left on h_0
};

struct ProductWeights {
  std::vector<Vector> F;  // F[s] = prod_{r > s} f_r; F.back() is all ones
};

namespace detail {

inline void check_gates(std::span<const Vector> gates) {
  if (gates.empty()) throw std::invalid_argument("pooling: empty gate sequence");
  const std::size_t d = gates.front().dim();
  for (const auto& f : gates) {
    require_dims(f.dim() == d, "pooling gates", f.dim(), d);
    for (double x : f) {
      if (!(x > 0.0 && x < 1.0)) throw std::invalid_argument("pooling: gate value outside (0, 1)");
    }
  }
}

/// [V W b] for an affine block acting on (x_{t-1}, x_t).
inline Matrix concat_affine(const AffineParams& g) {
  const std::size_t rows = g.W.rows();
  const std::size_t in = g.W.cols();
  Matrix u(rows, 2 * in + 1);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < in; ++j) {
      u(i, j) = g.V(i, j);
      u(i, in + j) = g.W(i, j);
    }
    u(i, 2 * in) = g.b[i];
  }
  return u;
}

inline Vector tilde(const Vector& x_prev, const Vector& x) {
  Vector v(2 * x.dim() + 1);
  for (std::size_t j = 0; j < x.dim(); ++j) {
    v[j] = x_prev[j];
    v[x.dim() + j] = x[j];
  }
  v[2 * x.dim()] = 1.0;
  return v;
}

inline std::vector<Vector> tildes(std::span<const Vector> xs) {
  std::vector<Vector> out;
  out.reserve(xs.size());
  for (std::size_t s = 0; s < xs.size(); ++s) {
    out.push_back(tilde(s == 0 ? Vector(xs[s].dim()) : xs[s - 1], xs[s]));
  }
  return out;
}

inline Vector sigmoid_of(Vector v) {
  for (double& x : v) x = sigmoid(x);
  return v;
}
inline Vector tanh_of(Vector v) {
  for (double& x : v) x = tanh_open(x);
  return v;
}

/// Splits dU (h x (2 in + 1)) into the V, W and b blocks of `dg`.
inline void split_concat(const Matrix& du, AffineParams& dg) {
  const std::size_t in = dg.W.cols();
  for (std::size_t i = 0; i < du.rows(); ++i) {
    for (std::size_t j = 0; j < in; ++j) {
      dg.V(i, j) += du(i, j);
      dg.W(i, j) += du(i, in + j);
    }
    dg.b[i] += du(i, 2 * in);
  }
}

/// Per-step gates, features and (T-LSTM / T-GRU) output gates from inputs only.
struct TypedLearnware {
  std::vector<Vector> f, z, o;
  std::vector<Vector> xt;  // x~_s, or x_s for T-RNN
};

inline TypedLearnware typed_features(const CellParams& p, std::span<const Vector> xs) {
  TypedLearnware lw;
  if (p.kind == CellKind::t_rnn) {
    for (const auto& x : xs) {
      require_dims(x.dim() == p.input_dim, "pooled forward input", x.dim(), p.input_dim);
      lw.z.push_back(matvec(p.z.W, x));
      lw.f.push_back(sigmoid_of(matvec(p.f.W, x) + p.f.b));
      lw.xt.push_back(x);
    }
    return lw;
  }
  if (p.kind != CellKind::t_lstm && p.kind != CellKind::t_gru) {
    throw std::invalid_argument("semantics: only T-RNN, T-LSTM and T-GRU have pooled forms");
  }
  for (const auto& x : xs) {
    require_dims(x.dim() == p.input_dim, "pooled forward input", x.dim(), p.input_dim);
  }
  const Matrix uz = concat_affine(p.z), uf = concat_affine(p.f), uo = concat_affine(p.o);
  lw.xt = tildes(xs);
  for (const auto& xt : lw.xt) {
    lw.z.push_back(matvec(uz, xt));
    lw.f.push_back(sigmoid_of(matvec(uf, xt)));
    lw.o.push_back(tanh_of(matvec(uo, xt)));
  }
  return lw;
}

}  // namespace detail

inline PoolingWeights pooling_weights(std::span<const Vector> gates) {
  detail::check_gates(gates);
  const std::size_t d = gates.front().dim();
  PoolingWeights w;
  w.residual = Vector::ones(d);
  for (const auto& f : gates) {
    for (auto& p : w.P)
      for (std::size_t i = 0; i < d; ++i) p[i] *= f[i];
    for (std::size_t i = 0; i < d; ++i) w.residual[i] *= f[i];
    w.P.push_back(coordwise(Unary::complement(), f));
  }
  return w;
}

inline ProductWeights product_weights(std::span<const Vector> gates) {
  detail::check_gates(gates);
  const std::size_t t = gates.size();
  const std::size_t d = gates.front().dim();
  ProductWeights w;
  w.F.assign(t, Vector::ones(d));
  for (std::size_t s = t - 1; s-- > 0;) {
    for (std::size_t i = 0; i < d; ++i) w.F[s][i] = gates[s + 1][i] * w.F[s + 1][i];
  }
  return w;
}

/// h_t = E_{s ~ P}[W x_s] with h_0 = 0.
inline Vector trnn_forward_pooled(const CellParams& p, std::span<const Vector> xs) {
  if (p.kind != CellKind::t_rnn) throw std::invalid_argument("trnn_forward_pooled: expects t_rnn");
  const auto lw = detail::typed_features(p, xs);
  const auto w = pooling_weights(lw.f);
  Vector h(p.hidden_dim);
  for (std::size_t s = 0; s < xs.size(); ++s)
    for (std::size_t i = 0; i < h.dim(); ++i) h[i] += w.P[s][i] * lw.z[s][i];
  return h;
}

/// h_t = tanh(U_o x~_t) (.) E_{s ~ P}[U_z x~_s] with c_0 = 0.
inline Vector tlstm_forward_pooled(const CellParams& p, std::span<const Vector> xs) {
  if (p.kind != CellKind::t_lstm) throw std::invalid_argument("tlstm_forward_pooled: expects t_lstm");
  const auto lw = detail::typed_features(p, xs);
  const auto w = pooling_weights(lw.f);
  Vector c(p.hidden_dim);
  for (std::size_t s = 0; s < xs.size(); ++s)
    for (std::size_t i = 0; i < c.dim(); ++i) c[i] += w.P[s][i] * lw.z[s][i];
  return hadamard(lw.o.back(), c);
}

/// h_t = sum_s F_s (.) tanh(U_o x~_s) (.) U_z x~_s with h_0 = 0.
inline Vector tgru_forward_pooled(const CellParams& p, std::span<const Vector> xs) {
  if (p.kind != CellKind::t_gru) throw std::invalid_argument("tgru_forward_pooled: expects t_gru");
  const auto lw = detail::typed_features(p, xs);
  const auto w = product_weights(lw.f);
  Vector h(p.hidden_dim);
  for (std::size_t s = 0; s < xs.size(); ++s)
    for (std::size_t i = 0; i < h.dim(); ++i) h[i] += w.F[s][i] * lw.o[s][i] * lw.z[s][i];
  return h;
}

inline Vector forward_pooled(const CellParams& p, std::span<const Vector> xs) {
  switch (p.kind) {
    case CellKind::t_rnn: return trnn_forward_pooled(p, xs);
    case CellKind::t_lstm: return tlstm_forward_pooled(p, xs);
    case CellKind::t_gru: return tgru_forward_pooled(p, xs);
    default: throw std::invalid_argument("forward_pooled: no pooled form for this kind");
  }
}

/// Gradient of  upstream . h_t  with respect to every parameter, evaluated
/// through the expectation / product forms rather than by backpropagation.
/// Derivatives of the pooling weights are expanded analytically:
///   dP(s)/da_s = -f_s P(s),   dP(s)/da_r = (1 - f_r) P(s) for r > s,
/// where a_r is the forget-gate pre-activation at step r.
inline Gradients closed_form_gradients(const CellParams& p, std::span<const Vector> xs,
                                       const Vector& upstream) {
  const std::size_t t = xs.size();
  const std::size_t d = p.hidden_dim;
  detail::require_dims(upstream.dim() == d, "closed_form_gradients upstream", upstream.dim(), d);
  if (t == 0) throw std::invalid_argument("closed_form_gradients: empty sequence");
  const auto lw = detail::typed_features(p, xs);
  const Vector& g = upstream;
  Gradients grad = zero_gradients(p);

  // dL/da_r accumulated over features weighted by dP(s)/da_r.
  auto pooled_gate_grad = [&](const PoolingWeights& w, const Vector& scale) {
    std::vector<Vector> da(t, Vector(d));
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t s = 0; s <= r; ++s) {
        for (std::size_t i = 0; i < d; ++i) {
          const double f = lw.f[r][i];
          const double dp = (s == r) ? -f * w.P[s][i] : (1.0 - f) * w.P[s][i];
          da[r][i] += scale[i] * lw.z[s][i] * dp;
        }
      }
    }
    return da;
  };

  switch (p.kind) {
    case CellKind::t_rnn: {
      const auto w = pooling_weights(lw.f);
      for (std::size_t s = 0; s < t; ++s) {
        outer_acc(hadamard(g, w.P[s]).span(), lw.xt[s].span(), grad.z.W);
      }
      const auto da = pooled_gate_grad(w, g);
      for (std::size_t r = 0; r < t; ++r) {
        outer_acc(da[r].span(), lw.xt[r].span(), grad.f.W);
        for (std::size_t i = 0; i < d; ++i) grad.f.b[i] += da[r][i];
      }
      break;
    }
    case CellKind::t_lstm: {
      const auto w = pooling_weights(lw.f);
      const Vector& o = lw.o.back();
      Vector c(d);
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t i = 0; i < d; ++i) c[i] += w.P[s][i] * lw.z[s][i];
      const std::size_t cols = lw.xt.front().dim();
      Matrix du_o(d, cols), du_z(d, cols), du_f(d, cols);
      Vector dao(d);
      for (std::size_t i = 0; i < d; ++i) dao[i] = g[i] * c[i] * (1.0 - o[i] * o[i]);
      outer_acc(dao.span(), lw.xt.back().span(), du_o);
      const Vector go = hadamard(g, o);
      for (std::size_t s = 0; s < t; ++s) {
        outer_acc(hadamard(go, w.P[s]).span(), lw.xt[s].span(), du_z);
      }
      const auto da = pooled_gate_grad(w, go);
      for (std::size_t r = 0; r < t; ++r) outer_acc(da[r].span(), lw.xt[r].span(), du_f);
      detail::split_concat(du_z, grad.z);
      detail::split_concat(du_f, grad.f);
      detail::split_concat(du_o, grad.o);
      break;
    }
    case CellKind::t_gru: {
      const auto w = product_weights(lw.f);
      const std::size_t cols = lw.xt.front().dim();
      Matrix du_o(d, cols), du_z(d, cols), du_f(d, cols);
      for (std::size_t s = 0; s < t; ++s) {
        Vector dao(d), daz(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double o = lw.o[s][i];
          dao[i] = g[i] * w.F[s][i] * lw.z[s][i] * (1.0 - o * o);
          daz[i] = g[i] * w.F[s][i] * o;
        }
        outer_acc(dao.span(), lw.xt[s].span(), du_o);
        outer_acc(daz.span(), lw.xt[s].span(), du_z);
      }
      // dF_s/da_r = (1 - f_r) F_s for r > s.
      for (std::size_t r = 1; r < t; ++r) {
        Vector da(d);
        for (std::size_t s = 0; s < r; ++s)
          for (std::size_t i = 0; i < d; ++i)
            da[i] += g[i] * (1.0 - lw.f[r][i]) * w.F[s][i] * lw.o[s][i] * lw.z[s][i];
        outer_acc(da.span(), lw.xt[r].span(), du_f);
      }
      detail::split_concat(du_z, grad.z);
      detail::split_concat(du_f, grad.f);
      detail::split_concat(du_o, grad.o);
      break;
    }
    default:
      throw std::invalid_argument("closed_form_gradients: expects t_rnn, t_lstm or t_gru");
  }
  return grad;
}

}  // namespace strnn
