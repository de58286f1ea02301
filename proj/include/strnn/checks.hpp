// SPDX-License-Identifier: Apache-2.0
//
// Randomised self-checks shared by the CLI, the test-suite and the
// acceptance runner.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "strnn/autodiff.hpp"
#include "strnn/layer.hpp"
#include "strnn/semantics.hpp"
#include "strnn/shipped_specs.hpp"

namespace strnn {

/// Every tensor drawn from uniform(-scale, scale); T-MR decay stays positive.
inline CellParams random_params(CellKind kind, std::size_t in, std::size_t hidden, Rng& rng,
                                double scale = 0.5) {
  CellParams p = make_params(kind, in, hidden);
  for (auto t : p.tensors())
    for (double& x : t.values) x = rng.uniform(-scale, scale);
  if (kind == CellKind::t_mr)
    for (double& x : p.decay) x = rng.uniform(0.2, 1.0);
  if (kind == CellKind::scrn_state) p.alpha = rng.uniform(0.1, 0.9);
  return p;
}

inline std::vector<Vector> random_sequence(std::size_t steps, std::size_t dim, Rng& rng,
                                           double scale = 1.0) {
  std::vector<Vector> xs;
  xs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) xs.push_back(rng.uniform_vector(dim, -scale, scale));
  return xs;
}

/// x_0..x_{T-1} with x_0 = 0.
inline std::vector<Vector> shifted_inputs(std::span<const Vector> xs) {
  std::vector<Vector> prev;
  prev.reserve(xs.size());
  for (std::size_t t = 0; t < xs.size(); ++t) prev.push_back(t == 0 ? Vector(xs[0].dim()) : xs[t - 1]);
  return prev;
}

/// Runs one layer from the zero state.
inline LayerTape run_layer(const CellParams& p, std::span<const Vector> xs) {
  std::vector<Vector> prev;
  if (uses_prev_input(p.kind)) prev = shifted_inputs(xs);
  return forward_layer(p, {xs.begin(), xs.end()}, std::move(prev),
                       CellState::zeros(p.kind, p.hidden_dim));
}

// ---------------------------------------------------------------------------

struct SemcheckReport {
  std::size_t trials = 0;
  double max_forward_error = 0.0;  // pooled vs recurrent, max abs
  double max_mass_error = 0.0;     // |sum_s P(s) + residual - 1|
  bool ok(double tol) const { return max_forward_error <= tol && max_mass_error <= 1e-12; }
};

/// Pooled forward against the recurrent forward on `trials` random instances
/// with hidden size in [1, max_hidden] and length in [1, max_steps].
inline SemcheckReport semcheck(CellKind kind, std::size_t max_hidden, std::size_t max_steps,
                               std::size_t trials, std::uint64_t seed) {
  if (!is_strongly_typed(kind) || kind == CellKind::t_mr) {
    throw std::invalid_argument("semcheck: needs t-rnn, t-lstm or t-gru");
  }
  if (max_hidden == 0 || max_steps == 0) throw std::invalid_argument("semcheck: sizes must be positive");
  Rng rng(seed);
  SemcheckReport r;
  for (std::size_t k = 0; k < trials; ++k) {
    const std::size_t d = 1 + rng.below(max_hidden);
    const std::size_t in = 1 + rng.below(max_hidden);
    const std::size_t T = 1 + rng.below(max_steps);
    const CellParams p = random_params(kind, in, d, rng, 1.0);
    const auto xs = random_sequence(T, in, rng);
    const Vector pooled = forward_pooled(p, xs);
    const LayerTape tape = run_layer(p, xs);
    r.max_forward_error =
        std::max(r.max_forward_error, max_abs_diff(pooled.span(), tape.output(T - 1).span()));
    std::vector<Vector> gates;
    for (const auto& a : tape.acts) gates.push_back(a.f);
    const PoolingWeights w = pooling_weights(gates);
    for (std::size_t i = 0; i < d; ++i) {
      double mass = w.residual[i];
      for (const auto& ps : w.P) mass += ps[i];
      r.max_mass_error = std::max(r.max_mass_error, std::abs(mass - 1.0));
    }
    ++r.trials;
  }
  return r;
}

// ---------------------------------------------------------------------------

struct GradcheckReport {
  std::size_t trials = 0;
  std::map<std::string, double> max_rel_error;     // BPTT vs finite differences, per tensor
  std::map<std::string, double> max_closed_error;  // BPTT vs closed forms, max abs (T-kinds)

  double worst_rel() const {
    double m = 0.0;
    for (const auto& [name, e] : max_rel_error) m = std::max(m, e);
    return m;
  }
  double worst_closed() const {
    double m = 0.0;
    for (const auto& [name, e] : max_closed_error) m = std::max(m, e);
    return m;
  }
  bool ok(double tol) const { return worst_rel() <= tol && worst_closed() <= 1e-8; }
};

inline bool has_closed_form(CellKind k) {
  return k == CellKind::t_rnn || k == CellKind::t_lstm || k == CellKind::t_gru;
}

/// Loss sum_t w_t . h_t with fixed random w_t.
inline double projected_loss(const CellParams& p, std::span<const Vector> xs,
                             std::span<const Vector> weights) {
  const LayerTape tape = run_layer(p, xs);
  double s = 0.0;
  for (std::size_t t = 0; t < xs.size(); ++t) s += dot(weights[t].span(), tape.output(t).span());
  return s;
}

/// BPTT against central differences (and the closed forms where they exist)
/// on random instances with hidden size in [1, max_hidden] and length in
/// [1, max_steps].
inline GradcheckReport gradcheck(CellKind kind, std::size_t max_hidden, std::size_t max_steps,
                                 std::size_t trials, double eps, std::uint64_t seed) {
  if (kind == CellKind::scrn_state) throw std::invalid_argument("gradcheck: kind is not trainable");
  if (max_hidden == 0 || max_steps == 0) throw std::invalid_argument("gradcheck: sizes must be positive");
  Rng rng(seed);
  GradcheckReport r;
  for (std::size_t k = 0; k < trials; ++k) {
    const std::size_t d = 1 + rng.below(max_hidden);
    const std::size_t in = 1 + rng.below(max_hidden);
    const std::size_t T = 1 + rng.below(max_steps);
    std::vector<CellParams> params{random_params(kind, in, d, rng, 0.8)};
    const auto xs = random_sequence(T, in, rng);
    const auto ws = random_sequence(T, d, rng);

    const LayerTape tape = run_layer(params[0], xs);
    const Gradients bp = backward_layer(params[0], tape, ws).params;
    const auto fd = finite_diff(
        params, [&](const std::vector<CellParams>& ps) { return projected_loss(ps[0], xs, ws); },
        eps);
    const auto bt = bp.tensors();
    const auto ft = fd[0].tensors();
    for (std::size_t i = 0; i < bt.size(); ++i) {
      auto& slot = r.max_rel_error[std::string(bt[i].name)];
      slot = std::max(slot, relative_error(bt[i].values, ft[i].values));
    }

    if (has_closed_form(kind)) {
      std::vector<Vector> last(T, Vector(d));
      last.back() = ws.back();
      const Gradients lbp = backward_layer(params[0], tape, last).params;
      const Gradients cf = closed_form_gradients(params[0], xs, ws.back());
      const auto lt = lbp.tensors();
      const auto ct = cf.tensors();
      for (std::size_t i = 0; i < lt.size(); ++i) {
        auto& slot = r.max_closed_error[std::string(lt[i].name)];
        slot = std::max(slot, max_abs_diff(lt[i].values, ct[i].values));
      }
    }
    ++r.trials;
  }
  return r;
}

// ---------------------------------------------------------------------------

/// max over s of ||dh_T / d state_s||_inf for one random instance.
inline double max_state_jacobian_norm(const CellParams& p, std::span<const Vector> xs) {
  const LayerTape tape = run_layer(p, xs);
  double worst = 0.0;
  for (std::size_t s = 0; s < xs.size(); ++s) {
    std::vector<Vector> prev;
    if (uses_prev_input(p.kind)) prev.assign(tape.prev_inputs.begin() + s, tape.prev_inputs.end());
    const Matrix j = state_jacobian(p, xs.subspan(s), prev, tape.states[s]);
    worst = std::max(worst, inf_norm(j));
  }
  return worst;
}

/// Scales `m` so that its largest singular value is `target` (power
/// iteration on m^T m).
inline void scale_to_spectral_norm(Matrix& m, double target) {
  Vector v = Vector::ones(m.cols());
  double sigma = 0.0;
  for (int it = 0; it < 500; ++it) {
    Vector mv = matvec(m, v);
    Vector w(m.cols());
    matvec_transposed_acc(m, mv.span(), w.span());
    const double n = std::sqrt(dot(w.span(), w.span()));
    if (n == 0.0) throw std::invalid_argument("scale_to_spectral_norm: zero matrix");
    for (std::size_t i = 0; i < w.dim(); ++i) w[i] /= n;
    v = std::move(w);
    sigma = std::sqrt(n);
  }
  for (double& x : m.span()) x *= target / sigma;
}

/// ||dh_T / dh_1||_2 (Frobenius) of a vanilla RNN for each requested T.
inline std::vector<double> rnn_jacobian_growth(const CellParams& p, std::span<const Vector> xs,
                                               std::span<const std::size_t> lengths) {
  if (p.kind != CellKind::rnn) throw std::invalid_argument("rnn_jacobian_growth: expects rnn");
  std::vector<double> out;
  for (std::size_t T : lengths) {
    if (T < 2 || T > xs.size()) throw std::invalid_argument("rnn_jacobian_growth: bad length");
    // h_1 is the state after the first step; run T-1 more steps from it.
    const LayerTape first = run_layer(p, xs.first(1));
    const Matrix j = state_jacobian(p, xs.subspan(1, T - 1), {}, first.states[1]);
    double s = 0.0;
    for (double x : j.span()) s += x * x;
    out.push_back(std::sqrt(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Rolls a shipped spec through the interpreter next to the native cell from
/// a random initial state; returns the largest state gap over all steps.
/// `rnn_symmetric` gets a symmetrised V.
inline double rollout_gap(const dsl::ShippedSpec& sh, Rng& rng, std::size_t d, std::size_t T) {
  using namespace dsl;
  const CellKind kind = sh.kind.value_or(CellKind::rnn);
  const std::size_t in = 1 + rng.below(6);
  CellParams p = random_params(kind, in, d, rng, 1.0);
  if (sh.name == "rnn_symmetric") {
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < i; ++j) p.z.V(i, j) = p.z.V(j, i);
  }
  const auto spec = parse_spec(sh.text);
  const SpecParams sp = spec_params(sh.name, p);
  const auto xs = random_sequence(T, in, rng);
  CellState native = CellState::zeros(kind, d);
  native.h = rng.uniform_vector(d, -1, 1);
  if (native.c) native.c = rng.uniform_vector(d, -1, 1);
  Vector x_prev(in);
  Env state = spec_state(sh.name, native, x_prev);
  double gap = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (kind == CellKind::scrn_state) {
      native.h = scrn_state_step(p.alpha, p.z.W, native.h, xs[t]);
    } else {
      native = cell_step(p, native, x_prev, xs[t]).state;
    }
    x_prev = xs[t];
    state = interpret_step(spec, sp, state, Env{{"x", xs[t]}}).next_state;
    const Env expect = spec_state(sh.name, native, x_prev);
    for (const auto& [name, v] : expect) gap = std::max(gap, max_abs_diff(v.span(), state.at(name).span()));
  }
  return gap;
}

// ---------------------------------------------------------------------------

/// Mean wall time in microseconds of one forward+backward step of a single
/// layer (input size = hidden) over `steps`-long sequences. With threads > 1
/// the repetitions are spread over threads and the figure is per-step
/// throughput rather than latency.
inline double measure_step_time(CellKind kind, std::size_t hidden, std::size_t steps, std::size_t reps,
                                std::uint64_t seed, unsigned threads = 1) {
  if (kind == CellKind::scrn_state) throw std::invalid_argument("bench: kind is not trainable");
  if (hidden == 0 || steps == 0 || reps == 0 || threads == 0) {
    throw std::invalid_argument("bench: sizes must be positive");
  }
  Rng rng(seed);
  const CellParams p = random_params(kind, hidden, hidden, rng, 0.1);
  const auto xs = random_sequence(steps, hidden, rng);
  const std::vector<Vector> up(steps, Vector(hidden, 1.0));
  auto work = [&](std::size_t n, double& sink) {
    for (std::size_t r = 0; r < n; ++r) {
      const LayerTape tape = run_layer(p, xs);
      sink += backward_layer(p, tape, up).params.tensors()[0].values[0];
    }
  };
  std::vector<double> sinks(threads);
  work(1, sinks[0]);  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  if (threads == 1) {
    work(reps, sinks[0]);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t n = reps / threads + (t < reps % threads ? 1 : 0);
      pool.emplace_back([&, n, t] { work(n, sinks[t]); });
    }
    for (auto& th : pool) th.join();
  }
  const double us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
  volatile double keep = std::accumulate(sinks.begin(), sinks.end(), 0.0);
  (void)keep;
  return us / static_cast<double>(reps * steps);
}

}  // namespace strnn
