// SPDX-License-Identifier: Apache-2.0
//
// Fits a single T-MR layer plus a linear readout to a binary function
// g(z1, z2) presented as a two-step sequence x_1 = z1, x_2 = z2. W is h x 1,
// so every row is a scalar multiple of the one scalar feature.

#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "strnn/checks.hpp"
#include "strnn/training.hpp"

namespace strnn {

struct BinaryFitConfig {
  std::size_t hidden = 32;
  std::size_t grid = 21;  // points per axis over [-1, 1]
  std::size_t steps = 5000;
  double lr = 0.1;
  double init_scale = 0.5;
  std::uint64_t seed = 1;
  std::size_t report_every = 500;
};

struct BinaryFitResult {
  std::vector<std::pair<std::size_t, double>> curve;  // (step, mse) before that step's update
  double final_mse = 0.0;
  std::size_t first_below = 0;  // first step with mse < threshold, 0 if never
  CellParams cell;
  Vector readout;
  double readout_bias = 0.0;
};

inline double binary_fit_predict(const BinaryFitResult& r, double z1, double z2) {
  const std::vector<Vector> xs{Vector(1, z1), Vector(1, z2)};
  const LayerTape tape = run_layer(r.cell, xs);
  return r.readout_bias + dot(r.readout.span(), tape.output(1).span());
}

/// Full-batch gradient descent on the mean squared error over the grid.
inline BinaryFitResult fit_binary_function(const std::function<double(double, double)>& target,
                                           const BinaryFitConfig& cfg, double threshold = 1e-2) {
  if (cfg.hidden == 0 || cfg.grid < 2) throw std::invalid_argument("fit_binary_function: bad sizes");
  const std::size_t H = cfg.hidden;
  Rng rng(cfg.seed);
  BinaryFitResult r;
  r.cell = random_params(CellKind::t_mr, 1, H, rng, cfg.init_scale);
  r.readout = rng.uniform_vector(H, -cfg.init_scale, cfg.init_scale);

  std::vector<std::pair<double, double>> pts;
  const double step = 2.0 / static_cast<double>(cfg.grid - 1);
  for (std::size_t i = 0; i < cfg.grid; ++i)
    for (std::size_t j = 0; j < cfg.grid; ++j)
      pts.emplace_back(-1.0 + step * static_cast<double>(i), -1.0 + step * static_cast<double>(j));
  const double n = static_cast<double>(pts.size());

  for (std::size_t s = 0;; ++s) {
    Gradients g = zero_gradients(r.cell);
    Vector ga(H);
    double ga0 = 0.0;
    double mse = 0.0;
    for (const auto& [z1, z2] : pts) {
      const std::vector<Vector> xs{Vector(1, z1), Vector(1, z2)};
      const LayerTape tape = run_layer(r.cell, xs);
      const Vector& h = tape.output(1);
      const double e = r.readout_bias + dot(r.readout.span(), h.span()) - target(z1, z2);
      mse += e * e;
      const double dy = 2.0 * e / n;
      ga0 += dy;
      std::vector<Vector> up{Vector(H), Vector(H)};
      for (std::size_t i = 0; i < H; ++i) {
        ga[i] += dy * h[i];
        up[1][i] = dy * r.readout[i];
      }
      const Gradients lg = backward_layer(r.cell, tape, up).params;
      auto gt = g.tensors();
      const auto lt = lg.tensors();
      for (std::size_t k = 0; k < gt.size(); ++k)
        for (std::size_t j = 0; j < gt[k].values.size(); ++j) gt[k].values[j] += lt[k].values[j];
    }
    mse /= n;
    if (r.first_below == 0 && mse < threshold) r.first_below = s == 0 ? 1 : s;
    if ((cfg.report_every && s % cfg.report_every == 0) || s == cfg.steps) r.curve.emplace_back(s, mse);
    r.final_mse = mse;
    if (s == cfg.steps) break;

    std::vector<std::span<double>> ps;
    std::vector<std::span<double>> gs;
    for (auto t : r.cell.tensors()) ps.push_back(t.values);
    for (auto t : g.tensors()) gs.push_back(t.values);
    ps.push_back(r.readout.span());
    gs.push_back(ga.span());
    ps.push_back({&r.readout_bias, 1});
    gs.push_back({&ga0, 1});
    sgd_update(ps, gs, cfg.lr);
  }
  return r;
}

}  // namespace strnn
