// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace strnn {
namespace {

using testing::random_params;
using testing::random_sequence;

TEST(FiniteDiff, Quadratic) {
  std::vector<CellParams> ps{make_params(CellKind::t_mr, 1, 1)};
  ps[0].z.W(0, 0) = 3.0;
  const auto g = finite_diff(
      ps, [](const std::vector<CellParams>& q) { return q[0].z.W(0, 0) * q[0].z.W(0, 0); }, 1e-5);
  EXPECT_NEAR(g[0].z.W(0, 0), 6.0, 1e-6);
  EXPECT_EQ(g[0].decay[0], 0.0);
  EXPECT_EQ(ps[0].z.W(0, 0), 3.0);
}

TEST(FiniteDiff, LinearIsExact) {
  std::vector<CellParams> ps{make_params(CellKind::t_mr, 2, 2)};
  const auto g = finite_diff(
      ps,
      [](const std::vector<CellParams>& q) { return 0.5 * q[0].offset[0] - 2.0 * q[0].decay[1]; },
      1e-3);
  EXPECT_NEAR(g[0].offset[0], 0.5, 1e-12);
  EXPECT_NEAR(g[0].decay[1], -2.0, 1e-12);
}

TEST(FiniteDiff, Errors) {
  std::vector<CellParams> ps{make_params(CellKind::t_mr, 1, 1)};
  auto loss = [](const std::vector<CellParams>&) { return 1.0; };
  EXPECT_THROW(finite_diff(ps, loss, 1e-8), std::invalid_argument);
  EXPECT_THROW(finite_diff(ps, loss, 1e-2), std::invalid_argument);
  auto bad = [](const std::vector<CellParams>&) { return std::nan(""); };
  EXPECT_THROW(finite_diff(ps, bad, 1e-5), std::runtime_error);
}

TEST(Bptt, TRnnSingleStep) {
  Rng rng(41);
  const auto p = random_params(CellKind::t_rnn, 2, 3, rng);
  const std::vector<Vector> xs{rng.uniform_vector(2, -1, 1)};
  const std::vector<Vector> up{rng.uniform_vector(3, -1, 1)};
  const auto g = backward_layer(p, run_layer(p, xs), up);
  const auto a = typed_learnware(p, Vector(), xs[0]);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_NEAR(g.params.z.W(i, j), up[0][i] * (1 - a.f[i]) * xs[0][j], 1e-15);
    }
    EXPECT_NEAR(g.params.f.b[i], -up[0][i] * a.z[i] * a.f[i] * (1 - a.f[i]), 1e-15);
  }
}

TEST(Bptt, EveryKindMatchesFiniteDifferences) {
  for (CellKind k : kTrainableKinds) {
    const auto r = gradcheck(k, 4, 8, 10, 1e-5, 77);
    EXPECT_LE(r.worst_rel(), 1e-4) << to_string(k);
    if (has_closed_form(k)) {
      EXPECT_LE(r.worst_closed(), 1e-8) << to_string(k);
    } else {
      EXPECT_TRUE(r.max_closed_error.empty());
    }
  }
}

TEST(Bptt, TGruSmallCrossCheck) {
  const auto r = gradcheck(CellKind::t_gru, 2, 4, 5, 1e-5, 5);
  EXPECT_LE(r.worst_rel(), 1e-4);
}

TEST(Bptt, InitialStateGradient) {
  Rng rng(42);
  for (CellKind k : kTrainableKinds) {
    const auto p = random_params(k, 2, 3, rng);
    const auto xs = random_sequence(4, 2, rng);
    const auto ws = random_sequence(4, 3, rng);
    CellState s0{rng.uniform_vector(3, -1, 1), std::nullopt};
    if (has_memory_cell(k)) s0.c = rng.uniform_vector(3, -1, 1);
    const auto prev = uses_prev_input(k) ? testing::shifted(xs) : std::vector<Vector>{};
    auto loss = [&](const CellState& s) {
      const auto tape = forward_layer(p, xs, prev, s);
      double v = 0.0;
      for (std::size_t t = 0; t < xs.size(); ++t) v += dot(ws[t].span(), tape.output(t).span());
      return v;
    };
    const auto g = backward_layer(p, forward_layer(p, xs, prev, s0), ws);
    for (std::size_t j = 0; j < 3; ++j) {
      CellState up = s0, down = s0;
      up.h[j] += 1e-6;
      down.h[j] -= 1e-6;
      EXPECT_NEAR(g.d_initial.h[j], (loss(up) - loss(down)) / 2e-6, 1e-8) << to_string(k);
      if (s0.c) {
        up = s0;
        down = s0;
        (*up.c)[j] += 1e-6;
        (*down.c)[j] -= 1e-6;
        EXPECT_NEAR((*g.d_initial.c)[j], (loss(up) - loss(down)) / 2e-6, 1e-8) << to_string(k);
      }
    }
  }
}

// Two stacked layers with dropout: the mask and the cross-time x_{t-1} path
// must both be accounted for.
TEST(Bptt, StackWithDropoutMatchesFiniteDifferences) {
  for (CellKind k : kTrainableKinds) {
    Rng rng(43);
    std::vector<CellParams> layers{random_params(k, 3, 4, rng, 0.8), random_params(k, 4, 3, rng, 0.8)};
    const auto xs = random_sequence(5, 3, rng);
    const auto ws = random_sequence(5, 3, rng);
    auto forward = [&](const std::vector<CellParams>& ps) {
      Rng drop(9);
      return stack_forward(ps, xs, StackState::zeros(ps), 0.3, &drop);
    };
    auto loss = [&](const std::vector<CellParams>& ps) {
      const auto tape = forward(ps);
      double v = 0.0;
      for (std::size_t t = 0; t < xs.size(); ++t) v += dot(ws[t].span(), tape.outputs[t].span());
      return v;
    };
    const auto tape = forward(layers);
    const auto g = bptt(layers, tape, ws);
    const auto fd = finite_diff(layers, loss, 1e-5);
    for (std::size_t l = 0; l < 2; ++l) {
      const auto bt = g.layers[l].tensors();
      const auto ft = fd[l].tensors();
      for (std::size_t i = 0; i < bt.size(); ++i) {
        EXPECT_LE(relative_error(bt[i].values, ft[i].values), 1e-4)
            << to_string(k) << " layer " << l << " " << bt[i].name;
      }
    }
    // Gradient with respect to the bottom inputs.
    for (std::size_t t = 0; t < xs.size(); ++t) {
      for (std::size_t j = 0; j < 3; ++j) {
        auto shift = [&](double e) {
          auto x2 = xs;
          x2[t][j] += e;
          Rng drop(9);
          const auto tp = stack_forward(layers, x2, StackState::zeros(layers), 0.3, &drop);
          double v = 0.0;
          for (std::size_t s = 0; s < xs.size(); ++s) v += dot(ws[s].span(), tp.outputs[s].span());
          return v;
        };
        EXPECT_NEAR(g.d_inputs[t][j], (shift(1e-6) - shift(-1e-6)) / 2e-6, 1e-7) << to_string(k);
      }
    }
  }
}

TEST(Bptt, Errors) {
  Rng rng(44);
  const auto p = random_params(CellKind::t_lstm, 2, 3, rng);
  const auto q = random_params(CellKind::lstm, 2, 3, rng);
  const auto xs = random_sequence(3, 2, rng);
  const auto tape = run_layer(p, xs);
  EXPECT_THROW(backward_layer(q, tape, random_sequence(3, 3, rng)), std::invalid_argument);
  EXPECT_THROW(backward_layer(p, tape, random_sequence(2, 3, rng)), std::invalid_argument);
  const auto s = random_params(CellKind::scrn_state, 2, 3, rng);
  EXPECT_THROW(backward_layer(s, run_layer(s, xs), random_sequence(3, 3, rng)), std::invalid_argument);
}

TEST(Clip, Examples) {
  std::vector<double> a{6.0, 8.0};  // norm 10
  auto r = clip_global_norm({std::span<double>(a)}, 5.0);
  EXPECT_EQ(r.norm, 10.0);
  EXPECT_EQ(r.scale, 0.5);
  EXPECT_EQ(a, (std::vector<double>{3.0, 4.0}));

  std::vector<double> b{0.0, 3.0};
  r = clip_global_norm({std::span<double>(b)}, 5.0);
  EXPECT_EQ(r.scale, 1.0);
  EXPECT_EQ(b, (std::vector<double>{0.0, 3.0}));

  std::vector<double> c{1e300, -0.1, 7.25};
  const auto before = c;
  r = clip_global_norm({std::span<double>(c)}, std::nullopt);
  EXPECT_EQ(r.scale, 1.0);
  EXPECT_EQ(c, before);
}

TEST(Clip, AcrossTensors) {
  Rng rng(45);
  std::vector<Gradients> gs{random_params(CellKind::t_gru, 2, 3, rng, 5.0),
                            random_params(CellKind::t_gru, 3, 3, rng, 5.0)};
  const auto r = clip_global_norm(gs, 1.0);
  EXPECT_GT(r.norm, 1.0);
  std::vector<std::span<double>> spans;
  for (auto& g : gs)
    for (auto t : g.tensors()) spans.push_back(t.values);
  EXPECT_NEAR(global_norm(spans), 1.0, 1e-12);
}

TEST(Jacobian, TypedCellsAreBounded) {
  Rng rng(46);
  for (CellKind k : {CellKind::t_rnn, CellKind::t_lstm}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto p = random_params(k, 3, 4, rng, 2.0);
      const auto xs = random_sequence(10, 3, rng, 2.0);
      EXPECT_LE(max_state_jacobian_norm(p, xs), 1.0) << to_string(k);
    }
  }
}

TEST(Jacobian, TRnnIsGateProduct) {
  Rng rng(47);
  const auto p = random_params(CellKind::t_rnn, 2, 3, rng);
  const auto xs = random_sequence(5, 2, rng);
  const Matrix j = state_jacobian(p, xs, {}, CellState::zeros(CellKind::t_rnn, 3));
  for (std::size_t i = 0; i < 3; ++i) {
    double prod = 1.0;
    for (const auto& x : xs) prod *= typed_learnware(p, Vector(), x).f[i];
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(j(i, c), i == c ? prod : 0.0, 1e-15);
  }
}

TEST(Jacobian, SpectralScaling) {
  Rng rng(48);
  Matrix m = rng.uniform_matrix(5, 5, -1, 1);
  scale_to_spectral_norm(m, 3.0);
  // ||m v|| <= 3 ||v|| for random v, with near equality somewhere.
  double best = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const Vector v = rng.uniform_vector(5, -1, 1);
    const Vector mv = matvec(m, v);
    const double ratio = std::sqrt(dot(mv.span(), mv.span()) / dot(v.span(), v.span()));
    EXPECT_LE(ratio, 3.0 + 1e-9);
    best = std::max(best, ratio);
  }
  EXPECT_GT(best, 2.5);
}

}  // namespace
}  // namespace strnn
