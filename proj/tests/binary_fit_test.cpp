// SPDX-License-Identifier: Apache-2.0

#include "strnn/binary_fit.hpp"

#include <gtest/gtest.h>

#include <algorithm>

namespace strnn {
namespace {

double max2(double a, double b) { return std::max(a, b); }

TEST(BinaryFit, ZeroStepsReportsInitialMse) {
  BinaryFitConfig cfg;
  cfg.hidden = 4;
  cfg.grid = 3;
  cfg.steps = 0;
  const auto r = fit_binary_function(max2, cfg);
  ASSERT_EQ(r.curve.size(), 1u);
  double mse = 0.0;
  for (double z1 : {-1.0, 0.0, 1.0})
    for (double z2 : {-1.0, 0.0, 1.0}) {
      const double e = binary_fit_predict(r, z1, z2) - max2(z1, z2);
      mse += e * e;
    }
  EXPECT_NEAR(r.final_mse, mse / 9.0, 1e-14);
}

TEST(BinaryFit, FitsMaxOnSmallGrid) {
  BinaryFitConfig cfg;
  cfg.hidden = 16;
  cfg.grid = 9;
  cfg.steps = 3000;
  const auto r = fit_binary_function(max2, cfg);
  EXPECT_LT(r.final_mse, 1e-2);
  EXPECT_LT(r.final_mse, r.curve.front().second / 10.0);
  EXPECT_GT(r.first_below, 0u);
}

TEST(BinaryFit, Deterministic) {
  BinaryFitConfig cfg;
  cfg.hidden = 4;
  cfg.grid = 5;
  cfg.steps = 50;
  const auto a = fit_binary_function(max2, cfg);
  const auto b = fit_binary_function(max2, cfg);
  EXPECT_EQ(a.final_mse, b.final_mse);
  EXPECT_EQ(a.cell, b.cell);
}

TEST(BinaryFit, RejectsDegenerateGrid) {
  BinaryFitConfig cfg;
  cfg.grid = 1;
  EXPECT_THROW(fit_binary_function(max2, cfg), std::invalid_argument);
}

}  // namespace
}  // namespace strnn
