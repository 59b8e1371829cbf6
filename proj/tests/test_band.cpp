// Copyright 2026 The raceline3d Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at

//     https://www.apache.org/licenses/LICENSE-2.0

// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "raceline/band_matrix.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

namespace raceline {
namespace {

// Random quasidefinite matrix: positive diagonal block entries on even
// indices, negative on odd, banded coupling.
TEST(BandBorderLdlt, MatchesDenseSolveBanded) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int n = 60, hbw = 5;
  BandBorderLDLT k;
  k.resize(n, hbw, 0);
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    const double d = (j % 2 == 0) ? 3.0 + u(rng) : -3.0 + u(rng);
    k.add(j, j, d);
    dense(j, j) = d;
    for (int i = j + 1; i <= std::min(n - 1, j + hbw); ++i) {
      const double v = 0.3 * u(rng);
      k.add(i, j, v);
      dense(i, j) = v;
      dense(j, i) = v;
    }
  }
  ASSERT_TRUE(k.factorize());
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b[i] = u(rng);
  Eigen::VectorXd x = b;
  k.solve(x);
  Eigen::VectorXd x_ref = dense.fullPivLu().solve(b);
  EXPECT_LT((x - x_ref).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(BandBorderLdlt, MatchesDenseSolveWithBorder) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int n = 40, hbw = 4, nb = 3;
  BandBorderLDLT k;
  k.resize(n, hbw, nb);
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(n + nb, n + nb);
  for (int j = 0; j < n; ++j) {
    const double d = 4.0 + u(rng);
    k.add(j, j, d);
    dense(j, j) = d;
    for (int i = j + 1; i <= std::min(n - 1, j + hbw); ++i) {
      const double v = 0.4 * u(rng);
      k.add(i, j, v);
      dense(i, j) = v;
      dense(j, i) = v;
    }
  }
  for (int r = 0; r < nb; ++r) {
    for (int j = 0; j < n; ++j) {
      if ((j + r) % 7 == 0) {
        const double v = u(rng);
        k.add_border(r, j, v);
        dense(n + r, j) = v;
        dense(j, n + r) = v;
      }
    }
    k.add_corner(r, r, -2.0);
    dense(n + r, n + r) = -2.0;
  }
  // multiply() agrees with the dense product.
  Eigen::VectorXd t(n + nb), kt;
  for (int i = 0; i < n + nb; ++i) t[i] = u(rng);
  k.multiply(t, kt);
  EXPECT_LT((kt - dense * t).lpNorm<Eigen::Infinity>(), 1e-12);

  ASSERT_TRUE(k.factorize());
  Eigen::VectorXd b(n + nb);
  for (int i = 0; i < n + nb; ++i) b[i] = u(rng);
  Eigen::VectorXd x = b;
  k.solve(x);
  Eigen::VectorXd x_ref = dense.fullPivLu().solve(b);
  EXPECT_LT((x - x_ref).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(BandBorderLdlt, ReportsBreakdown) {
  BandBorderLDLT k;
  k.resize(2, 1, 0);
  k.add(0, 0, 1.0);
  k.add(1, 0, 1.0);
  k.add(1, 1, 1.0);  // second pivot becomes exactly zero
  EXPECT_FALSE(k.factorize());
}

}  // namespace
}  // namespace raceline
