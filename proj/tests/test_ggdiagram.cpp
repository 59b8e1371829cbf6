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

#include "raceline/ggdiagram.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

namespace raceline {
namespace {

const VehicleParams& params() {
  static const VehicleParams p;
  return p;
}

TEST(QssPoint, LateralSymmetry) {
  const auto up = solve_qss_point(params(), 30.0, kGravity, kPi / 2.0);
  const auto dn = solve_qss_point(params(), 30.0, kGravity, -kPi / 2.0);
  ASSERT_TRUE(up.converged);
  ASSERT_TRUE(dn.converged);
  EXPECT_NEAR(up.rho, dn.rho, 1e-4 * up.rho);
  EXPECT_NEAR(up.beta, -dn.beta, 1e-5);
}

TEST(QssPoint, BrakingBoundedByFrictionOracle) {
  // Hand bound: total braking force <= sum of per-wheel friction caps with
  // the most favorable load sensitivity, plus the drag assist.
  const double V = 40.0, gt = kGravity;
  const auto q = solve_qss_point(params(), V, gt, kPi);
  ASSERT_TRUE(q.converged);
  const VehicleParams& vp = params();
  const double qdyn = 0.5 * kAirDensity * V * V;
  const double total_load = vp.m * gt + qdyn * (vp.C_LfA + vp.C_LrA);
  const double mu_bound = (vp.pDx1 + std::abs(vp.pDx2)) * vp.lambda_mux;
  const double bound = mu_bound * total_load / vp.m + qdyn * vp.C_DA / vp.m;
  EXPECT_GT(q.rho, 0.5 * bound);  // sane magnitude
  EXPECT_LE(std::abs(q.ax_tilde), bound + 1e-6);
}

TEST(QssPoint, TractionPowerCapAtSpeed) {
  // At V = 60 the drive power cap P/(mV) = 7.933 m/s^2 dominates traction;
  // the achievable forward acceleration is that minus the drag share.
  const double V = 60.0;
  const auto q = solve_qss_point(params(), V, kGravity, 0.0);
  ASSERT_TRUE(q.converged);
  const VehicleParams& vp = params();
  const double power_cap = vp.P_max / (vp.m * V);
  EXPECT_NEAR(power_cap, 7.9333333, 1e-6);
  const double drag = 0.5 * kAirDensity * V * V * vp.C_DA / vp.m;
  EXPECT_LE(q.ax_tilde, power_cap - drag + 1e-6);
  EXPECT_GT(q.ax_tilde, 0.8 * (power_cap - drag));
}

TEST(BuildGrid, QualitativeEnvelopeBehavior) {
  GridBuildReport report;
  GGGrid grid = build_grid(params(), {30.0, 60.0}, {kGravity, 2.0 * kGravity}, 64, &report);
  EXPECT_EQ(report.failed_points, 0);
  const GGDiamond d30g = grid.diamond_at(0, 0);
  const GGDiamond d60g = grid.diamond_at(1, 0);
  // Downforce raises lateral grip with speed; drag cuts forward acceleration.
  EXPECT_GT(d60g.ay_max, d30g.ay_max);
  EXPECT_LT(d60g.ax_max, d30g.ax_max);
  // Extra vertical load expands the envelope for braking and lateral rays.
  for (double a : {kPi, kPi / 2.0, 3.0 * kPi / 4.0}) {
    EXPECT_GE(grid.rho_interp_alpha(0, 1, a), grid.rho_interp_alpha(0, 0, a) - 1e-6);
    EXPECT_GE(grid.rho_interp_alpha(1, 1, a), grid.rho_interp_alpha(1, 0, a) - 1e-6);
  }
  // All fitted exponents stay in the admissible range.
  for (const auto& d : grid.diamonds) {
    EXPECT_GE(d.p, 1.0);
    EXPECT_LE(d.p, 2.0);
    EXPECT_LE(d.ax_min, 0.0);
    EXPECT_GT(d.ax_max, 0.0);
  }
  // Subset property at every node.
  EXPECT_GE(check_subset_margin(grid, 720), -1e-6);
}

TEST(FitDiamond, DiscWithTractionCapRecovered) {
  // Polar envelope: disc of radius 10 cut at ax = 5.
  const int n = 256;
  std::vector<double> rho(n);
  for (int i = 0; i < n; ++i) {
    const double a = -kPi + 2.0 * kPi * i / n;
    const double c = std::cos(a);
    rho[i] = (c > 0.0) ? std::min(10.0, 5.0 / c) : 10.0;
  }
  const GGDiamond d = fit_diamond(rho);
  EXPECT_NEAR(d.ax_min, -10.0, 0.05);
  EXPECT_NEAR(d.ay_max, 10.0, 0.05);
  EXPECT_NEAR(d.ax_max, 5.0, 0.05);
  EXPECT_NEAR(d.p, 2.0, 0.02);
}

TEST(FitDiamond, RhombusRoundTrip) {
  // Envelope generated from a known diamond with p = 1; the fit recovers it.
  GGDiamond src;
  src.ax_min = -12.0;
  src.ax_max = 12.0;  // no cut
  src.ay_max = 8.0;
  src.p = 1.0;
  const int n = 256;
  std::vector<double> rho(n);
  for (int i = 0; i < n; ++i) rho[i] = diamond_boundary_radius(src, -kPi + 2.0 * kPi * i / n);
  const GGDiamond d = fit_diamond(rho);
  EXPECT_NEAR(d.p, 1.0, 0.05);
  EXPECT_NEAR(d.ax_min, src.ax_min, 0.1);
  EXPECT_NEAR(d.ay_max, src.ay_max, 0.1);
}

TEST(EvalConstraints, ResidualTriple) {
  // Single-node grid makes interpolation the identity.
  GGGrid grid;
  grid.v_axis = {30.0};
  grid.g_axis = {kGravity};
  grid.n_alpha = 64;
  GGDiamond d;
  d.ax_min = -10.0;
  d.ax_max = 6.0;
  d.ay_max = 10.0;
  d.p = 2.0;
  grid.diamonds = {d};
  grid.polar.assign(64, 10.0);

  const GGResiduals origin = eval_constraints(grid, 30.0, kGravity, 0.0, 0.0);
  EXPECT_GT(origin.r_a, 0.0);
  EXPECT_GT(origin.r_b, 0.0);
  EXPECT_GT(origin.r_c, 0.0);

  const GGResiduals corner = eval_constraints(grid, 30.0, kGravity, 0.0, 10.0);
  EXPECT_NEAR(corner.r_b, 0.0, 1e-12);
  EXPECT_NEAR(corner.r_c, 0.0, 1e-12);

  // Evaluated independently: 10*sqrt(1 - 0.714^2) - 7 = +0.00145688...
  const GGResiduals near_arc = eval_constraints(grid, 30.0, kGravity, -7.0, 7.14);
  const double expected = 10.0 * std::sqrt(1.0 - std::pow(0.714, 2.0)) - 7.0;
  EXPECT_NEAR(near_arc.r_c, expected, 1e-9);
  EXPECT_NEAR(near_arc.r_c, 0.0014569, 1e-6);
  // A point actually outside the arc has a negative residual.
  const GGResiduals outside = eval_constraints(grid, 30.0, kGravity, -7.1, 7.14);
  EXPECT_LT(outside.r_c, 0.0);

  // Interpolation at grid nodes returns stored values exactly.
  const DiamondInterp di = interp_diamond(grid, 30.0, kGravity);
  EXPECT_EQ(di.d.ax_min, d.ax_min);
  EXPECT_EQ(di.d.p, d.p);
}

TEST(EvalPolar, ResidualAndSubsetConsistency) {
  GGGrid grid;
  grid.v_axis = {30.0};
  grid.g_axis = {kGravity};
  grid.n_alpha = 128;
  grid.polar.resize(128);
  for (int i = 0; i < 128; ++i) {
    const double a = -kPi + 2.0 * kPi * i / 128;
    grid.polar[i] = 10.0 + 2.0 * std::cos(a);  // egg-shaped envelope
  }
  std::vector<double> slice(grid.polar);
  grid.diamonds = {fit_diamond(slice)};

  EXPECT_GT(eval_polar_constraint(grid, 30.0, kGravity, 0.0, 0.0), 0.0);
  // Boundary point: zero residual up to interpolation error.
  const double a0 = grid.alpha_at(17);
  const double r0 = grid.rho_at(0, 0, 17);
  EXPECT_NEAR(eval_polar_constraint(grid, 30.0, kGravity, r0 * std::cos(a0), r0 * std::sin(a0)),
              0.0, 1e-9);
  // Diamond-feasible boundary points satisfy the polar constraint.
  for (int j = 0; j < 720; ++j) {
    const double psi = -kPi + 2.0 * kPi * j / 720;
    const double rr = diamond_boundary_radius(grid.diamonds[0], psi);
    const double margin =
        eval_polar_constraint(grid, 30.0, kGravity, rr * std::cos(psi), rr * std::sin(psi));
    EXPECT_GE(margin, -1e-9);
  }
}

TEST(GridIo, FileRoundTrip) {
  GGGrid grid = build_grid(params(), {20.0, 40.0}, {kGravity}, 64);
  const std::string path = std::filesystem::temp_directory_path() / "rt_grid.csv";
  grid_to_file(grid, path);
  GGGrid loaded = grid_from_file(path);
  ASSERT_EQ(loaded.nv(), grid.nv());
  ASSERT_EQ(loaded.ng(), grid.ng());
  ASSERT_EQ(loaded.n_alpha, grid.n_alpha);
  EXPECT_EQ(loaded.hash, grid.hash);
  for (int ia = 0; ia < grid.n_alpha; ia += 7)
    EXPECT_NEAR(loaded.rho_at(1, 0, ia), grid.rho_at(1, 0, ia), 1e-6);
  EXPECT_NEAR(loaded.diamond_at(0, 0).p, grid.diamond_at(0, 0).p, 1e-8);
  std::remove(path.c_str());
}

TEST(BuildGrid, SingleCellGridDegeneratesToConstantField) {
  GGGrid grid = build_grid(params(), {30.0}, {kGravity}, 64);
  const GGDiamond d = grid.diamond_at(0, 0);
  const DiamondInterp lo = interp_diamond(grid, 5.0, 0.5 * kGravity);
  const DiamondInterp hi = interp_diamond(grid, 90.0, 2.5 * kGravity);
  EXPECT_TRUE(lo.clamped);
  EXPECT_TRUE(hi.clamped);
  EXPECT_EQ(lo.d.ax_min, d.ax_min);
  EXPECT_EQ(hi.d.ay_max, d.ay_max);
}

}  // namespace
}  // namespace raceline
