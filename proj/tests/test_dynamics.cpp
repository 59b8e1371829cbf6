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

#include "raceline/dynamics.hpp"

#include <gtest/gtest.h>

#include <random>

namespace raceline {
namespace {

TrackFrame flat_frame() {
  TrackFrame f;
  f.n_left = 6.0;
  f.n_right = -6.0;
  return f;
}

TrackFrame random_frame(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TrackFrame f;
  f.theta = 2.0 * u(rng);
  f.mu = 0.15 * u(rng);
  f.phi = 0.3 * u(rng);
  f.dtheta = 0.01 * u(rng);
  f.dmu = 0.002 * u(rng);
  f.dphi = 0.004 * u(rng);
  f.omega = omega_from_angle_rates(f.mu, f.phi, f.dphi, f.dmu, f.dtheta);
  f.domega_ds = {2e-4 * u(rng), 2e-4 * u(rng), 4e-4 * u(rng)};
  f.n_left = 8.0;
  f.n_right = -8.0;
  return f;
}

PointState random_state(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointState x;
  x.V = 25.0 + 20.0 * u(rng);
  x.n = 4.0 * u(rng);
  x.chi_hat = 0.3 * u(rng);
  x.ax_hat = 8.0 * u(rng);
  x.ay_hat = 15.0 * u(rng);
  return x;
}

TEST(SDot, HandValues) {
  PointState x{30.0, 0.0, 0.0, 0.0, 0.0};
  EXPECT_NEAR(s_dot(x, flat_frame()), 30.0, 1e-12);

  TrackFrame f = flat_frame();
  f.omega[2] = 0.02;
  x.n = 5.0;
  EXPECT_NEAR(s_dot(x, f), 30.0 / 0.9, 1e-12);  // 33.333...

  x.n = 0.0;
  x.chi_hat = kPi / 2.0;
  EXPECT_NEAR(s_dot(x, flat_frame()), 0.0, 1e-12);

  x.n = 60.0;
  EXPECT_THROW(s_dot(x, f), std::domain_error);
}

TEST(FrameRatesOp, HandValues) {
  // Flat straight: only the chi_hat rate survives.
  PointState x{40.0, 1.0, 0.1, 2.0, 5.0};
  FrameRates r = frame_rates(x, flat_frame());
  EXPECT_NEAR(r.omega_hat[0], 0.0, 1e-12);
  EXPECT_NEAR(r.omega_hat[1], 0.0, 1e-12);
  EXPECT_NEAR(r.omega_hat[2], r.chi_dot, 1e-12);
  EXPECT_NEAR(r.w, 0.0, 1e-12);
  EXPECT_NEAR(r.w_dot, 0.0, 1e-12);

  // Pure yaw road rate at chi = 0 with steady chi.
  TrackFrame f = flat_frame();
  f.omega[2] = 0.01;
  PointState s2{50.0, 0.0, 0.0, 0.0, 0.0};
  s2.ay_hat = 0.01 * 50.0 * 50.0;  // steady cornering: chi_dot = 0
  FrameRates r2 = frame_rates(s2, f);
  EXPECT_NEAR(r2.chi_dot, 0.0, 1e-12);
  EXPECT_NEAR(r2.omega_hat[2], 0.5, 1e-12);

  // chi = 0 keeps road x-rate unrotated.
  TrackFrame f3 = flat_frame();
  f3.omega = {0.002, 0.0, 0.0};
  PointState s3{30.0, 0.0, 0.0, 0.0, 0.0};
  FrameRates r3 = frame_rates(s3, f3);
  EXPECT_NEAR(r3.omega_hat[0], 0.002 * r3.s_dot, 1e-14);
  EXPECT_NEAR(r3.omega_hat[1], 0.0, 1e-14);
}

TEST(DynamicsTime, PlanarCases) {
  PointState x{30.0, 0.0, 0.0, 2.0, 0.0};
  PointInput u{0.7, -0.4};
  const auto d = dynamics_time(x, u, flat_frame());
  EXPECT_NEAR(d[0], 2.0, 1e-12);
  EXPECT_NEAR(d[1], 0.0, 1e-12);
  EXPECT_NEAR(d[2], 0.0, 1e-12);
  EXPECT_NEAR(d[3], 0.7, 1e-12);
  EXPECT_NEAR(d[4], -0.4, 1e-12);

  // Steady circular driving on a flat circle.
  TrackFrame f = flat_frame();
  const double R = 80.0;
  f.omega[2] = 1.0 / R;
  PointState c{35.0, 0.0, 0.0, 0.0, 35.0 * 35.0 / R};
  const auto dc = dynamics_time(c, PointInput{}, f);
  EXPECT_NEAR(dc[2], 0.0, 1e-12);

  PointState slow = x;
  slow.V = 0.5;
  EXPECT_THROW(dynamics_time(slow, u, flat_frame()), std::domain_error);
}

TEST(DynamicsTime, MatchesIntegratorFiniteDifference) {
  // x_dot agrees with the finite difference of an independently integrated
  // trajectory (RK4 integrator written here, not the module under test).
  std::mt19937 rng(3);
  TrackFrame f = random_frame(rng);
  PointState x0 = random_state(rng);
  PointInput u{1.2, -0.8};
  auto f_eval = [&](const std::array<double, 5>& v) {
    PointState s{v[0], v[1], v[2], v[3], v[4]};
    return dynamics_time(s, u, f);
  };
  std::array<double, 5> v0{x0.V, x0.n, x0.chi_hat, x0.ax_hat, x0.ay_hat};
  const double dt = 1e-4;
  auto step = [&](std::array<double, 5> v, double h) {
    auto k1 = f_eval(v);
    std::array<double, 5> v2, v3, v4;
    for (int i = 0; i < 5; ++i) v2[i] = v[i] + 0.5 * h * k1[i];
    auto k2 = f_eval(v2);
    for (int i = 0; i < 5; ++i) v3[i] = v[i] + 0.5 * h * k2[i];
    auto k3 = f_eval(v3);
    for (int i = 0; i < 5; ++i) v4[i] = v[i] + h * k3[i];
    auto k4 = f_eval(v4);
    for (int i = 0; i < 5; ++i) v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return v;
  };
  const auto fwd = step(v0, dt);
  const auto bwd = step(v0, -dt);
  const auto d = f_eval(v0);
  for (int i = 0; i < 5; ++i) {
    const double fd = (fwd[i] - bwd[i]) / (2.0 * dt);
    EXPECT_NEAR(d[i], fd, 1e-6 * std::max(1.0, std::abs(d[i])));
  }
}

TEST(DynamicsSpatial, HandValueAndDegenerate) {
  PointState x{30.0, 0.0, 0.0, 3.0, 0.0};
  const auto d = dynamics_spatial(x, PointInput{}, flat_frame());
  EXPECT_NEAR(d[0], 0.1, 1e-12);  // dV/ds = ax / s_dot

  PointState side{30.0, 0.0, kPi / 2.0, 0.0, 0.0};
  EXPECT_THROW(dynamics_spatial(side, PointInput{}, flat_frame()), std::domain_error);
}

TEST(TwoDReduction, MatchesClassicalFrenetEquations) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    TrackFrame f = flat_frame();
    f.dtheta = 0.01 * u(rng);
    f.omega = {0.0, 0.0, f.dtheta};
    f.domega_ds = {0.0, 0.0, 3e-4 * u(rng)};
    PointState x = random_state(rng);
    const auto d = dynamics_time(x, PointInput{}, f);
    const double sd = x.V * std::cos(x.chi_hat) / (1.0 - x.n * f.omega[2]);
    EXPECT_NEAR(d[0], x.ax_hat, 1e-13);
    EXPECT_NEAR(d[1], x.V * std::sin(x.chi_hat), 1e-13);
    EXPECT_NEAR(d[2], x.ay_hat / x.V - f.omega[2] * sd, 1e-13);
  }
}

TEST(ApparentAccelerations, HandValuesAndStaticLimit) {
  // Flat straight, steady: gravity only appears in the vertical channel.
  PointState x{30.0, 0.0, 0.0, 2.0, 1.0};
  TrackFrame f = flat_frame();
  x.ay_hat = 0.0;
  FrameRates r = frame_rates(x, f);
  ApparentAccel a = apparent_accelerations(x, f, r, TermMask::none(), 0.275);
  EXPECT_NEAR(a.ax_tilde, 2.0, 1e-12);
  EXPECT_NEAR(a.g_tilde, kGravity, 1e-12);

  // Banked frame at rest rates: gravity column of the rotation.
  TrackFrame fb = flat_frame();
  fb.phi = -20.0 * kPi / 180.0;
  PointState xb{30.0, 0.0, 0.0, 1.0, 4.0};
  FrameRates rb;  // all-zero motion rates
  ApparentAccel ab = apparent_accelerations(xb, fb, rb, TermMask::none(), 0.275);
  EXPECT_NEAR(ab.ay_tilde - xb.ay_hat, -kGravity * std::sin(20.0 * kPi / 180.0), 1e-9);
  EXPECT_NEAR(ab.ay_tilde - xb.ay_hat, -3.355, 5e-4);
  EXPECT_NEAR(ab.g_tilde, kGravity * std::cos(20.0 * kPi / 180.0), 1e-9);
  EXPECT_NEAR(ab.g_tilde, 9.218, 5e-4);

  // g_tilde = g cos(mu) cos(phi) when all motion-induced terms vanish.
  TrackFrame fs = flat_frame();
  fs.mu = 0.1;
  fs.phi = -0.2;
  ApparentAccel as = apparent_accelerations(PointState{1.0, 0, 0, 0, 0}, fs, FrameRates{},
                                            TermMask::none(), 0.275);
  EXPECT_NEAR(as.g_tilde, kGravity * std::cos(0.1) * std::cos(0.2), 1e-12);
}

TEST(ApparentAccelerations, MaskDropsExactlyTheDocumentedTerms) {
  std::mt19937 rng(11);
  const double h = 0.275;
  for (int k = 0; k < 100; ++k) {
    TrackFrame f = random_frame(rng);
    PointState x = random_state(rng);
    FrameRates r = frame_rates(x, f);
    const ApparentAccel full = apparent_accelerations(x, f, r, TermMask::none(), h);

    TermMask m3;
    m3.neglect_omega_dot_h = true;
    ApparentAccel a3 = apparent_accelerations(x, f, r, m3, h);
    EXPECT_NEAR(full.ax_tilde - a3.ax_tilde, r.omega_hat_dot_y * h, 1e-12);
    EXPECT_NEAR(full.ay_tilde - a3.ay_tilde, r.omega_hat_dot_x * h, 1e-12);
    EXPECT_NEAR(full.g_tilde, a3.g_tilde, 1e-15);

    TermMask m4;
    m4.neglect_omega_cross_h = true;
    ApparentAccel a4 = apparent_accelerations(x, f, r, m4, h);
    EXPECT_NEAR(full.ax_tilde - a4.ax_tilde, -r.omega_hat[0] * r.omega_hat[2] * h, 1e-12);
    EXPECT_NEAR(full.ay_tilde - a4.ay_tilde, r.omega_hat[1] * r.omega_hat[2] * h, 1e-12);

    TermMask m5;
    m5.neglect_omega_y_v = true;
    ApparentAccel a5 = apparent_accelerations(x, f, r, m5, h);
    EXPECT_NEAR(full.g_tilde - a5.g_tilde, -r.omega_hat[1] * x.V, 1e-12);

    TermMask m6;
    m6.neglect_w_dot = true;
    ApparentAccel a6 = apparent_accelerations(x, f, r, m6, h);
    EXPECT_NEAR(full.g_tilde - a6.g_tilde, r.w_dot, 1e-12);

    // Mask row 2 changes the dynamics rows by exactly the w couplings.
    TermMask m2;
    m2.neglect_w_omega = true;
    const auto df = dynamics_time(x, PointInput{}, f, TermMask::none());
    const auto d2 = dynamics_time(x, PointInput{}, f, m2);
    EXPECT_NEAR(df[0] - d2[0], -r.w * r.omega_hat[1], 1e-12);
    EXPECT_NEAR(df[1], d2[1], 1e-15);
  }
}

TEST(ComKinematicsOracle, IdentityWithApparentAccelerations) {
  std::mt19937 rng(17);
  const double h = 0.275;
  double max_err = 0.0;
  for (int k = 0; k < 10000; ++k) {
    TrackFrame f = random_frame(rng);
    PointState x = random_state(rng);
    FrameRates r = frame_rates(x, f);
    const ApparentAccel a = apparent_accelerations(x, f, r, TermMask::none(), h);
    const ComKinematics c = com_kinematics(x, r, f, h);
    const Eigen::Vector3d total = c.a_com + c.g_vec;
    max_err = std::max(max_err, std::abs(total[0] - a.ax_tilde));
    max_err = std::max(max_err, std::abs(total[1] - a.ay_tilde));
    max_err = std::max(max_err, std::abs(total[2] - a.g_tilde));
  }
  EXPECT_LT(max_err, 1e-12);
}

TEST(ComKinematicsOracle, SpecialValues) {
  std::mt19937 rng(23);
  TrackFrame f = random_frame(rng);
  PointState x = random_state(rng);
  FrameRates r = frame_rates(x, f);
  // h = 0 removes every CoM offset term.
  const ComKinematics c0 = com_kinematics(x, r, f, 0.0);
  EXPECT_NEAR(c0.v_com[0], x.V, 1e-12);
  EXPECT_NEAR(c0.v_com[1], 0.0, 1e-12);
  EXPECT_NEAR(c0.a_com[2], r.w_dot - r.omega_hat[1] * x.V, 1e-12);
  // Upright gravity.
  TrackFrame flat = flat_frame();
  const ComKinematics cf = com_kinematics(x, r, flat, 0.275);
  EXPECT_NEAR(cf.g_vec[0], 0.0, 1e-12);
  EXPECT_NEAR(cf.g_vec[1], 0.0, 1e-12);
  EXPECT_NEAR(cf.g_vec[2], kGravity, 1e-12);
}

TEST(Jacobians, MatchCentralDifferences) {
  std::mt19937 rng(29);
  const TermMask masks[3] = {TermMask::none(), TermMask::reduced(), [] {
                               TermMask m;
                               m.neglect_omega_y_v = true;
                               return m;
                             }()};
  double worst = 0.0;
  for (int k = 0; k < 300; ++k) {
    TrackFrame f = random_frame(rng);
    PointState x = random_state(rng);
    PointInput u{1.0, -2.0};
    const TermMask& m = masks[k % 3];
    const DynamicsJacobians jac = jacobians(x, u, f, m, 0.275);

    auto num_col = [&](int which) {
      // which: 0..4 state, 5..6 input
      const double base[7] = {x.V, x.n, x.chi_hat, x.ax_hat, x.ay_hat, u.jx_hat, u.jy_hat};
      const double step = 1e-5 * std::max(1.0, std::abs(base[which]));
      auto eval = [&](double delta) {
        double v[7];
        std::copy(base, base + 7, v);
        v[which] += delta;
        PointState xs{v[0], v[1], v[2], v[3], v[4]};
        PointInput us{v[5], v[6]};
        const auto d = dynamics_spatial(xs, us, f, m);
        ApparentAccel a = apparent_accelerations(xs, f, m, 0.275);
        return std::array<double, 8>{d[0], d[1], d[2], d[3], d[4],
                                     a.ax_tilde, a.ay_tilde, a.g_tilde};
      };
      const auto p = eval(step), q = eval(-step);
      std::array<double, 8> col;
      for (int i = 0; i < 8; ++i) col[i] = (p[i] - q[i]) / (2.0 * step);
      return col;
    };
    for (int c = 0; c < 7; ++c) {
      const auto col = num_col(c);
      for (int r = 0; r < 5; ++r) {
        const double a = c < 5 ? jac.dxprime_dx(r, c) : jac.dxprime_du(r, c - 5);
        const double denom = std::max({1.0, std::abs(a), std::abs(col[r])});
        worst = std::max(worst, std::abs(a - col[r]) / denom);
      }
      if (c < 5) {
        for (int r = 0; r < 3; ++r) {
          const double a = jac.dapparent_dx(r, c);
          const double denom = std::max({1.0, std::abs(a), std::abs(col[5 + r])});
          worst = std::max(worst, std::abs(a - col[5 + r]) / denom);
        }
      }
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Jacobians, InputRowsAreScaledIdentity) {
  std::mt19937 rng(31);
  TrackFrame f = random_frame(rng);
  PointState x = random_state(rng);
  const DynamicsJacobians jac = jacobians(x, PointInput{0.3, 0.4}, f);
  const double inv_sdot = 1.0 / s_dot(x, f);
  EXPECT_NEAR(jac.dxprime_du(3, 0), inv_sdot, 1e-12);
  EXPECT_NEAR(jac.dxprime_du(4, 1), inv_sdot, 1e-12);
  for (int r = 0; r < 3; ++r) {
    EXPECT_NEAR(jac.dxprime_du(r, 0), 0.0, 1e-12);
    EXPECT_NEAR(jac.dxprime_du(r, 1), 0.0, 1e-12);
  }
  EXPECT_NEAR(jac.dxprime_du(3, 1), 0.0, 1e-12);
  EXPECT_NEAR(jac.dxprime_du(4, 0), 0.0, 1e-12);
}

}  // namespace
}  // namespace raceline
