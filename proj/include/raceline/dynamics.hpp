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

#ifndef RACELINE_DYNAMICS_HPP_
#define RACELINE_DYNAMICS_HPP_

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <stdexcept>

#include "raceline/autodiff.hpp"
#include "raceline/track.hpp"

namespace raceline {

inline constexpr double kGravity = 9.81;        // [m/s^2]
inline constexpr double kVelocityFloor = 1.0;   // [m/s] planner lower bound on V

// Quasi-steady-state point-mass state in the velocity frame.
struct PointState {
  double V = 0.0;        // total in-plane speed [m/s]
  double n = 0.0;        // lateral offset [m]
  double chi_hat = 0.0;  // velocity-frame orientation relative to the reference line [rad]
  double ax_hat = 0.0;   // longitudinal acceleration [m/s^2]
  double ay_hat = 0.0;   // lateral acceleration [m/s^2]
};

struct PointInput {
  double jx_hat = 0.0;  // longitudinal jerk [m/s^3]
  double jy_hat = 0.0;  // lateral jerk [m/s^3]
};

// Switches for dropping individual 3D coupling terms. Naming follows the
// term being dropped; `reduced()` drops the three cheap ones.
struct TermMask {
  bool neglect_w_omega = false;        // w*omega_hat coupling in the dynamics
  bool neglect_omega_dot_h = false;    // omega_hat_dot * h in the apparent accelerations
  bool neglect_omega_cross_h = false;  // omega_hat_x/y * omega_hat_z * h terms
  bool neglect_omega_y_v = false;      // omega_hat_y * V in the vertical channel
  bool neglect_w_dot = false;          // w_dot in the vertical channel

  static TermMask none() { return {}; }
  static TermMask reduced() {
    TermMask m;
    m.neglect_w_omega = true;
    m.neglect_omega_dot_h = true;
    m.neglect_omega_cross_h = true;
    return m;
  }
  bool any() const {
    return neglect_w_omega || neglect_omega_dot_h || neglect_omega_cross_h ||
           neglect_omega_y_v || neglect_w_dot;
  }
};

// Time-domain rates of the moving frames at a given state.
struct FrameRates {
  Eigen::Vector3d omega_hat = Eigen::Vector3d::Zero();  // [rad/s]
  double omega_hat_dot_x = 0.0, omega_hat_dot_y = 0.0;  // [rad/s^2]
  double w = 0.0, w_dot = 0.0;                          // vertical velocity [m/s], [m/s^2]
  double s_dot = 0.0, s_ddot = 0.0;
  double chi_dot = 0.0, n_dot = 0.0, v_dot = 0.0;
};

namespace detail {

template <typename T>
struct StateT {
  T V, n, chi, ax, ay;
};

template <typename T>
struct RatesT {
  T wx, wy, wz;    // velocity-frame angular rate
  T wdx, wdy;      // its x/y time derivatives
  T w, w_dot;      // vertical velocity of the frame origin
  T s_dot, s_ddot;
  T chi_dot, n_dot, v_dot;
};

template <typename T>
inline T s_dot_kernel(const StateT<T>& x, const TrackFrame& f) {
  return x.V * cos(x.chi) / (1.0 - x.n * f.omega[2]);
}

// All frame rates by the chain rule along the trajectory. The road-frame
// angular rates enter via Omega(s) and dOmega/ds stored on the track grid.
template <typename T>
inline RatesT<T> rates_kernel(const StateT<T>& x, const TrackFrame& f, const TermMask& m) {
  const double Ox = f.omega[0], Oy = f.omega[1], Oz = f.omega[2];
  const double dOx = f.domega_ds[0], dOz = f.domega_ds[2];
  const double dOy = f.domega_ds[1];
  RatesT<T> r;
  const T c = cos(x.chi);
  const T s = sin(x.chi);
  const T denom = 1.0 - x.n * Oz;
  r.s_dot = x.V * c / denom;
  r.wx = (Ox * c + Oy * s) * r.s_dot;
  r.wy = (Oy * c - Ox * s) * r.s_dot;
  r.w = x.n * Ox * r.s_dot;
  const T chi_coup = m.neglect_w_omega ? T(0.0) : r.w * r.wx;
  r.chi_dot = (x.ay + chi_coup) / x.V - Oz * r.s_dot;
  r.wz = Oz * r.s_dot + r.chi_dot;
  r.n_dot = x.V * s;
  const T v_coup = m.neglect_w_omega ? T(0.0) : r.w * r.wy;
  r.v_dot = x.ax - v_coup;
  r.s_ddot = (r.v_dot * c - x.V * s * r.chi_dot) / denom +
             x.V * c * (r.n_dot * Oz + x.n * dOz * r.s_dot) / (denom * denom);
  r.wdx = (dOx * c + dOy * s) * r.s_dot * r.s_dot +
          (Oy * c - Ox * s) * r.chi_dot * r.s_dot + (Ox * c + Oy * s) * r.s_ddot;
  r.wdy = (dOy * c - dOx * s) * r.s_dot * r.s_dot -
          (Oy * s + Ox * c) * r.chi_dot * r.s_dot + (Oy * c - Ox * s) * r.s_ddot;
  r.w_dot = r.n_dot * Ox * r.s_dot + x.n * (dOx * r.s_dot * r.s_dot + Ox * r.s_ddot);
  return r;
}

template <typename T>
inline StateT<T> dynamics_time_kernel(const StateT<T>& x, const T& jx, const T& jy,
                                      const TrackFrame& f, const TermMask& m) {
  const RatesT<T> r = rates_kernel(x, f, m);
  StateT<T> d;
  d.V = r.v_dot;
  d.n = r.n_dot;
  d.chi = r.chi_dot;
  d.ax = jx;
  d.ay = jy;
  return d;
}

template <typename T>
inline StateT<T> dynamics_spatial_kernel(const StateT<T>& x, const T& jx, const T& jy,
                                         const TrackFrame& f, const TermMask& m) {
  const RatesT<T> r = rates_kernel(x, f, m);
  const T inv = 1.0 / r.s_dot;
  StateT<T> d;
  d.V = r.v_dot * inv;
  d.n = r.n_dot * inv;
  d.chi = r.chi_dot * inv;
  d.ax = jx * inv;
  d.ay = jy * inv;
  return d;
}

// Apparent accelerations at the CoM (height h above the road).
template <typename T>
inline void apparent_kernel(const StateT<T>& x, const TrackFrame& f, const TermMask& m, double h,
                            T* ax_t, T* ay_t, T* g_t) {
  const RatesT<T> r = rates_kernel(x, f, m);
  const double cm = std::cos(f.mu), sm = std::sin(f.mu);
  const double cp = std::cos(f.phi), sp = std::sin(f.phi);
  const T c = cos(x.chi);
  const T s = sin(x.chi);
  const T dot_h_x = m.neglect_omega_dot_h ? T(0.0) : r.wdy * h;
  const T dot_h_y = m.neglect_omega_dot_h ? T(0.0) : r.wdx * h;
  const T cross_x = m.neglect_omega_cross_h ? T(0.0) : r.wx * r.wz * h;
  const T cross_y = m.neglect_omega_cross_h ? T(0.0) : r.wy * r.wz * h;
  const T wyv = m.neglect_omega_y_v ? T(0.0) : r.wy * x.V;
  const T wdot = m.neglect_w_dot ? T(0.0) : r.w_dot;
  *ax_t = x.ax + dot_h_x - cross_x + kGravity * (cm * sp * s - sm * c);
  *ay_t = x.ay + dot_h_y + cross_y + kGravity * (sm * s + cm * sp * c);
  *g_t = wdot - wyv + (r.wx * r.wx - r.wy * r.wy) * h + kGravity * (cm * cp);
}

template <typename T>
inline StateT<T> make_state(const T* z) {
  return StateT<T>{z[0], z[1], z[2], z[3], z[4]};
}

inline StateT<double> make_state(const PointState& x) {
  return StateT<double>{x.V, x.n, x.chi_hat, x.ax_hat, x.ay_hat};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Double-valued interface

inline double s_dot(const PointState& x, const TrackFrame& f) {
  const double denom = 1.0 - x.n * f.omega[2];
  if (denom <= 0.0)
    throw std::domain_error("degenerate parameterization: 1 - n*Omega_z <= 0");
  return x.V * std::cos(x.chi_hat) / denom;
}

inline FrameRates frame_rates(const PointState& x, const TrackFrame& f,
                              const TermMask& m = TermMask::none()) {
  if (1.0 - x.n * f.omega[2] <= 0.0)
    throw std::domain_error("degenerate parameterization: 1 - n*Omega_z <= 0");
  const auto r = detail::rates_kernel(detail::make_state(x), f, m);
  FrameRates out;
  out.omega_hat = {r.wx, r.wy, r.wz};
  out.omega_hat_dot_x = r.wdx;
  out.omega_hat_dot_y = r.wdy;
  out.w = r.w;
  out.w_dot = r.w_dot;
  out.s_dot = r.s_dot;
  out.s_ddot = r.s_ddot;
  out.chi_dot = r.chi_dot;
  out.n_dot = r.n_dot;
  out.v_dot = r.v_dot;
  return out;
}

inline std::array<double, 5> dynamics_time(const PointState& x, const PointInput& u,
                                           const TrackFrame& f,
                                           const TermMask& m = TermMask::none()) {
  if (x.V < kVelocityFloor)
    throw std::domain_error("speed below the velocity floor");
  const auto d = detail::dynamics_time_kernel(detail::make_state(x), u.jx_hat, u.jy_hat, f, m);
  return {d.V, d.n, d.chi, d.ax, d.ay};
}

inline std::array<double, 5> dynamics_spatial(const PointState& x, const PointInput& u,
                                              const TrackFrame& f,
                                              const TermMask& m = TermMask::none()) {
  if (x.V < kVelocityFloor)
    throw std::domain_error("speed below the velocity floor");
  if (s_dot(x, f) <= 1e-9 * x.V)
    throw std::domain_error("vanishing progress rate along the reference line");
  const auto d = detail::dynamics_spatial_kernel(detail::make_state(x), u.jx_hat, u.jy_hat, f, m);
  return {d.V, d.n, d.chi, d.ax, d.ay};
}

struct ApparentAccel {
  double ax_tilde = 0.0, ay_tilde = 0.0, g_tilde = 0.0;
};

// Evaluates the CoM-level accelerations from externally supplied rates,
// which keeps it usable as one side of the kinematic identity check.
inline ApparentAccel apparent_accelerations(const PointState& x, const TrackFrame& f,
                                            const FrameRates& r, const TermMask& m, double h) {
  const double cm = std::cos(f.mu), sm = std::sin(f.mu);
  const double cp = std::cos(f.phi), sp = std::sin(f.phi);
  const double c = std::cos(x.chi_hat), s = std::sin(x.chi_hat);
  const double wx = r.omega_hat[0], wy = r.omega_hat[1], wz = r.omega_hat[2];
  ApparentAccel a;
  a.ax_tilde = x.ax_hat + (m.neglect_omega_dot_h ? 0.0 : r.omega_hat_dot_y * h) -
               (m.neglect_omega_cross_h ? 0.0 : wx * wz * h) +
               kGravity * (cm * sp * s - sm * c);
  a.ay_tilde = x.ay_hat + (m.neglect_omega_dot_h ? 0.0 : r.omega_hat_dot_x * h) +
               (m.neglect_omega_cross_h ? 0.0 : wy * wz * h) +
               kGravity * (sm * s + cm * sp * c);
  a.g_tilde = (m.neglect_w_dot ? 0.0 : r.w_dot) - (m.neglect_omega_y_v ? 0.0 : wy * x.V) +
              (wx * wx - wy * wy) * h + kGravity * (cm * cp);
  return a;
}

inline ApparentAccel apparent_accelerations(const PointState& x, const TrackFrame& f,
                                            const TermMask& m, double h) {
  return apparent_accelerations(x, f, frame_rates(x, f, m), m, h);
}

struct ComKinematics {
  Eigen::Vector3d v_com, a_com, g_vec;
};

// Velocity, acceleration, and gravity of the CoM in the velocity frame.
// The sum a_com + g_vec reproduces the full apparent accelerations; this is
// kept as an independent formulation for consistency checks.
inline ComKinematics com_kinematics(const PointState& x, const FrameRates& r, const TrackFrame& f,
                                    double h) {
  const double wx = r.omega_hat[0], wy = r.omega_hat[1], wz = r.omega_hat[2];
  ComKinematics k;
  k.v_com = {x.V + wy * h, wx * h, r.w};
  k.a_com = {r.v_dot + r.omega_hat_dot_y * h + wy * r.w - wx * wz * h,
             r.omega_hat_dot_x * h + wz * x.V + wz * wy * h - wx * r.w,
             r.w_dot + wx * wx * h - wy * x.V - wy * wy * h};
  const double cm = std::cos(f.mu), sm = std::sin(f.mu);
  const double cp = std::cos(f.phi), sp = std::sin(f.phi);
  const double c = std::cos(x.chi_hat), s = std::sin(x.chi_hat);
  k.g_vec = kGravity * Eigen::Vector3d(-sm * c + cm * sp * s, sm * s + cm * sp * c, cm * cp);
  return k;
}

struct DynamicsJacobians {
  Eigen::Matrix<double, 5, 5> dxprime_dx;   // spatial dynamics wrt state
  Eigen::Matrix<double, 5, 2> dxprime_du;   // spatial dynamics wrt input
  Eigen::Matrix<double, 3, 5> dapparent_dx; // (ax~, ay~, g~) wrt state
};

inline DynamicsJacobians jacobians(const PointState& x, const PointInput& u, const TrackFrame& f,
                                   const TermMask& m = TermMask::none(), double h_com = 0.0) {
  using D7 = Dual<7>;
  detail::StateT<D7> xs;
  xs.V = D7(x.V, 0);
  xs.n = D7(x.n, 1);
  xs.chi = D7(x.chi_hat, 2);
  xs.ax = D7(x.ax_hat, 3);
  xs.ay = D7(x.ay_hat, 4);
  const D7 jx(u.jx_hat, 5), jy(u.jy_hat, 6);
  const auto d = detail::dynamics_spatial_kernel(xs, jx, jy, f, m);
  DynamicsJacobians out;
  const D7* rows[5] = {&d.V, &d.n, &d.chi, &d.ax, &d.ay};
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) out.dxprime_dx(r, c) = rows[r]->d[c];
    out.dxprime_du(r, 0) = rows[r]->d[5];
    out.dxprime_du(r, 1) = rows[r]->d[6];
  }
  D7 axt, ayt, gt;
  detail::apparent_kernel(xs, f, m, h_com, &axt, &ayt, &gt);
  const D7* arow[3] = {&axt, &ayt, &gt};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) out.dapparent_dx(r, c) = arow[r]->d[c];
  return out;
}

}  // namespace raceline

#endif  // RACELINE_DYNAMICS_HPP_
