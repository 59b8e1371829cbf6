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

#ifndef RACELINE_GGDIAGRAM_HPP_
#define RACELINE_GGDIAGRAM_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "raceline/autodiff.hpp"
#include "raceline/csv.hpp"
#include "raceline/dynamics.hpp"
#include "raceline/nlp.hpp"
#include "raceline/vehicle.hpp"

namespace raceline {

inline constexpr double kAirDensity = 1.225;  // [kg/m^3]

// One solved stationary double-track state on an envelope ray.
struct QssPoint {
  double V = 0.0, g_tilde = kGravity;
  double alpha = 0.0;                 // requested ray, vehicle frame [rad]
  double rho = 0.0;                   // achieved combined acceleration [m/s^2]
  double ax_tilde = 0.0, ay_tilde = 0.0;  // achieved, vehicle frame
  double beta = 0.0;                  // slip angle [rad]
  double chi = 0.0;                   // vehicle orientation relative to the velocity frame
  double delta = 0.0;                 // steering [rad]
  double kappa_f = 0.0, kappa_r = 0.0;
  double Fz[4] = {0, 0, 0, 0};        // fl, fr, rl, rr [N]
  bool converged = false;
  bool infeasible_ray = false;  // ray has no stationary solution (radius 0)
};

// Four-parameter envelope underapproximation.
struct GGDiamond {
  double ax_min = 0.0;  // <= 0
  double ax_max = 0.0;  // > 0
  double ay_max = 0.0;  // >= 0
  double p = 1.0;       // in [1, 2]
};

namespace detail {

// Simplified Magic Formula value for combined theoretical slip sigma >= 0.
template <typename T>
inline T magic_formula(const T& sigma, const T& b, double c, const T& d, double e) {
  const T bs = b * sigma;
  return d * sin(c * atan(bs - e * (bs - atan(bs))));
}

// Stationary double-track model. Unknowns z = (rho, beta, delta, kappa_f,
// kappa_r). Returns the force/moment balance residuals (3), inequality
// values (power and four wheel loads, <= 0 feasible), and wheel loads.
template <typename T>
struct QssModelOut {
  T eq[3];
  T ineq[5];
  T fz[4];
};

template <typename T>
inline QssModelOut<T> qss_model(const VehicleParams& vp, double V, double g_tilde, double alpha,
                                const T* z) {
  const T rho = z[0], beta = z[1], delta = z[2];
  const T kappa[2] = {z[3], z[4]};
  const T ax = rho * std::cos(alpha);
  const T ay = rho * std::sin(alpha);

  const double q = 0.5 * kAirDensity * V * V;
  const double f_drag = q * vp.C_DA;
  const double down_f = q * vp.C_LfA;
  const double down_r = q * vp.C_LrA;
  const double wheelbase = vp.a + vp.b;

  // Axle loads: static share of the apparent weight, downforce, and
  // longitudinal transfer.
  const T fz_front = vp.m * g_tilde * vp.b / wheelbase + down_f - vp.m * ax * vp.h / wheelbase;
  const T fz_rear = vp.m * g_tilde * vp.a / wheelbase + down_r + vp.m * ax * vp.h / wheelbase;
  // Lateral transfer split by axle load share.
  const T total = fz_front + fz_rear;
  const T dlat = vp.m * ay * vp.h / vp.track_width;
  const T dlat_f = dlat * fz_front / total;
  const T dlat_r = dlat * fz_rear / total;
  QssModelOut<T> out;
  out.fz[0] = 0.5 * fz_front - dlat_f;  // fl
  out.fz[1] = 0.5 * fz_front + dlat_f;  // fr
  out.fz[2] = 0.5 * fz_rear - dlat_r;   // rl
  out.fz[3] = 0.5 * fz_rear + dlat_r;   // rr

  // Yaw rate of stationary circular driving from the velocity-frame lateral
  // acceleration.
  const T ay_vel = rho * sin(T(alpha) - beta);
  const T omega = ay_vel / V;
  const double xw[4] = {vp.a, vp.a, -vp.b, -vp.b};
  const double yw[4] = {0.5 * vp.track_width, -0.5 * vp.track_width, 0.5 * vp.track_width,
                        -0.5 * vp.track_width};

  T sum_fx(0.0), sum_fy(0.0), sum_mz(0.0), rear_fx(0.0);
  const T cb = cos(beta), sb = sin(beta);
  for (int w = 0; w < 4; ++w) {
    const bool front = w < 2;
    const T fz = max(out.fz[w], T(1.0));  // force model guard; feasibility handled below
    const T vx = V * cb - omega * yw[w];
    const T vy = V * sb + omega * xw[w];
    const T slip_angle = atan2(vy, vx) - (front ? delta : T(0.0));
    const T sy = tan(slip_angle);
    const T kap = kappa[front ? 0 : 1];
    const T sigma = sqrt(kap * kap + sy * sy + 1e-10);

    const T dfz = (fz - vp.Fz0_nominal) / vp.Fz0_nominal;
    const T dx = (vp.pDx1 + vp.pDx2 * dfz) * vp.lambda_mux * fz;
    const T kx = fz * vp.pKx1 * exp(vp.pKx3 * dfz);
    const T bx = kx / (vp.pCx1 * dx);
    const T dy = (vp.pDy1 + vp.pDy2 * dfz) * vp.lambda_muy * fz;
    const T ky = -vp.pKy1 * vp.Fz0_nominal *
                 sin(2.0 * atan(fz / (vp.pKy2 * vp.Fz0_nominal)));
    const T by = ky / (vp.pCy1 * dy);

    const T fx_w = (kap / sigma) * magic_formula(sigma, bx, vp.pCx1, dx, vp.pEx1);
    const T fy_w = (-sy / sigma) * magic_formula(sigma, by, vp.pCy1, dy, vp.pEy1);

    T fx_v, fy_v;
    if (front) {
      const T cd = cos(delta), sd = sin(delta);
      fx_v = fx_w * cd - fy_w * sd;
      fy_v = fx_w * sd + fy_w * cd;
    } else {
      fx_v = fx_w;
      fy_v = fy_w;
      rear_fx += fx_w;
    }
    sum_fx += fx_v;
    sum_fy += fy_v;
    sum_mz += xw[w] * fy_v - yw[w] * fx_v;
  }

  const double scale_f = 1.0 / (vp.m * kGravity);
  out.eq[0] = (vp.m * ax - (sum_fx - f_drag * cb)) * scale_f;
  out.eq[1] = (vp.m * ay - (sum_fy - f_drag * sb)) * scale_f;
  out.eq[2] = sum_mz * scale_f / wheelbase;
  out.ineq[0] = (rear_fx * V - vp.P_max) / vp.P_max;  // drive power cap
  for (int w = 0; w < 4; ++w) out.ineq[1 + w] = -out.fz[w] * scale_f;  // no wheel lift
  return out;
}

class QssNlp : public NlpProblem {
 public:
  QssNlp(const VehicleParams& vp, double V, double g_tilde, double alpha,
         const Eigen::VectorXd& start)
      : vp_(vp), V_(V), g_(g_tilde), alpha_(alpha), start_(start) {}

  int num_vars() const override { return 5; }
  int num_eq() const override { return 3; }
  int num_ineq() const override { return 5; }
  void initial_point(Eigen::VectorXd* x) const override { *x = start_; }
  void bounds(Eigen::VectorXd* lo, Eigen::VectorXd* hi) const override {
    // Slip bounds bracket the force peak; past-peak states are not useful
    // envelope points and trap the iteration.
    lo->resize(5);
    hi->resize(5);
    (*lo) << 0.0, -0.35, -vp_.delta_max, -0.12, -0.12;
    (*hi) << 120.0, 0.35, vp_.delta_max, 0.0, 0.12;  // front axle cannot drive
  }
  double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const override {
    if (grad) {
      grad->setZero();
      (*grad)(0) = -0.1;
    }
    return -0.1 * x[0];
  }
  void eq_constraints(const Eigen::VectorXd& x, Eigen::VectorXd* c,
                      std::vector<JacRow>* jac) const override {
    if (c && !jac) {
      const auto out = qss_model(vp_, V_, g_, alpha_, x.data());
      c->resize(3);
      for (int r = 0; r < 3; ++r) (*c)[r] = out.eq[r];
      return;
    }
    if (!c && !jac) return;
    using D5 = Dual<5>;
    D5 z[5];
    for (int i = 0; i < 5; ++i) z[i] = D5(x[i], i);
    const auto out = qss_model(vp_, V_, g_, alpha_, z);
    if (c) {
      c->resize(3);
      for (int r = 0; r < 3; ++r) (*c)[r] = out.eq[r].v;
    }
    if (jac) {
      jac->assign(3, JacRow{0, std::vector<double>(5, 0.0), -1, 0.0});
      for (int r = 0; r < 3; ++r)
        for (int i = 0; i < 5; ++i) (*jac)[r].a[i] = out.eq[r].d[i];
    }
  }
  void ineq_constraints(const Eigen::VectorXd& x, Eigen::VectorXd* c,
                        std::vector<JacRow>* jac) const override {
    if (c && !jac) {
      const auto out = qss_model(vp_, V_, g_, alpha_, x.data());
      c->resize(5);
      for (int r = 0; r < 5; ++r) (*c)[r] = out.ineq[r];
      return;
    }
    if (!c && !jac) return;
    using D5 = Dual<5>;
    D5 z[5];
    for (int i = 0; i < 5; ++i) z[i] = D5(x[i], i);
    const auto out = qss_model(vp_, V_, g_, alpha_, z);
    if (c) {
      c->resize(5);
      for (int r = 0; r < 5; ++r) (*c)[r] = out.ineq[r].v;
    }
    if (jac) {
      jac->assign(5, JacRow{0, std::vector<double>(5, 0.0), -1, 0.0});
      for (int r = 0; r < 5; ++r)
        for (int i = 0; i < 5; ++i) (*jac)[r].a[i] = out.ineq[r].d[i];
    }
  }

  // Lagrangian Hessian by central differences of the exact dual gradient.
  bool lagrangian_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& y_eq,
                          const Eigen::VectorXd& z_ineq,
                          std::vector<HessBlock>* blocks) const override {
    auto grad_lag = [&](const Eigen::VectorXd& xx) {
      using D5 = Dual<5>;
      D5 z[5];
      for (int i = 0; i < 5; ++i) z[i] = D5(xx[i], i);
      const auto out = qss_model(vp_, V_, g_, alpha_, z);
      Eigen::Matrix<double, 5, 1> g = Eigen::Matrix<double, 5, 1>::Zero();
      g[0] = -0.1;  // objective gradient
      for (int r = 0; r < 3; ++r)
        for (int i = 0; i < 5; ++i) g[i] += y_eq[r] * out.eq[r].d[i];
      for (int r = 0; r < 5 && r < z_ineq.size(); ++r)
        for (int i = 0; i < 5; ++i) g[i] += z_ineq[r] * out.ineq[r].d[i];
      return g;
    };
    Eigen::MatrixXd h(5, 5);
    for (int i = 0; i < 5; ++i) {
      const double step = 1e-5 * (1.0 + std::abs(x[i]));
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      h.col(i) = (grad_lag(xp) - grad_lag(xm)) / (2.0 * step);
    }
    blocks->push_back({0, 0.5 * (h + h.transpose())});
    return true;
  }

 private:
  const VehicleParams& vp_;
  double V_, g_, alpha_;
  Eigen::VectorXd start_;
};

inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

}  // namespace detail

// Maximizes the combined acceleration along the ray `alpha` (vehicle frame)
// for a stationary double-track state at speed V and apparent vertical
// acceleration g_tilde.
inline QssPoint solve_qss_point(const VehicleParams& vp, double V, double g_tilde, double alpha,
                                const QssPoint* warm = nullptr) {
  if (!(V > 0.0) || !(g_tilde > 0.0))
    throw std::runtime_error("V and g_tilde must be positive");
  QssPoint out;
  out.V = V;
  out.g_tilde = g_tilde;
  out.alpha = alpha;

  const double mu_guess = vp.pDx1 * vp.lambda_mux;
  const double drag_acc = 0.5 * kAirDensity * V * V * vp.C_DA / vp.m;
  const double power_acc = vp.P_max / (vp.m * V) - drag_acc;
  const double steer_cap = std::tan(vp.delta_max) / (vp.a + vp.b) * V * V;
  auto rho_seed = [&](double dir) {
    double r = 0.8 * mu_guess * g_tilde;
    const double cd = std::cos(dir);
    const double sd = std::abs(std::sin(dir));
    if (cd > 0.1) r = std::min(r, std::max(0.2, power_acc) / cd);
    if (sd > 0.1) r = std::min(r, 0.9 * steer_cap / sd);  // kinematic steering limit
    return std::max(r, 0.1);
  };
  Eigen::VectorXd start(5);
  if (warm && warm->converged) {
    start << warm->rho, warm->beta, warm->delta, warm->kappa_f, warm->kappa_r;
  } else {
    const double ca = std::cos(alpha);
    start << rho_seed(alpha), 0.0, 0.2 * std::sin(alpha), std::min(0.0, 0.03 * ca), 0.03 * ca;
  }

  SqpSettings st;
  st.max_iter = 120;
  st.kkt_tol = 1e-7;
  st.constraint_tol = 1e-9;
  st.hessian_floor = 1e-4;
  SqpSolver solver(st);
  const detail::QssNlp problem(vp, V, g_tilde, alpha, start);
  SqpResult r = solver.solve(problem);
  if (r.status != SolveStatus::kSuccess) {
    // Deterministic restarts from perturbed seeds.
    for (int attempt = 0; attempt < 3 && r.status != SolveStatus::kSuccess; ++attempt) {
      Eigen::VectorXd s2 = start;
      s2[0] = (0.35 + 0.3 * attempt) * rho_seed(alpha);
      s2[1] = 0.0;
      s2[2] = 0.1 * std::sin(alpha) * (attempt + 1);
      s2[3] = std::min(0.0, 0.02 * std::cos(alpha) * (attempt + 1));
      s2[4] = 0.02 * std::cos(alpha) * (attempt + 1);
      r = solver.solve(problem, &s2);
    }
  }
  out.rho = std::max(0.0, r.x[0]);
  out.beta = r.x[1];
  out.delta = r.x[2];
  out.kappa_f = r.x[3];
  out.kappa_r = r.x[4];
  out.ax_tilde = out.rho * std::cos(alpha);
  out.ay_tilde = out.rho * std::sin(alpha);
  out.chi = -out.beta;
  const auto model = detail::qss_model(vp, V, g_tilde, alpha, r.x.data());
  for (int w = 0; w < 4; ++w) out.Fz[w] = model.fz[w];
  out.converged = r.status == SolveStatus::kSuccess && out.rho > 1e-6;
  if (!out.converged && power_acc <= 0.02 && std::cos(alpha) > -0.15) {
    // Above the drag-limited top speed the forward sector of the envelope
    // has no stationary solution: holding the speed already exceeds the
    // drive power. Report a zero radius instead of a solver failure.
    out.rho = 0.0;
    out.ax_tilde = out.ay_tilde = 0.0;
    out.beta = out.delta = out.kappa_f = out.kappa_r = 0.0;
    out.infeasible_ray = true;
    out.converged = true;
  }
  return out;
}

// Tabulated envelopes over (V, g_tilde): polar radii on a uniform angle grid
// in the velocity frame plus fitted diamonds.
struct GGGrid {
  std::vector<double> v_axis;  // ascending, uniform
  std::vector<double> g_axis;  // ascending, uniform
  int n_alpha = 64;
  std::vector<double> polar;       // [iv][ig][ia], radius [m/s^2]
  std::vector<GGDiamond> diamonds; // [iv][ig]
  std::vector<uint8_t> filled_by_neighbor;  // [iv][ig]
  std::string hash;

  int nv() const { return static_cast<int>(v_axis.size()); }
  int ng() const { return static_cast<int>(g_axis.size()); }
  double alpha_at(int ia) const { return -kPi + 2.0 * kPi * ia / n_alpha; }
  double rho_at(int iv, int ig, int ia) const {
    return polar[(static_cast<size_t>(iv) * ng() + ig) * n_alpha + ((ia % n_alpha + n_alpha) % n_alpha)];
  }
  double& rho_ref(int iv, int ig, int ia) {
    return polar[(static_cast<size_t>(iv) * ng() + ig) * n_alpha + ia];
  }
  const GGDiamond& diamond_at(int iv, int ig) const { return diamonds[iv * ng() + ig]; }

  // Polar radius with linear interpolation in angle at a grid node.
  double rho_interp_alpha(int iv, int ig, double alpha) const {
    const double u = (alpha + kPi) * n_alpha / (2.0 * kPi);
    const int i0 = static_cast<int>(std::floor(u));
    const double f = u - i0;
    return (1.0 - f) * rho_at(iv, ig, i0) + f * rho_at(iv, ig, i0 + 1);
  }
};

namespace detail {

struct Cell {
  int i0, i1;
  double f;
  bool clamped;
};

inline Cell locate(const std::vector<double>& axis, double v) {
  Cell c{0, 0, 0.0, false};
  const int n = static_cast<int>(axis.size());
  if (n == 1) {
    c.clamped = std::abs(v - axis[0]) > 1e-9;
    return c;
  }
  if (v <= axis.front()) {
    c.clamped = v < axis.front() - 1e-12;
    return {0, 1, 0.0, c.clamped};
  }
  if (v >= axis.back()) {
    return {n - 2, n - 1, 1.0, v > axis.back() + 1e-12};
  }
  int lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    (axis[mid] <= v ? lo : hi) = mid;
  }
  return {lo, hi, (v - axis[lo]) / (axis[hi] - axis[lo]), false};
}

}  // namespace detail

// Bilinear interpolation of the diamond parameters over (V, g_tilde).
// Values outside the grid hull are clamped and flagged.
struct DiamondInterp {
  GGDiamond d;
  bool clamped = false;
};

inline DiamondInterp interp_diamond(const GGGrid& grid, double V, double g_tilde) {
  const detail::Cell cv = detail::locate(grid.v_axis, V);
  const detail::Cell cg = detail::locate(grid.g_axis, g_tilde);
  DiamondInterp out;
  out.clamped = cv.clamped || cg.clamped;
  auto blend = [&](double w00, double w01, double w10, double w11) {
    return (1.0 - cv.f) * ((1.0 - cg.f) * w00 + cg.f * w01) + cv.f * ((1.0 - cg.f) * w10 + cg.f * w11);
  };
  const GGDiamond& d00 = grid.diamond_at(cv.i0, cg.i0);
  const GGDiamond& d01 = grid.diamond_at(cv.i0, cg.i1);
  const GGDiamond& d10 = grid.diamond_at(cv.i1, cg.i0);
  const GGDiamond& d11 = grid.diamond_at(cv.i1, cg.i1);
  out.d.ax_min = blend(d00.ax_min, d01.ax_min, d10.ax_min, d11.ax_min);
  out.d.ax_max = blend(d00.ax_max, d01.ax_max, d10.ax_max, d11.ax_max);
  out.d.ay_max = blend(d00.ay_max, d01.ay_max, d10.ay_max, d11.ay_max);
  out.d.p = blend(d00.p, d01.p, d10.p, d11.p);
  return out;
}

inline double interp_polar_rho(const GGGrid& grid, double V, double g_tilde, double alpha,
                               bool* clamped = nullptr) {
  const detail::Cell cv = detail::locate(grid.v_axis, V);
  const detail::Cell cg = detail::locate(grid.g_axis, g_tilde);
  if (clamped) *clamped = cv.clamped || cg.clamped;
  auto at = [&](int iv, int ig) { return grid.rho_interp_alpha(iv, ig, alpha); };
  return (1.0 - cv.f) * ((1.0 - cg.f) * at(cv.i0, cg.i0) + cg.f * at(cv.i0, cg.i1)) +
         cv.f * ((1.0 - cg.f) * at(cv.i1, cg.i0) + cg.f * at(cv.i1, cg.i1));
}

struct GGResiduals {
  double r_a = 0.0;  // ax_max - ax
  double r_b = 0.0;  // ay_max - |ay|
  double r_c = 0.0;  // |ax_min| [1 - (|ay|/ay_max)^p]^(1/p) - |ax|
  bool clamped = false;
};

// Exact acceleration-constraint residuals; feasible iff all >= 0.
inline GGResiduals eval_constraints(const GGGrid& grid, double V, double g_tilde, double ax_tilde,
                                    double ay_tilde) {
  const DiamondInterp di = interp_diamond(grid, V, g_tilde);
  const GGDiamond& d = di.d;
  GGResiduals r;
  r.clamped = di.clamped;
  r.r_a = d.ax_max - ax_tilde;
  if (d.ay_max <= 1e-12) {
    r.r_b = -std::abs(ay_tilde);
    r.r_c = std::abs(d.ax_min) - std::abs(ax_tilde);
    return r;
  }
  r.r_b = d.ay_max - std::abs(ay_tilde);
  const double t = std::min(std::abs(ay_tilde) / d.ay_max, 1.0);
  r.r_c = std::abs(d.ax_min) * std::pow(1.0 - std::pow(t, d.p), 1.0 / d.p) - std::abs(ax_tilde);
  return r;
}

inline double eval_polar_constraint(const GGGrid& grid, double V, double g_tilde, double ax_tilde,
                                    double ay_tilde, bool* clamped = nullptr) {
  const double alpha = std::atan2(ay_tilde, ax_tilde);
  const double rho = interp_polar_rho(grid, V, g_tilde, alpha, clamped);
  return rho - std::hypot(ax_tilde, ay_tilde);
}

// Radius of the diamond region boundary along a ray (angle from +ax axis).
inline double diamond_boundary_radius(const GGDiamond& d, double psi) {
  const double c = std::cos(psi), s = std::sin(psi);
  const double A = std::abs(d.ax_min), B = d.ay_max;
  if (A <= 1e-12 || B <= 1e-12) return 0.0;
  const double rb = std::pow(std::pow(std::abs(c) / A, d.p) + std::pow(std::abs(s) / B, d.p),
                             -1.0 / d.p);
  if (c > 1e-12 && rb * c > d.ax_max) return d.ax_max / c;
  return rb;
}

// ---------------------------------------------------------------------------
// Diamond fitting

namespace detail {

template <typename T>
inline T rho_slice_interp(const std::vector<double>& rho, const T& alpha) {
  const int n = static_cast<int>(rho.size());
  T u = (alpha + kPi) * (n / (2.0 * kPi));
  const int i0 = static_cast<int>(std::floor(value_of(u)));
  const T f = u - static_cast<double>(i0);
  const int a = (i0 % n + n) % n;
  const int b = (a + 1) % n;
  return (1.0 - f) * rho[a] + f * rho[b];
}

// Area of the p-ball with semiaxes (A, B) truncated at x = axmax, computed
// from the Gamma-function ball area minus the cap by quadrature.
template <typename T>
inline T diamond_area(const T& A, const T& B, const T& axmax, const T& p) {
  const double pv = value_of(p);
  const double dg = 1e-6;
  auto gamma_factor = [](double pp) {
    return std::tgamma(1.0 + 1.0 / pp) * std::tgamma(1.0 + 1.0 / pp) /
           std::tgamma(1.0 + 2.0 / pp);
  };
  const double g0 = gamma_factor(pv);
  const double g1 = (gamma_factor(pv + dg) - gamma_factor(pv - dg)) / (2.0 * dg);
  T gfac;
  if constexpr (std::is_same_v<T, double>) {
    gfac = g0;
  } else {
    gfac = chain(g0, g1, p);
  }
  T area = 4.0 * A * B * gfac;
  // Cap beyond x > axmax, by composite Simpson (templated, smooth).
  const T u0 = min(max(axmax / A, T(0.0)), T(1.0));
  if (value_of(u0) < 1.0 - 1e-12) {
    const int m = 16;
    const T hh = (1.0 - u0) / m;
    T acc(0.0);
    for (int k = 0; k <= m; ++k) {
      const T u = u0 + hh * static_cast<double>(k);
      const T val = pow(max(1.0 - pow(max(u, T(1e-14)), p), T(0.0)) + 1e-14, 1.0 / p);
      const double wgt = (k == 0 || k == m) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
      acc += wgt * val;
    }
    area -= 2.0 * A * B * (acc * hh / 3.0);
  }
  return area;
}

class DiamondFitNlp : public NlpProblem {
 public:
  DiamondFitNlp(const std::vector<double>& rho, const Eigen::VectorXd& start,
                std::vector<double> ball_rays, std::vector<double> cut_rays)
      : rho_(rho), start_(start), ball_rays_(std::move(ball_rays)),
        cut_rays_(std::move(cut_rays)),
        scale_(1.0 / std::max(1.0, *std::max_element(rho.begin(), rho.end()))) {}

  int num_vars() const override { return 4; }
  int num_ineq() const override {
    return static_cast<int>(ball_rays_.size() + cut_rays_.size());
  }
  void initial_point(Eigen::VectorXd* x) const override { *x = start_; }
  void bounds(Eigen::VectorXd* lo, Eigen::VectorXd* hi) const override {
    const double top = 3.0 / scale_;
    lo->resize(4);
    hi->resize(4);
    (*lo) << 0.01, 0.01, 0.01, 1.0;
    (*hi) << top, top, top, 2.0;
  }
  double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const override {
    const double s2 = scale_ * scale_;
    if (!grad) return -s2 * diamond_area(x[0], x[1], x[2], x[3]);
    using D4 = Dual<4>;
    D4 z[4];
    for (int i = 0; i < 4; ++i) z[i] = D4(x[i], i);
    const D4 a = diamond_area(z[0], z[1], z[2], z[3]);
    for (int i = 0; i < 4; ++i) (*grad)(i) = -s2 * a.d[i];
    return -s2 * a.v;
  }
  void ineq_constraints(const Eigen::VectorXd& x, Eigen::VectorXd* c,
                        std::vector<JacRow>* jac) const override {
    using D4 = Dual<4>;
    D4 z[4];
    for (int i = 0; i < 4; ++i) z[i] = D4(x[i], i);
    const D4 A = z[0], B = z[1], axmax = z[2], p = z[3];
    std::vector<D4> vals;
    vals.reserve(num_ineq());
    for (double psi : ball_rays_) {
      const double cc = std::abs(std::cos(psi)) + 1e-12;
      const double ss = std::abs(std::sin(psi)) + 1e-12;
      const D4 rb = pow(pow(cc / A, p) + pow(ss / B, p), -1.0 / p);
      vals.push_back((rb - rho_slice_interp(rho_, D4(psi))) * scale_);
    }
    // Cut-governed rays: the vertical segment point on the ray is at
    // axmax / cos(psi), so membership is linear in axmax.
    for (double psi : cut_rays_) {
      const double lim = value_of(rho_slice_interp(rho_, D4(psi))) * std::cos(psi);
      vals.push_back((axmax - lim) * scale_);
    }
    if (c) {
      c->resize(vals.size());
      for (size_t r = 0; r < vals.size(); ++r) (*c)[r] = vals[r].v;
    }
    if (jac) {
      jac->assign(vals.size(), JacRow{0, std::vector<double>(4, 0.0), -1, 0.0});
      for (size_t r = 0; r < vals.size(); ++r)
        for (int i = 0; i < 4; ++i) (*jac)[r].a[i] = vals[r].d[i];
    }
  }

  bool lagrangian_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd&,
                          const Eigen::VectorXd& z_ineq,
                          std::vector<HessBlock>* blocks) const override {
    auto grad_lag = [&](const Eigen::VectorXd& xx) {
      Eigen::VectorXd g(4);
      objective(xx, &g);
      Eigen::VectorXd c;
      std::vector<JacRow> jac;
      ineq_constraints(xx, &c, &jac);
      for (int r = 0; r < c.size() && r < z_ineq.size(); ++r)
        for (int i = 0; i < 4; ++i) g[i] += z_ineq[r] * jac[r].a[i];
      return g;
    };
    Eigen::MatrixXd h(4, 4);
    for (int i = 0; i < 4; ++i) {
      const double step = 1e-5 * (1.0 + std::abs(x[i]));
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      h.col(i) = (grad_lag(xp) - grad_lag(xm)) / (2.0 * step);
    }
    blocks->push_back({0, 0.5 * (h + h.transpose())});
    return true;
  }

 private:
  const std::vector<double>& rho_;
  Eigen::VectorXd start_;
  std::vector<double> ball_rays_;
  std::vector<double> cut_rays_;
  double scale_;
};

}  // namespace detail

// Largest-area diamond inscribed in the polar envelope slice (uniform angle
// grid over [-pi, pi)). The returned shape is verified against the slice and
// shrunk if any sampled boundary point pokes outside.
inline GGDiamond fit_diamond(const std::vector<double>& rho_slice) {
  const int n = static_cast<int>(rho_slice.size());
  if (n < 8) throw std::runtime_error("polar slice too small");
  auto rho_at = [&](double a) { return detail::rho_slice_interp(rho_slice, a); };
  const double rho_brk = rho_at(kPi - 1e-9);
  const double rho_lat = rho_at(kPi / 2.0);
  const double rho_acc = rho_at(0.0);
  GGDiamond out;
  if (rho_brk < 1e-6 || rho_lat < 1e-6 || rho_acc < 1e-6) {
    return out;  // degenerate envelope: zero-size diamond
  }

  Eigen::VectorXd start(4);
  start << 0.9 * rho_brk, 0.9 * rho_lat, 0.9 * rho_acc, 1.4;
  Eigen::VectorXd cur = start;
  const int ray_counts[3] = {48, 72, 96};
  for (int round = 0; round < 3; ++round) {
    // Split rays between ball-governed and cut-governed regimes.
    std::vector<double> ball_rays;
    const double A = cur[0], axmax = cur[2], p = cur[3];
    const int m = ray_counts[round];
    bool has_cut = axmax < A;
    for (int j = 0; j <= m; ++j) {
      const double psi = kPi * j / m;
      const double cc = std::cos(psi);
      const double rb = std::pow(std::pow(std::abs(cc) / A, p) +
                                     std::pow(std::abs(std::sin(psi)) / cur[1], p),
                                 -1.0 / p);
      if (!(has_cut && cc > 0.0 && rb * cc > axmax)) ball_rays.push_back(psi);
    }
    std::vector<double> cut_fracs = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    detail::DiamondFitNlp prob(rho_slice, cur, ball_rays, cut_fracs, has_cut);
    SqpSettings st;
    st.max_iter = 150;
    st.kkt_tol = 1e-7;
    st.constraint_tol = 1e-9;
    st.hessian_floor = 1e-5;
    SqpSolver solver(st);
    SqpResult r = solver.solve(prob, &cur);
    if (r.status == SolveStatus::kSuccess || is_incomplete(r.status)) cur = r.x;
  }
  out.ax_min = -cur[0];
  out.ax_max = cur[2];
  out.ay_max = cur[1];
  out.p = std::clamp(cur[3], 1.0, 2.0);

  // Guarantee the underapproximation on a dense boundary sweep.
  double shrink = 1.0;
  const int dense = 1440;
  for (int j = 0; j < dense; ++j) {
    const double psi = -kPi + 2.0 * kPi * j / dense;
    const double rr = diamond_boundary_radius(out, psi);
    if (rr <= 0.0) continue;
    const double lim = rho_at(psi);
    if (rr > lim) shrink = std::min(shrink, lim / rr);
  }
  if (shrink < 1.0) {
    shrink *= 1.0 - 1e-9;
    out.ax_min *= shrink;
    out.ax_max *= shrink;
    out.ay_max *= shrink;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid generation

struct GridBuildReport {
  int total_points = 0;
  int failed_points = 0;
  std::vector<std::string> notes;
};

inline GGGrid build_grid(const VehicleParams& vp, const std::vector<double>& v_axis,
                         const std::vector<double>& g_axis, int n_alpha = 64,
                         GridBuildReport* report = nullptr, int num_threads = 0) {
  vp.validate();
  if (v_axis.empty() || g_axis.empty()) throw std::runtime_error("empty grid axes");
  for (size_t i = 1; i < v_axis.size(); ++i)
    if (v_axis[i] <= v_axis[i - 1]) throw std::runtime_error("v_axis must be ascending");
  for (size_t i = 1; i < g_axis.size(); ++i)
    if (g_axis[i] <= g_axis[i - 1]) throw std::runtime_error("g_axis must be ascending");
  if (n_alpha < 32) throw std::runtime_error("n_alpha must be at least 32");

  GGGrid grid;
  grid.v_axis = v_axis;
  grid.g_axis = g_axis;
  grid.n_alpha = n_alpha;
  grid.hash = vehicle_hash(vp);
  const int nv = grid.nv(), ng = grid.ng();
  grid.polar.assign(static_cast<size_t>(nv) * ng * n_alpha, 0.0);
  grid.diamonds.assign(static_cast<size_t>(nv) * ng, GGDiamond{});
  grid.filled_by_neighbor.assign(static_cast<size_t>(nv) * ng, 0);

  std::atomic<int> failed{0};
  const int n_sweep = n_alpha / 2 + 1;

  auto build_slice = [&](int iv, int ig) {
    const double V = v_axis[iv];
    const double gt = g_axis[ig];
    // Sweep the upper half plane from braking to traction, chaining warm
    // starts; fill the uniform velocity-frame grid by interpolation and
    // mirror symmetry.
    std::vector<double> ang, rad;
    QssPoint prev;
    int local_failed = 0;
    for (int k = 0; k < n_sweep; ++k) {
      const double alpha = kPi - kPi * k / (n_sweep - 1);
      QssPoint q = solve_qss_point(vp, V, gt, alpha, prev.converged ? &prev : nullptr);
      if (q.converged && q.infeasible_ray) {
        // Collapsed sector: keep the field positive but effectively empty.
        ang.push_back(detail::wrap_angle(alpha));
        rad.push_back(0.1);
      } else if (q.converged) {
        ang.push_back(detail::wrap_angle(alpha - q.beta));
        rad.push_back(q.rho);
        prev = q;
      } else {
        ++local_failed;
      }
    }
    failed += local_failed;
    if (ang.size() < 8) return false;
    // Mirror to the lower half plane (left/right vehicle symmetry).
    std::vector<std::pair<double, double>> pts;
    for (size_t i = 0; i < ang.size(); ++i) {
      pts.emplace_back(ang[i], rad[i]);
      if (std::abs(ang[i]) > 1e-9 && std::abs(std::abs(ang[i]) - kPi) > 1e-9)
        pts.emplace_back(-ang[i], rad[i]);
    }
    std::sort(pts.begin(), pts.end());
    // Periodic linear resampling onto the uniform angle grid.
    const int np = static_cast<int>(pts.size());
    for (int ia = 0; ia < n_alpha; ++ia) {
      const double a = grid.alpha_at(ia);
      int j = 0;
      while (j < np && pts[j].first < a) ++j;
      double a0, r0, a1, r1;
      if (j == 0) {
        a0 = pts[np - 1].first - 2.0 * kPi;
        r0 = pts[np - 1].second;
        a1 = pts[0].first;
        r1 = pts[0].second;
      } else if (j == np) {
        a0 = pts[np - 1].first;
        r0 = pts[np - 1].second;
        a1 = pts[0].first + 2.0 * kPi;
        r1 = pts[0].second;
      } else {
        a0 = pts[j - 1].first;
        r0 = pts[j - 1].second;
        a1 = pts[j].first;
        r1 = pts[j].second;
      }
      const double f = (a1 > a0) ? (a - a0) / (a1 - a0) : 0.0;
      grid.rho_ref(iv, ig, ia) = (1.0 - f) * r0 + f * r1;
    }
    return true;
  };

  std::vector<uint8_t> slice_ok(static_cast<size_t>(nv) * ng, 0);
  const int hw = num_threads > 0 ? num_threads
                                 : std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  const int total_slices = nv * ng;
  for (int t = 0; t < hw; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        const int k = next++;
        if (k >= total_slices) return;
        const int iv = k / ng, ig = k % ng;
        slice_ok[k] = build_slice(iv, ig) ? 1 : 0;
      }
    });
  }
  for (auto& th : pool) th.join();

  // Neighbor fill for failed slices.
  for (int iv = 0; iv < nv; ++iv) {
    for (int ig = 0; ig < ng; ++ig) {
      if (slice_ok[iv * ng + ig]) continue;
      int src = -1;
      for (int d = 1; d < std::max(nv, ng) && src < 0; ++d) {
        if (ig - d >= 0 && slice_ok[iv * ng + ig - d]) src = iv * ng + ig - d;
        else if (ig + d < ng && slice_ok[iv * ng + ig + d]) src = iv * ng + ig + d;
        else if (iv - d >= 0 && slice_ok[(iv - d) * ng + ig]) src = (iv - d) * ng + ig;
        else if (iv + d < nv && slice_ok[(iv + d) * ng + ig]) src = (iv + d) * ng + ig;
      }
      if (src < 0) throw std::runtime_error("envelope generation failed on every grid slice");
      for (int ia = 0; ia < n_alpha; ++ia)
        grid.rho_ref(iv, ig, ia) = grid.polar[static_cast<size_t>(src) * n_alpha + ia];
      grid.filled_by_neighbor[iv * ng + ig] = 1;
    }
  }

  const int total_points = nv * ng * n_sweep;
  if (failed.load() > total_points / 20) {
    std::ostringstream os;
    os << "envelope generation failed at " << failed.load() << " of " << total_points
       << " points (limit 5%)";
    throw std::runtime_error(os.str());
  }

  for (int iv = 0; iv < nv; ++iv) {
    for (int ig = 0; ig < ng; ++ig) {
      std::vector<double> slice(n_alpha);
      for (int ia = 0; ia < n_alpha; ++ia) slice[ia] = grid.rho_at(iv, ig, ia);
      grid.diamonds[iv * ng + ig] = fit_diamond(slice);
    }
  }

  if (report) {
    report->total_points = total_points;
    report->failed_points = failed.load();
  }
  return grid;
}

inline std::vector<double> default_v_axis() {
  std::vector<double> v;
  for (double x = 5.0; x <= 100.0 + 1e-9; x += 5.0) v.push_back(x);
  return v;
}
inline std::vector<double> default_g_axis() {
  std::vector<double> g;
  for (double x = 0.25; x <= 3.0 + 1e-9; x += 0.25) g.push_back(x * kGravity);
  return g;
}

// Worst signed polar margin over sampled diamond boundaries at every grid
// node; >= 0 means the diamond is a true underapproximation.
inline double check_subset_margin(const GGGrid& grid, int samples_per_node = 720) {
  double worst = kInf;
  for (int iv = 0; iv < grid.nv(); ++iv) {
    for (int ig = 0; ig < grid.ng(); ++ig) {
      const GGDiamond& d = grid.diamond_at(iv, ig);
      for (int j = 0; j < samples_per_node; ++j) {
        const double psi = -kPi + 2.0 * kPi * j / samples_per_node;
        const double rr = diamond_boundary_radius(d, psi);
        if (rr <= 0.0) continue;
        const double margin = grid.rho_interp_alpha(iv, ig, psi) - rr;
        worst = std::min(worst, margin);
      }
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Grid file format: key-value header, then [polar] and [diamond] sections.

inline void grid_to_file(const GGGrid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "# gg grid v1\n";
  out << "vehicle_hash = " << grid.hash << "\n";
  out << "n_alpha = " << grid.n_alpha << "\n";
  out << "nv = " << grid.nv() << "\n";
  out << "ng = " << grid.ng() << "\n";
  out << "[polar]\n";
  out << "V,g_tilde,alpha,rho\n";
  for (int iv = 0; iv < grid.nv(); ++iv)
    for (int ig = 0; ig < grid.ng(); ++ig)
      for (int ia = 0; ia < grid.n_alpha; ++ia)
        out << format_g9(grid.v_axis[iv]) << "," << format_g9(grid.g_axis[ig]) << ","
            << format_g9(grid.alpha_at(ia)) << "," << format_g9(grid.rho_at(iv, ig, ia)) << "\n";
  out << "[diamond]\n";
  out << "V,g_tilde,ax_min,ax_max,ay_max,p\n";
  for (int iv = 0; iv < grid.nv(); ++iv)
    for (int ig = 0; ig < grid.ng(); ++ig) {
      const GGDiamond& d = grid.diamond_at(iv, ig);
      out << format_g9(grid.v_axis[iv]) << "," << format_g9(grid.g_axis[ig]) << ","
          << format_g9(d.ax_min) << "," << format_g9(d.ax_max) << "," << format_g9(d.ay_max)
          << "," << format_g9(d.p) << "\n";
    }
}

inline GGGrid grid_from_file(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  size_t i = 0;
  KeyValueFile kv = parse_keyvalue_lines(lines, "[polar]", &i);
  if (i >= lines.size()) throw std::runtime_error(path + ": missing [polar] section");
  GGGrid grid;
  grid.hash = kv.get("vehicle_hash");
  grid.n_alpha = static_cast<int>(kv.get_num("n_alpha", 0));
  const int nv = static_cast<int>(kv.get_num("nv", 0));
  const int ng = static_cast<int>(kv.get_num("ng", 0));
  if (grid.n_alpha < 4 || nv < 1 || ng < 1)
    throw std::runtime_error(path + ": malformed grid header");
  ++i;  // [polar]
  if (i >= lines.size() || trim(lines[i]) != "V,g_tilde,alpha,rho")
    throw std::runtime_error(path + ": bad polar header");
  ++i;
  grid.polar.assign(static_cast<size_t>(nv) * ng * grid.n_alpha, 0.0);
  grid.v_axis.assign(nv, 0.0);
  grid.g_axis.assign(ng, 0.0);
  grid.diamonds.assign(static_cast<size_t>(nv) * ng, GGDiamond{});
  grid.filled_by_neighbor.assign(static_cast<size_t>(nv) * ng, 0);
  size_t row = 0;
  const size_t polar_rows = grid.polar.size();
  for (; i < lines.size() && row < polar_rows; ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4)
      throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": bad polar row");
    const int iv = static_cast<int>(row / (static_cast<size_t>(ng) * grid.n_alpha));
    const int ig = static_cast<int>((row / grid.n_alpha) % ng);
    grid.v_axis[iv] = std::stod(cells[0]);
    grid.g_axis[ig] = std::stod(cells[1]);
    grid.polar[row] = std::stod(cells[3]);
    ++row;
  }
  if (row != polar_rows) throw std::runtime_error(path + ": truncated polar section");
  while (i < lines.size() && trim(lines[i]) != "[diamond]") ++i;
  if (i >= lines.size()) throw std::runtime_error(path + ": missing [diamond] section");
  ++i;
  if (i >= lines.size() || trim(lines[i]) != "V,g_tilde,ax_min,ax_max,ay_max,p")
    throw std::runtime_error(path + ": bad diamond header");
  ++i;
  row = 0;
  for (; i < lines.size() && row < grid.diamonds.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 6)
      throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": bad diamond row");
    GGDiamond d;
    d.ax_min = std::stod(cells[2]);
    d.ax_max = std::stod(cells[3]);
    d.ay_max = std::stod(cells[4]);
    d.p = std::stod(cells[5]);
    grid.diamonds[row] = d;
    ++row;
  }
  if (row != grid.diamonds.size()) throw std::runtime_error(path + ": truncated diamond section");
  return grid;
}

}  // namespace raceline

#endif  // RACELINE_GGDIAGRAM_HPP_
