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

#ifndef RACELINE_TRACK_HPP_
#define RACELINE_TRACK_HPP_

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "raceline/csv.hpp"

namespace raceline {

inline constexpr double kPi = std::numbers::pi;

// Rotation matrix R_z(theta) * R_y(mu) * R_x(phi), zyx Euler convention.
inline Eigen::Matrix3d rot_zyx(double theta, double mu, double phi) {
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cm = std::cos(mu), sm = std::sin(mu);
  const double cp = std::cos(phi), sp = std::sin(phi);
  Eigen::Matrix3d r;
  r << ct * cm, ct * sm * sp - st * cp, ct * sm * cp + st * sp,
       st * cm, st * sm * sp + ct * cp, st * sm * cp - ct * sp,
       -sm,     cm * sp,                cm * cp;
  return r;
}

// Angular rate of the road frame per unit arc length from the Euler angle
// derivatives: Omega = M(mu, phi) * (phi', mu', theta').
inline Eigen::Vector3d omega_from_angle_rates(double mu, double phi, double dphi,
                                              double dmu, double dtheta) {
  const double cm = std::cos(mu), sm = std::sin(mu);
  const double cp = std::cos(phi), sp = std::sin(phi);
  return {dphi - sm * dtheta, cp * dmu + cm * sp * dtheta, -sp * dmu + cm * cp * dtheta};
}

// Cubic spline through (t_i, y_i); periodic splines treat the data as one
// full cycle with period `period` (y wraps back to y_0).
class CubicSpline {
 public:
  void fit(const std::vector<double>& t, const std::vector<double>& y, bool periodic,
           double period = 0.0) {
    t_ = t;
    y_ = y;
    periodic_ = periodic;
    period_ = period;
    const int m = static_cast<int>(t.size());
    if (m < 3) throw std::runtime_error("spline needs at least 3 points");
    h_.resize(m);
    for (int i = 0; i + 1 < m; ++i) h_[i] = t[i + 1] - t[i];
    h_[m - 1] = periodic ? (t[0] + period - t[m - 1]) : 0.0;
    m2_.assign(m, 0.0);
    if (periodic_) {
      solve_cyclic();
    } else {
      solve_natural();
    }
  }

  double eval(double t, double* d1 = nullptr, double* d2 = nullptr) const {
    const int m = static_cast<int>(t_.size());
    double tt = t;
    if (periodic_) {
      const double p = period_;
      tt = t_[0] + std::fmod(std::fmod(t - t_[0], p) + p, p);
    }
    int i = locate(tt);
    const double h = h_[i];
    const double t0 = t_[i];
    const double y0 = y_[i];
    const double y1 = (i + 1 < m) ? y_[i + 1] : y_[0];
    const double m0 = m2_[i];
    const double m1 = (i + 1 < m) ? m2_[i + 1] : m2_[0];
    const double B = (tt - t0) / h;
    const double A = 1.0 - B;
    if (d1)
      *d1 = (y1 - y0) / h + h / 6.0 * (-(3.0 * A * A - 1.0) * m0 + (3.0 * B * B - 1.0) * m1);
    if (d2) *d2 = A * m0 + B * m1;
    return A * y0 + B * y1 + h * h / 6.0 * ((A * A * A - A) * m0 + (B * B * B - B) * m1);
  }

 private:
  int locate(double t) const {
    const int m = static_cast<int>(t_.size());
    if (t <= t_[0]) return 0;
    const int last = periodic_ ? m - 1 : m - 2;
    if (t >= t_[m - 1]) return last;
    int lo = 0, hi = m - 1;
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      (t_[mid] <= t ? lo : hi) = mid;
    }
    return lo;
  }

  void solve_natural() {
    const int m = static_cast<int>(t_.size());
    const int n = m - 2;
    if (n <= 0) return;
    std::vector<double> a(n), b(n), c(n), r(n);
    for (int k = 0; k < n; ++k) {
      const int i = k + 1;
      a[k] = h_[i - 1] / 6.0;
      b[k] = (h_[i - 1] + h_[i]) / 3.0;
      c[k] = h_[i] / 6.0;
      r[k] = (y_[i + 1] - y_[i]) / h_[i] - (y_[i] - y_[i - 1]) / h_[i - 1];
    }
    thomas(a, b, c, r);
    for (int k = 0; k < n; ++k) m2_[k + 1] = r[k];
  }

  void solve_cyclic() {
    const int m = static_cast<int>(t_.size());
    auto hi = [&](int i) { return h_[(i % m + m) % m]; };
    auto yi = [&](int i) { return y_[(i % m + m) % m]; };
    std::vector<double> a(m), b(m), c(m), r(m);
    for (int i = 0; i < m; ++i) {
      a[i] = hi(i - 1) / 6.0;
      b[i] = (hi(i - 1) + hi(i)) / 3.0;
      c[i] = hi(i) / 6.0;
      r[i] = (yi(i + 1) - yi(i)) / hi(i) - (yi(i) - yi(i - 1)) / hi(i - 1);
    }
    // Sherman-Morrison removal of the cyclic corner entries.
    const double alpha = a[0], beta = c[m - 1];
    const double gamma = -b[0];
    std::vector<double> bb = b;
    bb[0] -= gamma;
    bb[m - 1] -= alpha * beta / gamma;
    std::vector<double> u(m, 0.0);
    u[0] = gamma;
    u[m - 1] = beta;
    std::vector<double> x = r, z = u;
    std::vector<double> a1(a.begin() + 1, a.end());
    std::vector<double> c1(c.begin(), c.end() - 1);
    thomas_full(a1, bb, c1, x);
    thomas_full(a1, bb, c1, z);
    const double fact = (x[0] + alpha * x[m - 1] / gamma) /
                        (1.0 + z[0] + alpha * z[m - 1] / gamma);
    for (int i = 0; i < m; ++i) m2_[i] = x[i] - fact * z[i];
  }

  static void thomas(std::vector<double>& a, std::vector<double>& b, std::vector<double>& c,
                     std::vector<double>& r) {
    const int n = static_cast<int>(b.size());
    for (int i = 1; i < n; ++i) {
      const double w = a[i] / b[i - 1];
      b[i] -= w * c[i - 1];
      r[i] -= w * r[i - 1];
    }
    r[n - 1] /= b[n - 1];
    for (int i = n - 2; i >= 0; --i) r[i] = (r[i] - c[i] * r[i + 1]) / b[i];
  }

  // Thomas with sub/super diagonals given separately (sizes n-1).
  static void thomas_full(const std::vector<double>& sub, std::vector<double> diag,
                          const std::vector<double>& sup, std::vector<double>& r) {
    const int n = static_cast<int>(diag.size());
    for (int i = 1; i < n; ++i) {
      const double w = sub[i - 1] / diag[i - 1];
      diag[i] -= w * sup[i - 1];
      r[i] -= w * r[i - 1];
    }
    r[n - 1] /= diag[n - 1];
    for (int i = n - 2; i >= 0; --i) r[i] = (r[i] - sup[i] * r[i + 1]) / diag[i];
  }

  std::vector<double> t_, y_, h_, m2_;
  bool periodic_ = false;
  double period_ = 0.0;
};

// Measured track data before smoothing. Widths are magnitudes; the signed
// boundary convention (n_l > 0, n_r < 0) is applied on conversion.
struct RawTrackInput {
  struct Sample {
    double x, y, z;
    double w_left, w_right;
    double theta = 0.0, mu = 0.0, phi = 0.0;
  };
  std::vector<Sample> samples;
  bool closed = true;
  bool has_angles = false;   // theta, mu, phi all supplied
  bool has_banking = false;  // only phi supplied; theta, mu estimated

  void validate() const {
    if (samples.size() < 4) throw std::runtime_error("track input needs at least 4 samples");
    for (size_t i = 0; i < samples.size(); ++i) {
      const auto& a = samples[i];
      if (!(a.w_left > 0.0) || !(a.w_right > 0.0))
        throw std::runtime_error("track widths must be positive at sample " + std::to_string(i));
      if (i + 1 < samples.size()) {
        const auto& b = samples[i + 1];
        const double d = std::hypot(b.x - a.x, std::hypot(b.y - a.y, b.z - a.z));
        if (d <= 1e-6)
          throw std::runtime_error("coincident track samples at index " + std::to_string(i));
      }
    }
  }
};

struct TrackFrame {
  double s = 0.0;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  double theta = 0.0, mu = 0.0, phi = 0.0;
  double dtheta = 0.0, dmu = 0.0, dphi = 0.0;
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();      // per arc length
  Eigen::Vector3d domega_ds = Eigen::Vector3d::Zero();  // d(omega)/ds
  double n_left = 0.0, n_right = 0.0;
};

// Smoothed ribbon track on a uniform arc-length grid. Immutable once built.
class Track {
 public:
  double s_f = 0.0;
  double step = 0.0;
  bool closed = true;
  // Node arrays of size N+1 (node N repeats node 0 on closed tracks, with
  // theta advanced by the winding).
  std::vector<double> px, py, pz;
  std::vector<double> theta, mu, phi;
  std::vector<double> dtheta, dmu, dphi;
  std::vector<double> ox, oy, oz;
  std::vector<double> dox, doy, doz;
  std::vector<double> n_left, n_right;
  double smoothing_residual_m = 0.0;
  double closure_gap_m = 0.0;

  int num_nodes() const { return static_cast<int>(px.size()); }
  int num_intervals() const { return num_nodes() - 1; }

  double wrap_s(double s) const {
    if (!closed) return s;
    double w = std::fmod(s, s_f);
    if (w < 0.0) w += s_f;
    return w;
  }

  TrackFrame frame_at(double s) const {
    const int n = num_intervals();
    double ss = s;
    if (closed) {
      ss = wrap_s(s);
    } else if (s < -1e-9 || s > s_f + 1e-9) {
      throw std::runtime_error("arc length " + std::to_string(s) + " outside open track [0, " +
                               std::to_string(s_f) + "]");
    }
    ss = std::clamp(ss, 0.0, s_f);
    int i = std::min(static_cast<int>(ss / step), n - 1);
    const double tau = (ss - i * step) / step;
    auto lerp = [&](const std::vector<double>& a) { return a[i] + tau * (a[i + 1] - a[i]); };
    TrackFrame f;
    f.s = ss;
    f.p = {lerp(px), lerp(py), lerp(pz)};
    f.theta = lerp(theta);
    f.mu = lerp(mu);
    f.phi = lerp(phi);
    f.dtheta = lerp(dtheta);
    f.dmu = lerp(dmu);
    f.dphi = lerp(dphi);
    f.omega = {lerp(ox), lerp(oy), lerp(oz)};
    f.domega_ds = {lerp(dox), lerp(doy), lerp(doz)};
    f.n_left = lerp(n_left);
    f.n_right = lerp(n_right);
    return f;
  }

  Eigen::Vector3d surface_point(double s, double n) const {
    const TrackFrame f = frame_at(s);
    if (n > f.n_left + 1e-9 || n < f.n_right - 1e-9)
      throw std::runtime_error("lateral offset " + std::to_string(n) + " outside [" +
                               std::to_string(f.n_right) + ", " + std::to_string(f.n_left) + "]");
    return f.p + rot_zyx(f.theta, f.mu, f.phi).col(1) * n;
  }
};

namespace detail {

inline std::vector<double> central_diff(const std::vector<double>& a, double h, bool periodic,
                                        double wrap_jump = 0.0) {
  // a has N+1 entries with a[N] the closure copy on periodic data
  // (a[N] = a[0] + wrap_jump). Returns derivative at every node.
  const int n = static_cast<int>(a.size()) - 1;
  std::vector<double> d(n + 1);
  if (periodic) {
    for (int j = 0; j < n; ++j) {
      const double prev = (j == 0) ? a[n - 1] - wrap_jump : a[j - 1];
      const double next = (j == n - 1) ? a[0] + wrap_jump : a[j + 1];
      d[j] = (next - prev) / (2.0 * h);
    }
    d[n] = d[0];
  } else {
    d[0] = (-3.0 * a[0] + 4.0 * a[1] - a[2]) / (2.0 * h);
    for (int j = 1; j < n; ++j) d[j] = (a[j + 1] - a[j - 1]) / (2.0 * h);
    d[n] = (3.0 * a[n] - 4.0 * a[n - 1] + a[n - 2]) / (2.0 * h);
  }
  return d;
}

// Minimizes integral(a'')^2 + weight * sum (a - raw)^2 on the uniform grid.
inline std::vector<double> smooth_profile(const std::vector<double>& raw, double h, double weight,
                                          bool periodic) {
  const int n = static_cast<int>(raw.size());
  if (weight <= 0.0) return raw;
  std::vector<Eigen::Triplet<double>> trip;
  const double c = 1.0 / (h * h * h);
  auto add_row = [&](int j0, int j1, int j2) {
    const int idx[3] = {j0, j1, j2};
    const double w[3] = {1.0, -2.0, 1.0};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) trip.emplace_back(idx[a], idx[b], c * w[a] * w[b]);
  };
  if (periodic) {
    for (int j = 0; j < n; ++j) add_row((j + n - 1) % n, j, (j + 1) % n);
  } else {
    for (int j = 1; j + 1 < n; ++j) add_row(j - 1, j, j + 1);
  }
  for (int j = 0; j < n; ++j) trip.emplace_back(j, j, weight);
  Eigen::SparseMatrix<double> m(n, n);
  m.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(m);
  if (ldlt.info() != Eigen::Success) throw std::runtime_error("track smoothing factorization failed");
  Eigen::VectorXd rhs(n);
  for (int j = 0; j < n; ++j) rhs[j] = weight * raw[j];
  Eigen::VectorXd sol = ldlt.solve(rhs);
  std::vector<double> out(n);
  for (int j = 0; j < n; ++j) out[j] = sol[j];
  return out;
}

inline double unwrap_step(double prev, double raw) {
  double d = raw - prev;
  while (d > kPi) d -= 2.0 * kPi;
  while (d < -kPi) d += 2.0 * kPi;
  return prev + d;
}

// Gauss-Legendre 5 point rule on [0, 1].
inline const double* gl5_nodes() {
  static const double x[5] = {0.04691007703066800, 0.23076534494715845, 0.5,
                              0.76923465505284155, 0.95308992296933200};
  return x;
}
inline const double* gl5_weights() {
  static const double w[5] = {0.11846344252809454, 0.23931433524968324, 0.28444444444444444,
                              0.23931433524968324, 0.11846344252809454};
  return w;
}

}  // namespace detail

// Builds the smoothed uniform-grid track. Angle profiles are estimated from
// the centerline tangent (banking from the optional phi column), smoothed
// with a curvature penalty, and the centerline is re-integrated from the
// smoothed angles so that the grid spacing is exact arc length.
inline Track build_track(const RawTrackInput& raw, double step = 2.0, double smooth_weight = 10.0) {
  raw.validate();
  if (!(step > 0.0)) throw std::runtime_error("step must be positive");
  std::vector<RawTrackInput::Sample> pts = raw.samples;
  if (raw.closed) {
    const auto& f = pts.front();
    const auto& l = pts.back();
    const double gap = std::hypot(l.x - f.x, std::hypot(l.y - f.y, l.z - f.z));
    if (gap < 1e-6) pts.pop_back();  // drop duplicated closure point
  }
  const int m = static_cast<int>(pts.size());
  if (m < 4) throw std::runtime_error("track input needs at least 4 distinct samples");

  // Chord-length parameter.
  std::vector<double> t(m, 0.0);
  std::vector<double> seg(m, 0.0);
  for (int i = 1; i < m; ++i) {
    const auto& a = pts[i - 1];
    const auto& b = pts[i];
    t[i] = t[i - 1] + std::hypot(b.x - a.x, std::hypot(b.y - a.y, b.z - a.z));
  }
  double period = t[m - 1];
  if (raw.closed) {
    const auto& a = pts[m - 1];
    const auto& b = pts[0];
    const double wrap = std::hypot(b.x - a.x, std::hypot(b.y - a.y, b.z - a.z));
    double med = t[m - 1] / (m - 1);
    if (wrap > std::max(10.0 * med, 0.02 * (t[m - 1] + wrap)))
      throw std::runtime_error("closed flag set but endpoint gap " + std::to_string(wrap) +
                               " m is not closable");
    period = t[m - 1] + wrap;
  }

  std::vector<double> xs(m), ys(m), zs(m), wl(m), wr(m);
  for (int i = 0; i < m; ++i) {
    xs[i] = pts[i].x;
    ys[i] = pts[i].y;
    zs[i] = pts[i].z;
    wl[i] = pts[i].w_left;
    wr[i] = pts[i].w_right;
  }
  CubicSpline sx, sy, sz;
  sx.fit(t, xs, raw.closed, period);
  sy.fit(t, ys, raw.closed, period);
  sz.fit(t, zs, raw.closed, period);

  // Arc length along the spline.
  const double t_end = raw.closed ? period : t[m - 1];
  const int n_sub = std::max(4 * m, 256);
  std::vector<double> tg(n_sub + 1), arc(n_sub + 1, 0.0);
  for (int i = 0; i <= n_sub; ++i) tg[i] = t_end * i / n_sub;
  auto speed = [&](double tt) {
    double dx, dy, dz;
    sx.eval(tt, &dx);
    sy.eval(tt, &dy);
    sz.eval(tt, &dz);
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  };
  for (int i = 0; i < n_sub; ++i) {
    const double a = tg[i], b = tg[i + 1];
    double acc = 0.0;
    for (int q = 0; q < 5; ++q)
      acc += detail::gl5_weights()[q] * speed(a + (b - a) * detail::gl5_nodes()[q]);
    arc[i + 1] = arc[i] + acc * (b - a);
  }
  const double total_len = arc[n_sub];
  const int n = std::max(8, static_cast<int>(std::llround(total_len / step)));
  const double h = total_len / n;

  auto t_of_s = [&](double s) {
    s = std::clamp(s, 0.0, total_len);
    int lo = 0, hi = n_sub;
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      (arc[mid] <= s ? lo : hi) = mid;
    }
    const double f = (arc[hi] > arc[lo]) ? (s - arc[lo]) / (arc[hi] - arc[lo]) : 0.0;
    return tg[lo] + f * (tg[hi] - tg[lo]);
  };

  // Raw angle profiles on the uniform grid.
  std::vector<double> th_raw(n + 1), mu_raw(n + 1), ph_raw(n + 1), wl_g(n + 1), wr_g(n + 1);
  CubicSpline sth, smu, sph, swl, swr;
  if (raw.has_angles) {
    std::vector<double> th_in(m), mu_in(m), ph_in(m);
    for (int i = 0; i < m; ++i) {
      th_in[i] = pts[i].theta;
      mu_in[i] = pts[i].mu;
      ph_in[i] = pts[i].phi;
    }
    for (int i = 1; i < m; ++i) th_in[i] = detail::unwrap_step(th_in[i - 1], th_in[i]);
    // Closed-track winding lives in a linear ramp; splines get the remainder.
    double wind = 0.0;
    if (raw.closed) {
      const double back = detail::unwrap_step(th_in[m - 1], th_in[0]);
      wind = back - th_in[0];
      for (int i = 0; i < m; ++i) th_in[i] -= wind * t[i] / period;
    }
    sth.fit(t, th_in, raw.closed, period);
    smu.fit(t, mu_in, raw.closed, period);
    sph.fit(t, ph_in, raw.closed, period);
    for (int j = 0; j <= n; ++j) {
      const double tt = t_of_s(j * h);
      th_raw[j] = sth.eval(tt) + (raw.closed ? wind * (j * h) / total_len : 0.0);
      mu_raw[j] = smu.eval(tt);
      ph_raw[j] = sph.eval(tt);
    }
  } else {
    for (int j = 0; j <= n; ++j) {
      const double tt = t_of_s(j * h);
      double dx, dy, dz;
      sx.eval(tt, &dx);
      sy.eval(tt, &dy);
      sz.eval(tt, &dz);
      const double nv = std::sqrt(dx * dx + dy * dy + dz * dz);
      const double tzn = std::clamp(dz / nv, -1.0, 1.0);
      mu_raw[j] = -std::asin(tzn);
      const double a = std::atan2(dy, dx);
      th_raw[j] = (j == 0) ? a : detail::unwrap_step(th_raw[j - 1], a);
      ph_raw[j] = 0.0;
    }
    if (raw.has_banking) {
      std::vector<double> ph_in(m);
      for (int i = 0; i < m; ++i) ph_in[i] = pts[i].phi;
      CubicSpline sb;
      sb.fit(t, ph_in, raw.closed, period);
      for (int j = 0; j <= n; ++j) ph_raw[j] = sb.eval(t_of_s(j * h));
    }
  }
  swl.fit(t, wl, raw.closed, period);
  swr.fit(t, wr, raw.closed, period);
  for (int j = 0; j <= n; ++j) {
    const double tt = t_of_s(j * h);
    wl_g[j] = swl.eval(tt);
    wr_g[j] = swr.eval(tt);
  }

  // Winding ramp for theta; the periodic smoother sees the remainder.
  double wind = 0.0;
  if (raw.closed) {
    wind = 2.0 * kPi * std::round((th_raw[n] - th_raw[0]) / (2.0 * kPi));
  }
  std::vector<double> th_p(n), mu_p(n), ph_p(n);
  for (int j = 0; j < n; ++j) {
    th_p[j] = th_raw[j] - wind * (j * h) / total_len;
    mu_p[j] = mu_raw[j];
    ph_p[j] = ph_raw[j];
  }
  std::vector<double> th_s, mu_s, ph_s;
  if (raw.closed) {
    th_s = detail::smooth_profile(th_p, h, smooth_weight, true);
    mu_s = detail::smooth_profile(mu_p, h, smooth_weight, true);
    ph_s = detail::smooth_profile(ph_p, h, smooth_weight, true);
  } else {
    std::vector<double> th_o(th_raw), mu_o(mu_raw), ph_o(ph_raw);
    th_s = detail::smooth_profile(th_o, h, smooth_weight, false);
    mu_s = detail::smooth_profile(mu_o, h, smooth_weight, false);
    ph_s = detail::smooth_profile(ph_o, h, smooth_weight, false);
  }

  Track trk;
  trk.s_f = total_len;
  trk.step = h;
  trk.closed = raw.closed;
  auto& T = trk;
  const int nn = n + 1;
  T.theta.resize(nn);
  T.mu.resize(nn);
  T.phi.resize(nn);
  for (int j = 0; j < n; ++j) {
    if (raw.closed) {
      T.theta[j] = th_s[j] + wind * (j * h) / total_len;
      T.mu[j] = mu_s[j];
      T.phi[j] = ph_s[j];
    } else {
      T.theta[j] = th_s[j];
      T.mu[j] = mu_s[j];
      T.phi[j] = ph_s[j];
    }
  }
  if (raw.closed) {
    T.theta[n] = T.theta[0] + wind;
    T.mu[n] = T.mu[0];
    T.phi[n] = T.phi[0];
  } else {
    T.theta[n] = th_s[n];
    T.mu[n] = mu_s[n];
    T.phi[n] = ph_s[n];
  }

  T.dtheta = detail::central_diff(T.theta, h, raw.closed, wind);
  T.dmu = detail::central_diff(T.mu, h, raw.closed, 0.0);
  T.dphi = detail::central_diff(T.phi, h, raw.closed, 0.0);

  T.ox.resize(nn);
  T.oy.resize(nn);
  T.oz.resize(nn);
  for (int j = 0; j < nn; ++j) {
    const Eigen::Vector3d w =
        omega_from_angle_rates(T.mu[j], T.phi[j], T.dphi[j], T.dmu[j], T.dtheta[j]);
    T.ox[j] = w[0];
    T.oy[j] = w[1];
    T.oz[j] = w[2];
  }
  T.dox = detail::central_diff(T.ox, h, raw.closed, 0.0);
  T.doy = detail::central_diff(T.oy, h, raw.closed, 0.0);
  T.doz = detail::central_diff(T.oz, h, raw.closed, 0.0);

  // Re-integrate the centerline from the smoothed tangent (Simpson on each
  // interval; angles vary linearly between nodes).
  T.px.resize(nn);
  T.py.resize(nn);
  T.pz.resize(nn);
  {
    double tt0 = t_of_s(0.0);
    T.px[0] = sx.eval(tt0);
    T.py[0] = sy.eval(tt0);
    T.pz[0] = sz.eval(tt0);
    auto tangent = [&](double th, double m_, double ph) {
      return Eigen::Vector3d(std::cos(th) * std::cos(m_), std::sin(th) * std::cos(m_),
                             -std::sin(m_));
    };
    for (int j = 0; j < n; ++j) {
      const Eigen::Vector3d f0 = tangent(T.theta[j], T.mu[j], T.phi[j]);
      const Eigen::Vector3d f1 = tangent(T.theta[j + 1], T.mu[j + 1], T.phi[j + 1]);
      const Eigen::Vector3d fm = tangent(0.5 * (T.theta[j] + T.theta[j + 1]),
                                         0.5 * (T.mu[j] + T.mu[j + 1]),
                                         0.5 * (T.phi[j] + T.phi[j + 1]));
      const Eigen::Vector3d dp = h / 6.0 * (f0 + 4.0 * fm + f1);
      T.px[j + 1] = T.px[j] + dp[0];
      T.py[j + 1] = T.py[j] + dp[1];
      T.pz[j + 1] = T.pz[j] + dp[2];
    }
    if (raw.closed) {
      const Eigen::Vector3d gap(T.px[n] - T.px[0], T.py[n] - T.py[0], T.pz[n] - T.pz[0]);
      trk.closure_gap_m = gap.norm();
      for (int j = 1; j <= n; ++j) {
        const double f = static_cast<double>(j) / n;
        T.px[j] -= f * gap[0];
        T.py[j] -= f * gap[1];
        T.pz[j] -= f * gap[2];
      }
      T.px[n] = T.px[0];
      T.py[n] = T.py[0];
      T.pz[n] = T.pz[0];
    }
  }

  T.n_left.resize(nn);
  T.n_right.resize(nn);
  for (int j = 0; j < nn; ++j) {
    T.n_left[j] = wl_g[j];
    T.n_right[j] = -wr_g[j];
  }

  // Deviation of the re-integrated centerline from the measured points.
  double max_resid = 0.0;
  for (int i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::max();
    for (int j = 0; j < nn; ++j) {
      const double dx = T.px[j] - pts[i].x;
      const double dy = T.py[j] - pts[i].y;
      const double dz = T.pz[j] - pts[i].z;
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    max_resid = std::max(max_resid, std::sqrt(best));
  }
  trk.smoothing_residual_m = max_resid;

  for (int j = 0; j < nn; ++j) {
    if (1.0 - T.n_left[j] * T.oz[j] <= 0.0 || 1.0 - T.n_right[j] * T.oz[j] <= 0.0)
      throw std::runtime_error("degenerate parameterization: track too wide for curvature at node " +
                               std::to_string(j));
  }
  return trk;
}

// Projects the track to the horizontal plane: mu = phi = p_z = 0, theta
// refitted so the new grid is exact arc length of the projection.
inline Track flatten_2d(const Track& in) {
  const int n = in.num_intervals();
  const double h = in.step;
  // Horizontal arc length along the old grid (ds2/ds = cos(mu)).
  std::vector<double> s2(n + 1, 0.0);
  for (int j = 0; j < n; ++j)
    s2[j + 1] = s2[j] + 0.5 * h * (std::cos(in.mu[j]) + std::cos(in.mu[j + 1]));
  const double len2 = s2[n];
  const int n2 = std::max(8, static_cast<int>(std::llround(len2 / h)));
  const double h2 = len2 / n2;

  auto old_s_for = [&](double target) {
    target = std::clamp(target, 0.0, len2);
    int lo = 0, hi = n;
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      (s2[mid] <= target ? lo : hi) = mid;
    }
    const double f = (s2[hi] > s2[lo]) ? (target - s2[lo]) / (s2[hi] - s2[lo]) : 0.0;
    return (lo + f) * h;
  };

  Track out;
  out.s_f = len2;
  out.step = h2;
  out.closed = in.closed;
  const int nn = n2 + 1;
  out.theta.resize(nn);
  out.mu.assign(nn, 0.0);
  out.phi.assign(nn, 0.0);
  out.n_left.resize(nn);
  out.n_right.resize(nn);
  for (int j = 0; j <= n2; ++j) {
    const TrackFrame f = in.frame_at(old_s_for(j * h2));
    out.theta[j] = f.theta;  // stored unwrapped, interpolation keeps continuity
    out.n_left[j] = f.n_left;
    out.n_right[j] = f.n_right;
  }
  if (in.closed) {
    // frame_at wraps s_f to 0; restore the winding at the closure node.
    out.theta[n2] = out.theta[0] + (in.theta[n] - in.theta[0]);
    out.n_left[n2] = out.n_left[0];
    out.n_right[n2] = out.n_right[0];
  }
  const double wind = out.theta[n2] - out.theta[0];
  out.dtheta = detail::central_diff(out.theta, h2, in.closed, wind);
  out.dmu.assign(nn, 0.0);
  out.dphi.assign(nn, 0.0);
  out.ox.assign(nn, 0.0);
  out.oy.assign(nn, 0.0);
  out.oz = out.dtheta;
  out.dox.assign(nn, 0.0);
  out.doy.assign(nn, 0.0);
  out.doz = detail::central_diff(out.oz, h2, in.closed, 0.0);

  out.px.resize(nn);
  out.py.resize(nn);
  out.pz.assign(nn, 0.0);
  out.px[0] = in.px[0];
  out.py[0] = in.py[0];
  for (int j = 0; j < n2; ++j) {
    const double t0 = out.theta[j], t1 = out.theta[j + 1], tm = 0.5 * (t0 + t1);
    out.px[j + 1] = out.px[j] + h2 / 6.0 * (std::cos(t0) + 4.0 * std::cos(tm) + std::cos(t1));
    out.py[j + 1] = out.py[j] + h2 / 6.0 * (std::sin(t0) + 4.0 * std::sin(tm) + std::sin(t1));
  }
  if (in.closed) {
    const double gx = out.px[n2] - out.px[0];
    const double gy = out.py[n2] - out.py[0];
    out.closure_gap_m = std::hypot(gx, gy);
    for (int j = 1; j <= n2; ++j) {
      const double f = static_cast<double>(j) / n2;
      out.px[j] -= f * gx;
      out.py[j] -= f * gy;
    }
    out.px[n2] = out.px[0];
    out.py[n2] = out.py[0];
  }
  out.smoothing_residual_m = in.smoothing_residual_m;
  return out;
}

// ---------------------------------------------------------------------------
// File formats

inline RawTrackInput raw_track_from_csv(const std::string& path, bool closed = true) {
  const CsvTable t = read_csv(path);
  for (const char* col : {"x_m", "y_m", "z_m", "w_left_m", "w_right_m"})
    if (!t.has_column(col)) throw std::runtime_error(path + ": missing column " + col);
  RawTrackInput raw;
  raw.closed = closed;
  raw.has_angles = t.has_column("theta_rad") && t.has_column("mu_rad") && t.has_column("phi_rad");
  raw.has_banking = !raw.has_angles && t.has_column("phi_rad");
  const int cx = t.column("x_m"), cy = t.column("y_m"), cz = t.column("z_m");
  const int cl = t.column("w_left_m"), cr = t.column("w_right_m");
  const int ct = t.column("theta_rad"), cm = t.column("mu_rad"), cp = t.column("phi_rad");
  for (const auto& r : t.rows) {
    RawTrackInput::Sample s;
    s.x = r[cx];
    s.y = r[cy];
    s.z = r[cz];
    s.w_left = r[cl];
    s.w_right = r[cr];
    if (raw.has_angles) {
      s.theta = r[ct];
      s.mu = r[cm];
      s.phi = r[cp];
    } else if (raw.has_banking) {
      s.phi = r[cp];
    }
    raw.samples.push_back(s);
  }
  return raw;
}

inline const std::vector<std::string>& track_csv_header() {
  static const std::vector<std::string> h = {
      "s_m",           "x_m",         "y_m",         "z_m",        "theta_rad",
      "mu_rad",        "phi_rad",     "dtheta_radpm", "dmu_radpm", "dphi_radpm",
      "omega_x",       "omega_y",     "omega_z",     "n_left_m",   "n_right_m"};
  return h;
}

inline void track_to_csv(const Track& t, const std::string& path) {
  std::vector<std::vector<double>> rows;
  for (int j = 0; j < t.num_nodes(); ++j) {
    rows.push_back({j * t.step, t.px[j], t.py[j], t.pz[j], t.theta[j], t.mu[j], t.phi[j],
                    t.dtheta[j], t.dmu[j], t.dphi[j], t.ox[j], t.oy[j], t.oz[j], t.n_left[j],
                    t.n_right[j]});
  }
  write_csv(path, track_csv_header(), rows);
}

inline Track track_from_csv(const std::string& path) {
  const CsvTable tab = read_csv(path);
  for (const auto& col : track_csv_header())
    if (!tab.has_column(col)) throw std::runtime_error(path + ": missing column " + col);
  const int nn = static_cast<int>(tab.rows.size());
  if (nn < 5) throw std::runtime_error(path + ": too few track rows");
  Track t;
  auto col = [&](const char* name) {
    const int c = tab.column(name);
    std::vector<double> v(nn);
    for (int j = 0; j < nn; ++j) v[j] = tab.rows[j][c];
    return v;
  };
  const std::vector<double> s = col("s_m");
  t.s_f = s[nn - 1];
  t.step = t.s_f / (nn - 1);
  const double tol = std::max(1e-9, 1e-8 * t.s_f);
  for (int j = 1; j < nn; ++j)
    if (std::abs(s[j] - s[j - 1] - t.step) > tol)
      throw std::runtime_error(path + ": non-uniform arc length grid");
  t.px = col("x_m");
  t.py = col("y_m");
  t.pz = col("z_m");
  t.theta = col("theta_rad");
  t.mu = col("mu_rad");
  t.phi = col("phi_rad");
  t.dtheta = col("dtheta_radpm");
  t.dmu = col("dmu_radpm");
  t.dphi = col("dphi_radpm");
  t.n_left = col("n_left_m");
  t.n_right = col("n_right_m");
  const double gap = std::hypot(t.px[nn - 1] - t.px[0],
                                std::hypot(t.py[nn - 1] - t.py[0], t.pz[nn - 1] - t.pz[0]));
  const double dth = std::remainder(t.theta[nn - 1] - t.theta[0], 2.0 * kPi);
  t.closed = gap < 1e-3 && std::abs(dth) < 1e-3 && std::abs(t.mu[nn - 1] - t.mu[0]) < 1e-3 &&
             std::abs(t.phi[nn - 1] - t.phi[0]) < 1e-3;
  if (t.closed) {
    // Snap the closure node so periodic invariants hold exactly.
    const double wind = t.theta[nn - 1] - t.theta[0] - dth;
    t.px[nn - 1] = t.px[0];
    t.py[nn - 1] = t.py[0];
    t.pz[nn - 1] = t.pz[0];
    t.theta[nn - 1] = t.theta[0] + wind;
    t.mu[nn - 1] = t.mu[0];
    t.phi[nn - 1] = t.phi[0];
    t.n_left[nn - 1] = t.n_left[0];
    t.n_right[nn - 1] = t.n_right[0];
    t.dtheta[nn - 1] = t.dtheta[0];
    t.dmu[nn - 1] = t.dmu[0];
    t.dphi[nn - 1] = t.dphi[0];
  }
  // Omega is rebuilt from the angle rates so the consistency invariant holds
  // exactly after the round trip through file precision.
  t.ox.resize(nn);
  t.oy.resize(nn);
  t.oz.resize(nn);
  for (int j = 0; j < nn; ++j) {
    const Eigen::Vector3d w =
        omega_from_angle_rates(t.mu[j], t.phi[j], t.dphi[j], t.dmu[j], t.dtheta[j]);
    t.ox[j] = w[0];
    t.oy[j] = w[1];
    t.oz[j] = w[2];
  }
  t.dox = detail::central_diff(t.ox, t.step, t.closed, 0.0);
  t.doy = detail::central_diff(t.oy, t.step, t.closed, 0.0);
  t.doz = detail::central_diff(t.oz, t.step, t.closed, 0.0);
  return t;
}

}  // namespace raceline

#endif  // RACELINE_TRACK_HPP_
