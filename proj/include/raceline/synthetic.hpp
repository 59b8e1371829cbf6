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

#ifndef RACELINE_SYNTHETIC_HPP_
#define RACELINE_SYNTHETIC_HPP_

#include <cmath>
#include <vector>

#include "raceline/track.hpp"

namespace raceline {

// Flat circle of given radius, driven counter-clockwise.
inline RawTrackInput synthetic_circle(double radius, double half_width, double sample_ds = 5.0) {
  RawTrackInput raw;
  raw.closed = true;
  const int m = std::max(16, static_cast<int>(2.0 * kPi * radius / sample_ds));
  for (int i = 0; i < m; ++i) {
    const double u = 2.0 * kPi * i / m;
    RawTrackInput::Sample s;
    s.x = radius * std::cos(u);
    s.y = radius * std::sin(u);
    s.z = 0.0;
    s.w_left = half_width;
    s.w_right = half_width;
    raw.samples.push_back(s);
  }
  return raw;
}

// Stadium oval: two straights joined by two 180 degree turns, banked inward.
// Counter-clockwise, so turns are left-handed and banking angles are
// negative in the turns. Banking ramps in and out inside each turn.
inline RawTrackInput synthetic_oval(double straight_len, double turn_radius, double bank_deg,
                                    double half_width, double sample_ds = 4.0) {
  RawTrackInput raw;
  raw.closed = true;
  raw.has_angles = true;
  const double bank = bank_deg * kPi / 180.0;
  const double arc = kPi * turn_radius;
  const double total = 2.0 * straight_len + 2.0 * arc;
  const int m = std::max(64, static_cast<int>(total / sample_ds));
  const double ramp_frac = 0.25;  // banking transition as fraction of the arc

  auto smoothstep = [](double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
  };
  auto bank_profile = [&](double q) {
    // q in [0, 1] along a turn
    if (q < ramp_frac) return smoothstep(q / ramp_frac);
    if (q > 1.0 - ramp_frac) return smoothstep((1.0 - q) / ramp_frac);
    return 1.0;
  };

  for (int i = 0; i < m; ++i) {
    const double s = total * i / m;
    RawTrackInput::Sample p;
    p.w_left = half_width;
    p.w_right = half_width;
    p.mu = 0.0;
    if (s < straight_len) {
      p.x = s;
      p.y = -turn_radius;
      p.theta = 0.0;
      p.phi = 0.0;
    } else if (s < straight_len + arc) {
      const double q = (s - straight_len) / arc;
      const double ang = kPi * q;
      p.x = straight_len + turn_radius * std::sin(ang);
      p.y = -turn_radius * std::cos(ang);
      p.theta = ang;
      p.phi = -bank * bank_profile(q);
    } else if (s < 2.0 * straight_len + arc) {
      const double q = s - straight_len - arc;
      p.x = straight_len - q;
      p.y = turn_radius;
      p.theta = kPi;
      p.phi = 0.0;
    } else {
      const double q = (s - 2.0 * straight_len - arc) / arc;
      const double ang = kPi + kPi * q;
      p.x = turn_radius * std::sin(ang);
      p.y = -turn_radius * std::cos(ang);
      p.theta = ang;
      p.phi = -bank * bank_profile(q);
    }
    p.z = 0.0;
    raw.samples.push_back(p);
  }
  return raw;
}

struct CircuitParams {
  double rx = 280.0;        // base half-extent x [m]
  double ry = 160.0;        // base half-extent y [m]
  double wobble = 55.0;     // third-harmonic wobble amplitude [m]
  double bank_deg = 10.0;   // max banking magnitude [deg]
  double z_amp = 6.0;       // elevation amplitude [m]
  double half_width = 6.0;  // lateral half width [m]
  double sample_ds = 4.0;
};

// Curvy closed circuit with alternating banking and elevation changes.
// The wobble term flips the curvature sign along the lap, banking follows
// the local curvature, and two elevation harmonics add crests and dips.
inline RawTrackInput synthetic_circuit(const CircuitParams& prm = {}) {
  RawTrackInput raw;
  raw.closed = true;
  raw.has_banking = true;
  const int dense = 4096;
  std::vector<double> xs(dense), ys(dense), zs(dense), kappa(dense), cum(dense + 1, 0.0);
  for (int i = 0; i < dense; ++i) {
    const double u = 2.0 * kPi * i / dense;
    xs[i] = prm.rx * std::cos(u) + 0.5 * prm.wobble * std::cos(2.0 * u);
    ys[i] = prm.ry * std::sin(u) + prm.wobble * std::sin(3.0 * u);
    zs[i] = prm.z_amp * (std::sin(2.0 * u + 0.8) + 0.5 * std::sin(3.0 * u));
  }
  auto at = [&](int i) { return (i % dense + dense) % dense; };
  for (int i = 0; i < dense; ++i) {
    const double du = 2.0 * kPi / dense;
    const double dx = (xs[at(i + 1)] - xs[at(i - 1)]) / (2.0 * du);
    const double dy = (ys[at(i + 1)] - ys[at(i - 1)]) / (2.0 * du);
    const double ddx = (xs[at(i + 1)] - 2.0 * xs[i] + xs[at(i - 1)]) / (du * du);
    const double ddy = (ys[at(i + 1)] - 2.0 * ys[i] + ys[at(i - 1)]) / (du * du);
    const double sp = std::hypot(dx, dy);
    kappa[i] = (dx * ddy - dy * ddx) / (sp * sp * sp);
  }
  for (int i = 0; i < dense; ++i) {
    const double d = std::hypot(xs[at(i + 1)] - xs[i],
                                std::hypot(ys[at(i + 1)] - ys[i], zs[at(i + 1)] - zs[i]));
    cum[i + 1] = cum[i] + d;
  }
  const double total = cum[dense];
  const int m = std::max(64, static_cast<int>(total / prm.sample_ds));
  const double bank = prm.bank_deg * kPi / 180.0;
  const double kappa_ref = 1.0 / 90.0;  // curvature at which banking saturates
  int idx = 0;
  for (int i = 0; i < m; ++i) {
    const double target = total * i / m;
    while (idx + 1 < dense && cum[idx + 1] < target) ++idx;
    RawTrackInput::Sample s;
    s.x = xs[idx];
    s.y = ys[idx];
    s.z = zs[idx];
    s.w_left = prm.half_width;
    s.w_right = prm.half_width;
    s.phi = -bank * std::tanh(kappa[idx] / kappa_ref);
    raw.samples.push_back(s);
  }
  return raw;
}

// Open straight ramp with constant grade angle (zyx convention: positive mu
// pitches the tangent downward).
inline RawTrackInput synthetic_ramp(double length, double grade_mu, double half_width,
                                    double sample_ds = 5.0) {
  RawTrackInput raw;
  raw.closed = false;
  raw.has_angles = true;
  const int m = std::max(8, static_cast<int>(length / sample_ds));
  for (int i = 0; i <= m; ++i) {
    const double s = length * i / m;
    RawTrackInput::Sample p;
    p.x = s * std::cos(grade_mu);
    p.y = 0.0;
    p.z = -s * std::sin(grade_mu);
    p.w_left = half_width;
    p.w_right = half_width;
    p.theta = 0.0;
    p.mu = grade_mu;
    p.phi = 0.0;
    raw.samples.push_back(p);
  }
  return raw;
}

// Open helix (positions only; angles estimated by the builder).
inline RawTrackInput synthetic_helix(double radius, double pitch_rate, double turns,
                                     double half_width, double sample_ds = 2.0) {
  RawTrackInput raw;
  raw.closed = false;
  const double t_end = 2.0 * kPi * turns;
  const double speed = std::hypot(radius, pitch_rate);
  const int m = std::max(16, static_cast<int>(t_end * speed / sample_ds));
  for (int i = 0; i <= m; ++i) {
    const double t = t_end * i / m;
    RawTrackInput::Sample p;
    p.x = radius * std::cos(t);
    p.y = radius * std::sin(t);
    p.z = pitch_rate * t;
    p.w_left = half_width;
    p.w_right = half_width;
    raw.samples.push_back(p);
  }
  return raw;
}

}  // namespace raceline

#endif  // RACELINE_SYNTHETIC_HPP_
