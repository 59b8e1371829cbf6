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

#ifndef RACELINE_AUTODIFF_HPP_
#define RACELINE_AUTODIFF_HPP_

#include <array>
#include <cmath>
#include <cstddef>

namespace raceline {

// Forward-mode scalar carrying N partial derivatives. Model kernels are
// templated on the scalar type, so the same code path produces values
// (double) and exact first derivatives (Dual<N>).
template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) { d.fill(0.0); }  // NOLINT(runtime/explicit)
  Dual(double value, int seed_index) : v(value) {
    d.fill(0.0);
    d[seed_index] = 1.0;
  }

  static constexpr int kNumDerivs = N;

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    for (int i = 0; i < N; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
    v *= inv;
    return *this;
  }
};

template <int N>
inline Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N>
inline Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N>
inline Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <int N>
inline Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }

template <int N>
inline Dual<N> operator+(Dual<N> a, double b) { a.v += b; return a; }
template <int N>
inline Dual<N> operator+(double a, Dual<N> b) { b.v += a; return b; }
template <int N>
inline Dual<N> operator-(Dual<N> a, double b) { a.v -= b; return a; }
template <int N>
inline Dual<N> operator-(double a, const Dual<N>& b) {
  Dual<N> r;
  r.v = a - b.v;
  for (int i = 0; i < N; ++i) r.d[i] = -b.d[i];
  return r;
}
template <int N>
inline Dual<N> operator*(Dual<N> a, double b) {
  a.v *= b;
  for (int i = 0; i < N; ++i) a.d[i] *= b;
  return a;
}
template <int N>
inline Dual<N> operator*(double a, Dual<N> b) { return b * a; }
template <int N>
inline Dual<N> operator/(Dual<N> a, double b) { return a * (1.0 / b); }
template <int N>
inline Dual<N> operator/(double a, const Dual<N>& b) {
  Dual<N> r;
  const double inv = 1.0 / b.v;
  r.v = a * inv;
  const double s = -a * inv * inv;
  for (int i = 0; i < N; ++i) r.d[i] = s * b.d[i];
  return r;
}
template <int N>
inline Dual<N> operator-(const Dual<N>& a) { return Dual<N>(0.0) - a; }

template <int N>
inline bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N>
inline bool operator<(const Dual<N>& a, double b) { return a.v < b; }
template <int N>
inline bool operator<(double a, const Dual<N>& b) { return a < b.v; }
template <int N>
inline bool operator>(const Dual<N>& a, double b) { return a.v > b; }
template <int N>
inline bool operator>(const Dual<N>& a, const Dual<N>& b) { return a.v > b.v; }

template <int N>
inline Dual<N> chain(double f, double df, const Dual<N>& x) {
  Dual<N> r;
  r.v = f;
  for (int i = 0; i < N; ++i) r.d[i] = df * x.d[i];
  return r;
}

template <int N>
inline Dual<N> sin(const Dual<N>& x) { return chain(std::sin(x.v), std::cos(x.v), x); }
template <int N>
inline Dual<N> cos(const Dual<N>& x) { return chain(std::cos(x.v), -std::sin(x.v), x); }
template <int N>
inline Dual<N> tan(const Dual<N>& x) {
  const double t = std::tan(x.v);
  return chain(t, 1.0 + t * t, x);
}
template <int N>
inline Dual<N> asin(const Dual<N>& x) {
  return chain(std::asin(x.v), 1.0 / std::sqrt(1.0 - x.v * x.v), x);
}
template <int N>
inline Dual<N> atan(const Dual<N>& x) {
  return chain(std::atan(x.v), 1.0 / (1.0 + x.v * x.v), x);
}
template <int N>
inline Dual<N> exp(const Dual<N>& x) {
  const double e = std::exp(x.v);
  return chain(e, e, x);
}
template <int N>
inline Dual<N> log(const Dual<N>& x) { return chain(std::log(x.v), 1.0 / x.v, x); }
template <int N>
inline Dual<N> sqrt(const Dual<N>& x) {
  const double s = std::sqrt(x.v);
  return chain(s, 0.5 / s, x);
}

template <int N>
inline Dual<N> atan2(const Dual<N>& y, const Dual<N>& x) {
  Dual<N> r;
  r.v = std::atan2(y.v, x.v);
  const double q = 1.0 / (x.v * x.v + y.v * y.v);
  for (int i = 0; i < N; ++i) r.d[i] = q * (x.v * y.d[i] - y.v * x.d[i]);
  return r;
}

// pow for non-negative base; exponent may itself carry derivatives. The
// exponent sensitivity x^e ln(x) tends to 0 for x -> 0 with e > 0.
template <int N>
inline Dual<N> pow(const Dual<N>& x, const Dual<N>& e) {
  Dual<N> r;
  const double p = std::pow(x.v, e.v);
  r.v = p;
  const double dx = e.v * std::pow(x.v, e.v - 1.0);
  const double de = x.v > 0.0 ? p * std::log(x.v) : 0.0;
  for (int i = 0; i < N; ++i) r.d[i] = dx * x.d[i] + de * e.d[i];
  return r;
}
template <int N>
inline Dual<N> pow(const Dual<N>& x, double e) {
  return chain(std::pow(x.v, e), e * std::pow(x.v, e - 1.0), x);
}

template <int N>
inline Dual<N> max(const Dual<N>& a, const Dual<N>& b) { return a.v >= b.v ? a : b; }
template <int N>
inline Dual<N> min(const Dual<N>& a, const Dual<N>& b) { return a.v <= b.v ? a : b; }
template <int N>
inline Dual<N> max(const Dual<N>& a, double b) { return a.v >= b ? a : Dual<N>(b); }
template <int N>
inline Dual<N> min(const Dual<N>& a, double b) { return a.v <= b ? a : Dual<N>(b); }

// Smoothed absolute value, C^inf for kappa > 0.
template <int N>
inline Dual<N> smooth_abs(const Dual<N>& x, double kappa) {
  return sqrt(x * x + kappa * kappa);
}
inline double smooth_abs(double x, double kappa) { return std::sqrt(x * x + kappa * kappa); }

inline double value_of(double x) { return x; }
template <int N>
inline double value_of(const Dual<N>& x) { return x.v; }

using std::asin;
using std::atan;
using std::atan2;
using std::cos;
using std::exp;
using std::log;
using std::max;
using std::min;
using std::pow;
using std::sin;
using std::sqrt;
using std::tan;

}  // namespace raceline

#endif  // RACELINE_AUTODIFF_HPP_
