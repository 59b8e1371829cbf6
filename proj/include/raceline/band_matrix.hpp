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

#ifndef RACELINE_BAND_MATRIX_HPP_
#define RACELINE_BAND_MATRIX_HPP_

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace raceline {

// Symmetric banded matrix with an optional dense border block:
//
//   K = [ B  V^T ]      B: n_core x n_core, half-bandwidth hbw
//       [ V  C   ]      V: n_border x n_core (dense rows), C: n_border^2
//
// Factorized as L D L^T without pivoting. Intended for symmetric
// quasidefinite KKT matrices (positive diagonal on the primal block,
// negative on the dual block), where this factorization exists for any
// ordering. Multiple-shooting KKT systems are banded with stage-wise
// interleaving; a cyclic closure constraint lands in the border.
class BandBorderLDLT {
 public:
  void resize(int n_core, int half_bw, int n_border) {
    n_ = n_core;
    hbw_ = half_bw;
    nb_ = n_border;
    band_.assign(static_cast<size_t>(n_) * (hbw_ + 1), 0.0);
    diag_.assign(n_, 0.0);
    border_ = Eigen::MatrixXd::Zero(nb_, n_);
    corner_ = Eigen::MatrixXd::Zero(nb_, nb_);
  }

  int core_size() const { return n_; }
  int border_size() const { return nb_; }
  int size() const { return n_ + nb_; }
  int half_bandwidth() const { return hbw_; }

  void set_zero() {
    std::fill(band_.begin(), band_.end(), 0.0);
    border_.setZero();
    corner_.setZero();
  }

  // Access to A(i, j) of the core, i >= j, i - j <= hbw.
  double& band(int i, int j) { return band_[static_cast<size_t>(j) * (hbw_ + 1) + (i - j)]; }
  double band(int i, int j) const { return band_[static_cast<size_t>(j) * (hbw_ + 1) + (i - j)]; }

  // Adds to A(i, j) with (i, j) in any order within the core band.
  void add(int i, int j, double v) {
    if (i < j) std::swap(i, j);
    band_[static_cast<size_t>(j) * (hbw_ + 1) + (i - j)] += v;
  }

  void add_border(int r, int j, double v) { border_(r, j) += v; }
  void add_corner(int r, int c, double v) { corner_(r, c) += v; }

  // Returns false on numerical breakdown (zero pivot).
  bool factorize() {
    const int ld = hbw_ + 1;
    for (int j = 0; j < n_; ++j) {
      const int kmin = std::max(0, j - hbw_);
      double dj = band_[static_cast<size_t>(j) * ld];
      for (int k = kmin; k < j; ++k) {
        const double l = band_[static_cast<size_t>(k) * ld + (j - k)];
        dj -= l * l * diag_[k];
      }
      if (std::abs(dj) < 1e-300 || !std::isfinite(dj)) return false;
      diag_[j] = dj;
      const int imax = std::min(n_ - 1, j + hbw_);
      for (int i = j + 1; i <= imax; ++i) {
        double s = band_[static_cast<size_t>(j) * ld + (i - j)];
        const int k0 = std::max(kmin, i - hbw_);
        for (int k = k0; k < j; ++k) {
          s -= band_[static_cast<size_t>(k) * ld + (i - k)] *
               band_[static_cast<size_t>(k) * ld + (j - k)] * diag_[k];
        }
        band_[static_cast<size_t>(j) * ld + (i - j)] = s / dj;
      }
    }
    if (nb_ > 0) {
      // W = B^{-1} V^T via banded solves, then Schur complement on the border.
      w_ = border_.transpose();
      for (int c = 0; c < nb_; ++c) {
        Eigen::VectorXd col = w_.col(c);
        core_solve(col);
        w_.col(c) = col;
      }
      Eigen::MatrixXd schur = corner_ - border_ * w_;
      schur_ldlt_.compute(schur);
      if (schur_ldlt_.info() != Eigen::Success) return false;
    }
    return true;
  }

  // Solves K x = rhs in place; rhs has size n_core + n_border.
  void solve(Eigen::VectorXd& rhs) const {
    Eigen::VectorXd r1 = rhs.head(n_);
    core_solve(r1);
    if (nb_ > 0) {
      Eigen::VectorXd r2 = rhs.tail(nb_) - border_ * r1;
      Eigen::VectorXd x2 = schur_ldlt_.solve(r2);
      rhs.tail(nb_) = x2;
      rhs.head(n_) = r1 - w_ * x2;
    } else {
      rhs.head(n_) = r1;
    }
  }

  // Multiplies the assembled (unfactorized) matrix: y = K x. Only valid
  // before factorize(); used for iterative refinement.
  void multiply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    const int ld = hbw_ + 1;
    y.setZero(n_ + nb_);
    for (int j = 0; j < n_; ++j) {
      y[j] += band_[static_cast<size_t>(j) * ld] * x[j];
      const int imax = std::min(n_ - 1, j + hbw_);
      for (int i = j + 1; i <= imax; ++i) {
        const double a = band_[static_cast<size_t>(j) * ld + (i - j)];
        y[i] += a * x[j];
        y[j] += a * x[i];
      }
    }
    if (nb_ > 0) {
      y.head(n_) += border_.transpose() * x.tail(nb_);
      y.tail(nb_) += border_ * x.head(n_) + corner_ * x.tail(nb_);
    }
  }

 private:
  void core_solve(Eigen::VectorXd& x) const {
    const int ld = hbw_ + 1;
    for (int j = 0; j < n_; ++j) {
      const double xj = x[j];
      const int imax = std::min(n_ - 1, j + hbw_);
      for (int i = j + 1; i <= imax; ++i)
        x[i] -= band_[static_cast<size_t>(j) * ld + (i - j)] * xj;
    }
    for (int j = 0; j < n_; ++j) x[j] /= diag_[j];
    for (int j = n_ - 1; j >= 0; --j) {
      double s = x[j];
      const int imax = std::min(n_ - 1, j + hbw_);
      for (int i = j + 1; i <= imax; ++i)
        s -= band_[static_cast<size_t>(j) * ld + (i - j)] * x[i];
      x[j] = s;
    }
  }

  int n_ = 0, hbw_ = 0, nb_ = 0;
  std::vector<double> band_;  // column j holds A(j..j+hbw, j)
  std::vector<double> diag_;  // D after factorization
  Eigen::MatrixXd border_, corner_, w_;
  Eigen::LDLT<Eigen::MatrixXd> schur_ldlt_;
};

}  // namespace raceline

#endif  // RACELINE_BAND_MATRIX_HPP_
