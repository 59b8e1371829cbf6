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

#ifndef RACELINE_NLP_HPP_
#define RACELINE_NLP_HPP_

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "raceline/band_matrix.hpp"

namespace raceline {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// One constraint row with a contiguous column window plus an optional single
// extra column (used by the elastic relaxation).
struct JacRow {
  int col0 = 0;
  std::vector<double> a;
  int extra_col = -1;
  double extra_val = 0.0;

  double dot(const Eigen::VectorXd& x) const {
    double s = 0.0;
    for (size_t k = 0; k < a.size(); ++k) s += a[k] * x[col0 + static_cast<int>(k)];
    if (extra_col >= 0) s += extra_val * x[extra_col];
    return s;
  }
  void axpy(double alpha, Eigen::VectorXd& y) const {
    for (size_t k = 0; k < a.size(); ++k) y[col0 + static_cast<int>(k)] += alpha * a[k];
    if (extra_col >= 0) y[extra_col] += alpha * extra_val;
  }
};

// Symmetric Hessian contribution on the variable window [i0, i0 + m.rows()).
struct HessBlock {
  int i0 = 0;
  Eigen::MatrixXd m;
};

// Interleaving of variables and equality rows in the KKT ordering. Stage-wise
// problems list alternating variable/equality segments to keep the KKT
// banded; an empty layout means [all variables][all equalities].
struct KktLayout {
  struct Seg {
    bool is_eq = false;
    int first = 0;
    int count = 0;
  };
  std::vector<Seg> segs;
};

class NlpProblem {
 public:
  virtual ~NlpProblem() = default;
  virtual int num_vars() const = 0;
  virtual int num_eq() const { return 0; }
  virtual int num_ineq() const { return 0; }
  virtual void initial_point(Eigen::VectorXd* x) const = 0;
  virtual void bounds(Eigen::VectorXd* lo, Eigen::VectorXd* hi) const {
    lo->setConstant(num_vars(), -kInf);
    hi->setConstant(num_vars(), kInf);
  }
  // Gradient/Jacobian pointers may be null (value-only evaluation). A
  // non-null grad is pre-sized to num_vars().
  virtual double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const = 0;
  virtual void eq_constraints(const Eigen::VectorXd& x, Eigen::VectorXd* c,
                              std::vector<JacRow>* jac) const {
    (void)x;
    if (c) c->resize(0);
    if (jac) jac->clear();
  }
  // Inequalities in the form c(x) <= 0.
  virtual void ineq_constraints(const Eigen::VectorXd& x, Eigen::VectorXd* c,
                                std::vector<JacRow>* jac) const {
    (void)x;
    if (c) c->resize(0);
    if (jac) jac->clear();
  }
  // Hessian of the Lagrangian as non-overlapping blocks; return false to use
  // the quasi-Newton path. z covers only the problem's inequality rows.
  virtual bool lagrangian_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& y_eq,
                                  const Eigen::VectorXd& z_ineq,
                                  std::vector<HessBlock>* blocks) const {
    (void)x;
    (void)y_eq;
    (void)z_ineq;
    (void)blocks;
    return false;
  }
  virtual KktLayout kkt_layout() const { return {}; }
  virtual std::vector<int> border_eq_rows() const { return {}; }
};

enum class SolveStatus {
  kSuccess,
  kMaxIterations,
  kDeadline,
  kLineSearchStall,
  kQpFailure,
  kEvalError,
};

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kSuccess: return "success";
    case SolveStatus::kMaxIterations: return "max_iterations";
    case SolveStatus::kDeadline: return "deadline";
    case SolveStatus::kLineSearchStall: return "line_search_stall";
    case SolveStatus::kQpFailure: return "qp_failure";
    case SolveStatus::kEvalError: return "eval_error";
  }
  return "unknown";
}

inline bool is_incomplete(SolveStatus s) {
  return s == SolveStatus::kMaxIterations || s == SolveStatus::kDeadline ||
         s == SolveStatus::kLineSearchStall;
}

struct SqpSettings {
  int max_iter = 100;
  double kkt_tol = 1e-8;
  double constraint_tol = 1e-9;
  bool use_exact_hessian = true;
  double hessian_floor = 1e-7;
  int qp_max_iter = 100;
  double qp_tol = 1e-11;
  int line_search_max = 30;
  std::function<bool()> should_stop;  // cooperative deadline, checked between iterations
  bool verbose = false;
};

struct SqpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y_eq;
  Eigen::VectorXd z_ineq;           // problem inequality rows
  Eigen::VectorXd z_lower, z_upper; // bound multipliers, full variable length
  SolveStatus status = SolveStatus::kEvalError;
  int iterations = 0;
  double objective = 0.0;
  double kkt_residual = kInf;
  double constraint_violation = kInf;
  int elastic_steps = 0;
};

// Stationarity residual recomputed from scratch at (x, y, z, bounds).
inline double kkt_residual(const NlpProblem& p, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& y_eq, const Eigen::VectorXd& z_ineq,
                           const Eigen::VectorXd& z_lower, const Eigen::VectorXd& z_upper) {
  Eigen::VectorXd grad(p.num_vars());
  p.objective(x, &grad);
  Eigen::VectorXd c;
  std::vector<JacRow> je, ji;
  p.eq_constraints(x, &c, &je);
  for (size_t r = 0; r < je.size(); ++r) je[r].axpy(y_eq[r], grad);
  p.ineq_constraints(x, &c, &ji);
  for (size_t r = 0; r < ji.size(); ++r) ji[r].axpy(z_ineq[r], grad);
  grad -= z_lower;
  grad += z_upper;
  return grad.lpNorm<Eigen::Infinity>();
}

// ---------------------------------------------------------------------------
// Convex QP subproblem, solved by a primal-dual interior-point method on the
// banded (plus border) quasidefinite KKT system.

struct QpData {
  int n = 0;
  std::vector<HessBlock> hess;
  Eigen::VectorXd g;
  std::vector<JacRow> eq_rows;
  Eigen::VectorXd eq_rhs;
  std::vector<int> border_rows;  // indices into eq_rows
  std::vector<JacRow> ineq_rows;  // a^T d <= rhs
  Eigen::VectorXd ineq_rhs;
  KktLayout layout;
};

struct QpResult {
  Eigen::VectorXd x, y, z;
  bool ok = false;
  int iters = 0;
  std::string message;
};

namespace detail {

struct KktIndex {
  std::vector<int> var_pos, eq_pos;  // -1 for border rows
  int n_core = 0;
  int hbw = 0;
};

inline KktIndex build_kkt_index(const QpData& qp) {
  KktIndex ix;
  const int n = qp.n;
  const int me = static_cast<int>(qp.eq_rows.size());
  ix.var_pos.assign(n, -1);
  ix.eq_pos.assign(me, -1);
  std::vector<bool> is_border(me, false);
  for (int r : qp.border_rows) is_border[r] = true;
  int pos = 0;
  auto place_var = [&](int i) {
    if (ix.var_pos[i] < 0) ix.var_pos[i] = pos++;
  };
  auto place_eq = [&](int r) {
    if (!is_border[r] && ix.eq_pos[r] < 0) ix.eq_pos[r] = pos++;
  };
  for (const auto& seg : qp.layout.segs) {
    for (int k = 0; k < seg.count; ++k) {
      if (seg.is_eq) place_eq(seg.first + k);
      else place_var(seg.first + k);
    }
  }
  for (int i = 0; i < n; ++i) place_var(i);
  for (int r = 0; r < me; ++r) place_eq(r);
  ix.n_core = pos;

  int hbw = 0;
  auto span_row = [&](const JacRow& row, int own_pos) {
    int lo = own_pos >= 0 ? own_pos : std::numeric_limits<int>::max();
    int hi = own_pos >= 0 ? own_pos : std::numeric_limits<int>::min();
    for (size_t k = 0; k < row.a.size(); ++k) {
      const int p = ix.var_pos[row.col0 + static_cast<int>(k)];
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    if (row.extra_col >= 0) {
      const int p = ix.var_pos[row.extra_col];
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    return hi - lo;
  };
  for (const auto& b : qp.hess) {
    int lo = std::numeric_limits<int>::max(), hi = std::numeric_limits<int>::min();
    for (int k = 0; k < b.m.rows(); ++k) {
      const int p = ix.var_pos[b.i0 + k];
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    hbw = std::max(hbw, hi - lo);
  }
  for (size_t r = 0; r < qp.eq_rows.size(); ++r) {
    if (is_border[r]) continue;
    hbw = std::max(hbw, span_row(qp.eq_rows[r], ix.eq_pos[r]));
  }
  for (const auto& row : qp.ineq_rows) hbw = std::max(hbw, span_row(row, -1));
  ix.hbw = std::min(hbw, std::max(0, ix.n_core - 1));
  return ix;
}

inline void hess_multiply(const std::vector<HessBlock>& hess, const Eigen::VectorXd& x,
                          Eigen::VectorXd& y) {
  y.setZero(x.size());
  for (const auto& b : hess) {
    const int k = static_cast<int>(b.m.rows());
    y.segment(b.i0, k) += b.m * x.segment(b.i0, k);
  }
}

}  // namespace detail

// Interior-point solve of the convex QP
//   min 0.5 d'Hd + g'd   s.t.  A_e d = b_e,  A_i d <= b_i.
inline QpResult solve_qp(const QpData& qp, int max_iter = 100, double tol = 1e-11) {
  using Eigen::VectorXd;
  QpResult res;
  const int n = qp.n;
  const int me = static_cast<int>(qp.eq_rows.size());
  const int mi = static_cast<int>(qp.ineq_rows.size());
  const int nb = static_cast<int>(qp.border_rows.size());
  const detail::KktIndex ix = detail::build_kkt_index(qp);
  std::vector<int> border_of(me, -1);
  for (int k = 0; k < nb; ++k) border_of[qp.border_rows[k]] = k;

  VectorXd x = VectorXd::Zero(n);
  VectorXd y = VectorXd::Zero(me);
  VectorXd z = VectorXd::Ones(mi);
  VectorXd s = VectorXd::Ones(mi);

  const double scale = 1.0 + qp.g.lpNorm<Eigen::Infinity>();
  const double tol_feas = tol * scale * 10.0;
  const double tol_mu = tol * scale;

  BandBorderLDLT kkt_plain, kkt_fact;
  kkt_plain.resize(ix.n_core, ix.hbw, nb);
  double delta = 1e-12 * scale;

  VectorXd hx(n), rd(n), re(me), ri(mi);
  auto residuals = [&]() {
    detail::hess_multiply(qp.hess, x, hx);
    rd = hx + qp.g;
    for (int r = 0; r < me; ++r) qp.eq_rows[r].axpy(y[r], rd);
    for (int r = 0; r < mi; ++r) qp.ineq_rows[r].axpy(z[r], rd);
    for (int r = 0; r < me; ++r) re[r] = qp.eq_rows[r].dot(x) - qp.eq_rhs[r];
    for (int r = 0; r < mi; ++r) ri[r] = qp.ineq_rows[r].dot(x) + s[r] - qp.ineq_rhs[r];
  };

  auto assemble = [&]() {
    kkt_plain.set_zero();
    for (const auto& b : qp.hess) {
      const int k = static_cast<int>(b.m.rows());
      for (int i = 0; i < k; ++i)
        for (int j = 0; j <= i; ++j)
          kkt_plain.add(ix.var_pos[b.i0 + i], ix.var_pos[b.i0 + j], b.m(i, j));
    }
    for (int r = 0; r < mi; ++r) {
      const auto& row = qp.ineq_rows[r];
      const double w = z[r] / s[r];
      const int len = static_cast<int>(row.a.size());
      const int total = len + (row.extra_col >= 0 ? 1 : 0);
      for (int aa = 0; aa < total; ++aa) {
        const int ca = aa < len ? row.col0 + aa : row.extra_col;
        const double va = aa < len ? row.a[aa] : row.extra_val;
        for (int bb = 0; bb <= aa; ++bb) {
          const int cb = bb < len ? row.col0 + bb : row.extra_col;
          const double vb = bb < len ? row.a[bb] : row.extra_val;
          const int pa = ix.var_pos[ca], pb = ix.var_pos[cb];
          if (pa == pb && aa != bb) {
            kkt_plain.add(pa, pb, 2.0 * w * va * vb);
          } else {
            kkt_plain.add(pa, pb, w * va * vb);
          }
        }
      }
    }
    for (int r = 0; r < me; ++r) {
      const auto& row = qp.eq_rows[r];
      const int len = static_cast<int>(row.a.size());
      if (border_of[r] < 0) {
        const int pr = ix.eq_pos[r];
        for (int k = 0; k < len; ++k) kkt_plain.add(pr, ix.var_pos[row.col0 + k], row.a[k]);
        if (row.extra_col >= 0) kkt_plain.add(pr, ix.var_pos[row.extra_col], row.extra_val);
      } else {
        const int br = border_of[r];
        for (int k = 0; k < len; ++k)
          kkt_plain.add_border(br, ix.var_pos[row.col0 + k], row.a[k]);
        if (row.extra_col >= 0) kkt_plain.add_border(br, ix.var_pos[row.extra_col], row.extra_val);
      }
    }
  };

  // Scatter/gather between problem and KKT ordering.
  VectorXd rhs(ix.n_core + nb), sol(ix.n_core + nb), resid(ix.n_core + nb), corr(ix.n_core + nb);
  auto kkt_solve = [&](const VectorXd& rx, const VectorXd& ry, VectorXd& dx, VectorXd& dy) {
    rhs.setZero();
    for (int i = 0; i < n; ++i) rhs[ix.var_pos[i]] = rx[i];
    for (int r = 0; r < me; ++r) {
      if (border_of[r] < 0) rhs[ix.eq_pos[r]] = ry[r];
      else rhs[ix.n_core + border_of[r]] = ry[r];
    }
    sol = rhs;
    kkt_fact.solve(sol);
    for (int pass = 0; pass < 2; ++pass) {
      kkt_plain.multiply(sol, resid);
      resid = rhs - resid;
      corr = resid;
      kkt_fact.solve(corr);
      sol += corr;
    }
    dx.resize(n);
    dy.resize(me);
    for (int i = 0; i < n; ++i) dx[i] = sol[ix.var_pos[i]];
    for (int r = 0; r < me; ++r)
      dy[r] = border_of[r] < 0 ? sol[ix.eq_pos[r]] : sol[ix.n_core + border_of[r]];
  };

  auto max_step = [](const VectorXd& v, const VectorXd& dv) {
    double a = 1.0;
    for (int i = 0; i < v.size(); ++i)
      if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
    return a;
  };

  VectorXd rx(n), ry(me), dx, dy, ds(mi), dz(mi), dxa, dya, dsa(mi), dza(mi), rc(mi);
  for (int it = 0; it < max_iter; ++it) {
    residuals();
    const double mu = mi > 0 ? s.dot(z) / mi : 0.0;
    const double pf = std::max(me > 0 ? re.lpNorm<Eigen::Infinity>() : 0.0,
                               mi > 0 ? ri.lpNorm<Eigen::Infinity>() : 0.0);
    if (rd.lpNorm<Eigen::Infinity>() <= tol_feas && pf <= tol_feas && mu <= tol_mu) {
      res.ok = true;
      res.iters = it;
      break;
    }

    assemble();
    kkt_fact = kkt_plain;
    bool factored = false;
    double d = delta;
    for (int attempt = 0; attempt < 4 && !factored; ++attempt) {
      if (attempt > 0) {
        kkt_fact = kkt_plain;
        d *= 1000.0;
      }
      for (int i = 0; i < n; ++i) kkt_fact.add(ix.var_pos[i], ix.var_pos[i], d);
      for (int r = 0; r < me; ++r) {
        if (border_of[r] < 0) kkt_fact.add(ix.eq_pos[r], ix.eq_pos[r], -d);
        else kkt_fact.add_corner(border_of[r], border_of[r], -d);
      }
      factored = kkt_fact.factorize();
    }
    if (!factored) {
      res.message = "KKT factorization breakdown";
      res.iters = it;
      break;
    }

    // Affine predictor.
    rc = s.cwiseProduct(z);
    rx = -rd;
    for (int r = 0; r < mi; ++r) {
      const double t = rc[r] / s[r] - (z[r] / s[r]) * ri[r];
      qp.ineq_rows[r].axpy(t, rx);
    }
    ry = -re;
    kkt_solve(rx, ry, dxa, dya);
    for (int r = 0; r < mi; ++r) {
      dsa[r] = -ri[r] - qp.ineq_rows[r].dot(dxa);
      dza[r] = -(rc[r] + z[r] * dsa[r]) / s[r];
    }
    double sigma = 0.0;
    if (mi > 0 && mu > 0.0) {
      const double ap = max_step(s, dsa), ad = max_step(z, dza);
      const double mu_aff = (s + ap * dsa).dot(z + ad * dza) / mi;
      sigma = std::pow(mu_aff / mu, 3.0);
      sigma = std::clamp(sigma, 0.0, 0.99);
    }

    // Corrector.
    for (int r = 0; r < mi; ++r) rc[r] = s[r] * z[r] + dsa[r] * dza[r] - sigma * mu;
    rx = -rd;
    for (int r = 0; r < mi; ++r) {
      const double t = rc[r] / s[r] - (z[r] / s[r]) * ri[r];
      qp.ineq_rows[r].axpy(t, rx);
    }
    kkt_solve(rx, ry, dx, dy);
    for (int r = 0; r < mi; ++r) {
      ds[r] = -ri[r] - qp.ineq_rows[r].dot(dx);
      dz[r] = -(rc[r] + z[r] * ds[r]) / s[r];
    }
    double ap = 1.0, ad = 1.0;
    if (mi > 0) {
      ap = std::min(1.0, 0.995 * max_step(s, ds));
      ad = std::min(1.0, 0.995 * max_step(z, dz));
    }
    x += ap * dx;
    s += ap * ds;
    y += ad * dy;
    z += ad * dz;
    res.iters = it + 1;
    if (res.iters >= max_iter) res.message = "max interior-point iterations";
  }
  if (!res.ok && res.message.empty()) res.message = "max interior-point iterations";
  res.x = x;
  res.y = y;
  res.z = z;
  return res;
}

// l1 elastic relaxation: the first `n_relax` inequality rows each get a
// slack column placed near their stage, penalized linearly. Used when the
// plain QP cannot be solved (temporarily inconsistent linearizations).
// Remaining rows (typically variable bounds) stay hard.
inline QpData make_elastic(const QpData& qp, double nu, int n_relax = -1) {
  QpData e;
  const int n = qp.n;
  const int mi = static_cast<int>(qp.ineq_rows.size());
  if (n_relax < 0 || n_relax > mi) n_relax = mi;
  e.n = n + n_relax;
  e.hess = qp.hess;
  e.g.resize(e.n);
  e.g.head(n) = qp.g;
  e.g.tail(n_relax).setConstant(nu);
  e.eq_rows = qp.eq_rows;
  e.eq_rhs = qp.eq_rhs;
  e.border_rows = qp.border_rows;
  e.ineq_rows = qp.ineq_rows;
  e.ineq_rhs.resize(mi + n_relax);
  e.ineq_rhs.head(mi) = qp.ineq_rhs;
  for (int r = 0; r < n_relax; ++r) {
    e.ineq_rows[r].extra_col = n + r;
    e.ineq_rows[r].extra_val = -1.0;
    JacRow bound;
    bound.col0 = n + r;
    bound.a = {-1.0};
    e.ineq_rows.push_back(bound);
    e.ineq_rhs[mi + r] = 0.0;
  }
  // Insert the slack columns right after the segment holding their row's
  // last variable, keeping the KKT banded.
  KktLayout base = qp.layout;
  if (base.segs.empty()) {
    base.segs.push_back({false, 0, n});
    base.segs.push_back({true, 0, static_cast<int>(qp.eq_rows.size())});
  }
  std::vector<std::vector<int>> slack_after(base.segs.size());
  for (int r = 0; r < n_relax; ++r) {
    const auto& row = qp.ineq_rows[r];
    const int last = row.col0 + static_cast<int>(row.a.size()) - 1;
    int home = -1;
    for (size_t si = 0; si < base.segs.size(); ++si) {
      const auto& sg = base.segs[si];
      if (!sg.is_eq && last >= sg.first && last < sg.first + sg.count) home = static_cast<int>(si);
    }
    if (home < 0) home = static_cast<int>(base.segs.size()) - 1;
    slack_after[home].push_back(r);
  }
  for (size_t si = 0; si < base.segs.size(); ++si) {
    e.layout.segs.push_back(base.segs[si]);
    for (int r : slack_after[si]) e.layout.segs.push_back({false, n + r, 1});
  }
  return e;
}

// ---------------------------------------------------------------------------
// SQP driver

class SqpSolver {
 public:
  explicit SqpSolver(const SqpSettings& settings = {}) : st_(settings) {}

  SqpResult solve(const NlpProblem& p, const Eigen::VectorXd* x_start = nullptr) {
    using Eigen::VectorXd;
    const int n = p.num_vars();
    SqpResult res;
    VectorXd x(n);
    if (x_start) x = *x_start;
    else p.initial_point(&x);
    VectorXd lo(n), hi(n);
    p.bounds(&lo, &hi);
    for (int i = 0; i < n; ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);

    VectorXd grad(n), c_eq, c_in;
    std::vector<JacRow> j_eq, j_in;
    double f = 0.0;
    auto eval_full = [&]() {
      f = p.objective(x, &grad);
      p.eq_constraints(x, &c_eq, &j_eq);
      p.ineq_constraints(x, &c_in, &j_in);
    };
    eval_full();
    const int me = static_cast<int>(c_eq.size());
    const int mi = static_cast<int>(c_in.size());

    // Finite bounds become internal inequality rows after the problem rows.
    std::vector<int> lo_rows, hi_rows;
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(lo[i])) lo_rows.push_back(i);
      if (std::isfinite(hi[i])) hi_rows.push_back(i);
    }
    const int mb = static_cast<int>(lo_rows.size() + hi_rows.size());

    VectorXd y = VectorXd::Zero(me);
    VectorXd z = VectorXd::Zero(mi + mb);
    double nu = 1.0;  // merit penalty
    int stall = 0;

    QpData qp;
    qp.n = n;
    qp.layout = p.kkt_layout();
    qp.border_rows = p.border_eq_rows();

    auto viol1 = [&](const VectorXd& ce, const VectorXd& ci, const VectorXd& xx) {
      double v = 0.0;
      for (int r = 0; r < ce.size(); ++r) v += std::abs(ce[r]);
      for (int r = 0; r < ci.size(); ++r) v += std::max(0.0, ci[r]);
      for (int i : lo_rows) v += std::max(0.0, lo[i] - xx[i]);
      for (int i : hi_rows) v += std::max(0.0, xx[i] - hi[i]);
      return v;
    };
    auto viol_inf = [&](const VectorXd& ce, const VectorXd& ci, const VectorXd& xx) {
      double v = 0.0;
      for (int r = 0; r < ce.size(); ++r) v = std::max(v, std::abs(ce[r]));
      for (int r = 0; r < ci.size(); ++r) v = std::max(v, ci[r]);
      for (int i : lo_rows) v = std::max(v, lo[i] - xx[i]);
      for (int i : hi_rows) v = std::max(v, xx[i] - hi[i]);
      return v;
    };
    auto lagrangian_grad_norm = [&]() {
      VectorXd gl = grad;
      for (int r = 0; r < me; ++r) j_eq[r].axpy(y[r], gl);
      for (int r = 0; r < mi; ++r) j_in[r].axpy(z[r], gl);
      int k = mi;
      for (int i : lo_rows) gl[i] -= z[k++];
      for (int i : hi_rows) gl[i] += z[k++];
      return gl.lpNorm<Eigen::Infinity>();
    };

    Eigen::MatrixXd bfgs;
    VectorXd x_prev, gl_prev;
    bool have_prev = false;

    SolveStatus status = SolveStatus::kMaxIterations;
    int steps = 0;
    for (int it = 0; it < st_.max_iter; ++it) {
      if (st_.should_stop && st_.should_stop()) {
        status = SolveStatus::kDeadline;
        break;
      }
      const double kkt = lagrangian_grad_norm();
      const double vin = viol_inf(c_eq, c_in, x);
      if (kkt <= st_.kkt_tol && vin <= st_.constraint_tol) {
        status = SolveStatus::kSuccess;
        break;
      }

      // Hessian of the Lagrangian.
      qp.hess.clear();
      bool exact = false;
      if (st_.use_exact_hessian) {
        VectorXd z_prob = z.head(mi);
        exact = p.lagrangian_hessian(x, y, z_prob, &qp.hess);
      }
      if (exact) {
        for (auto& b : qp.hess) convexify(b.m, st_.hessian_floor);
      } else {
        if (!have_prev) {
          bfgs = Eigen::MatrixXd::Identity(n, n);
        }
        qp.hess.assign(1, HessBlock{0, bfgs});
      }

      // QP data at the current point.
      qp.g = grad;
      qp.eq_rows = j_eq;
      qp.eq_rhs = -c_eq;
      qp.ineq_rows = j_in;
      qp.ineq_rhs.resize(mi + mb);
      for (int r = 0; r < mi; ++r) qp.ineq_rhs[r] = -c_in[r];
      {
        int k = mi;
        for (int i : lo_rows) {
          JacRow row;
          row.col0 = i;
          row.a = {-1.0};
          qp.ineq_rows.push_back(row);
          qp.ineq_rhs[k++] = x[i] - lo[i];
        }
        for (int i : hi_rows) {
          JacRow row;
          row.col0 = i;
          row.a = {1.0};
          qp.ineq_rows.push_back(row);
          qp.ineq_rhs[k++] = hi[i] - x[i];
        }
      }

      QpResult q = solve_qp(qp, st_.qp_max_iter, st_.qp_tol);
      if (!q.ok) {
        const double nu_el = 100.0 * (1.0 + nu);
        QpData eq = make_elastic(qp, nu_el, mi);  // bounds stay hard
        q = solve_qp(eq, st_.qp_max_iter, std::max(st_.qp_tol, 1e-9));
        if (!q.ok) {
          status = SolveStatus::kQpFailure;
          break;
        }
        q.x.conservativeResize(n);
        q.z.conservativeResize(mi + mb);
        ++res.elastic_steps;
      }
      const VectorXd d = q.x.head(n);
      const double mult_max =
          std::max(q.y.size() ? q.y.lpNorm<Eigen::Infinity>() : 0.0,
                   q.z.size() ? q.z.head(mi + mb).lpNorm<Eigen::Infinity>() : 0.0);
      nu = std::max({nu, 1.2 * mult_max + 1e-3});

      // l1 merit line search with a watchdog on the KKT residual.
      const double v0 = viol1(c_eq, c_in, x);
      const double merit0 = f + nu * v0;
      const double dirder = grad.dot(d) - nu * v0;
      const double step_norm = d.lpNorm<Eigen::Infinity>();
      if (step_norm <= 1e-14 * (1.0 + x.lpNorm<Eigen::Infinity>()) && vin <= st_.constraint_tol) {
        // Converged to working precision even if the multipliers lag.
        y = q.y;
        z = q.z.head(mi + mb);
        status = SolveStatus::kSuccess;
        break;
      }
      double alpha = 1.0;
      bool accepted = false;
      VectorXd x_trial;
      double f_trial = 0.0;
      VectorXd ce_t, ci_t;
      for (int ls = 0; ls < st_.line_search_max; ++ls) {
        x_trial = x + alpha * d;
        f_trial = p.objective(x_trial, nullptr);
        p.eq_constraints(x_trial, &ce_t, nullptr);
        p.ineq_constraints(x_trial, &ci_t, nullptr);
        const double merit_t = f_trial + nu * viol1(ce_t, ci_t, x_trial);
        if (std::isfinite(merit_t) &&
            merit_t <= merit0 + 1e-4 * alpha * std::min(dirder, 0.0)) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        // Watchdog: a full step that clearly reduces the KKT error is taken
        // even when the merit function disagrees (Maratos effect).
        VectorXd y_t = q.y, z_t = q.z.head(mi + mb);
        VectorXd x_full = x + d;
        VectorXd grad_t(n);
        double f_full = p.objective(x_full, &grad_t);
        std::vector<JacRow> je_t, ji_t;
        VectorXd ce_f, ci_f;
        p.eq_constraints(x_full, &ce_f, &je_t);
        p.ineq_constraints(x_full, &ci_f, &ji_t);
        VectorXd gl = grad_t;
        for (int r = 0; r < me; ++r) je_t[r].axpy(y_t[r], gl);
        for (int r = 0; r < mi; ++r) ji_t[r].axpy(z_t[r], gl);
        int k = mi;
        for (int i : lo_rows) gl[i] -= z_t[k++];
        for (int i : hi_rows) gl[i] += z_t[k++];
        const double kkt_full = gl.lpNorm<Eigen::Infinity>();
        const double vin_full = viol_inf(ce_f, ci_f, x_full);
        if (kkt_full <= 0.5 * kkt && vin_full <= std::max(vin, st_.constraint_tol * 10.0) &&
            stall < 2) {
          x = x_full;
          f = f_full;
          grad = grad_t;
          c_eq = ce_f;
          c_in = ci_f;
          j_eq = je_t;
          j_in = ji_t;
          y = y_t;
          z = z_t;
          ++stall;
          ++steps;
          continue;
        }
        ++stall;
        if (stall >= 4) {
          status = SolveStatus::kLineSearchStall;
          break;
        }
        alpha = std::pow(0.5, st_.line_search_max - 1);
        x_trial = x + alpha * d;
      } else {
        stall = 0;
      }

      // Quasi-Newton data before moving.
      if (!exact) {
        gl_prev = grad;
        for (int r = 0; r < me; ++r) j_eq[r].axpy(q.y[r], gl_prev);
        for (int r = 0; r < mi; ++r) j_in[r].axpy(q.z[r], gl_prev);
        int k = mi;
        for (int i : lo_rows) gl_prev[i] -= q.z[k++];
        for (int i : hi_rows) gl_prev[i] += q.z[k++];
        x_prev = x;
      }

      x = x_trial;
      y = (1.0 - alpha) * y + alpha * q.y;
      for (int r = 0; r < mi + mb; ++r) z[r] = (1.0 - alpha) * z[r] + alpha * q.z[r];
      eval_full();
      ++steps;

      if (!exact) {
        VectorXd gl_new = grad;
        for (int r = 0; r < me; ++r) j_eq[r].axpy(q.y[r], gl_new);
        for (int r = 0; r < mi; ++r) j_in[r].axpy(q.z[r], gl_new);
        int k = mi;
        for (int i : lo_rows) gl_new[i] -= q.z[k++];
        for (int i : hi_rows) gl_new[i] += q.z[k++];
        const VectorXd sv = x - x_prev;
        const VectorXd yv = gl_new - gl_prev;
        damped_bfgs_update(bfgs, sv, yv, have_prev);
        have_prev = true;
      }
    }

    res.x = x;
    res.y_eq = y;
    res.z_ineq = z.head(mi);
    res.z_lower = Eigen::VectorXd::Zero(n);
    res.z_upper = Eigen::VectorXd::Zero(n);
    {
      int k = mi;
      for (int i : lo_rows) res.z_lower[i] = z[k++];
      for (int i : hi_rows) res.z_upper[i] = z[k++];
    }
    res.status = status;
    res.iterations = steps;
    res.objective = f;
    res.kkt_residual = lagrangian_grad_norm();
    res.constraint_violation = viol_inf(c_eq, c_in, x);
    return res;
  }

 private:
  static void convexify(Eigen::MatrixXd& m, double floor) {
    Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    Eigen::VectorXd ev = es.eigenvalues();
    const double lim = std::max(floor, 1e-12 * std::abs(ev.maxCoeff()));
    bool changed = false;
    for (int i = 0; i < ev.size(); ++i)
      if (ev[i] < lim) {
        ev[i] = lim;
        changed = true;
      }
    if (changed) m = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    else m = sym;
  }

  static void damped_bfgs_update(Eigen::MatrixXd& b, const Eigen::VectorXd& s,
                                 const Eigen::VectorXd& yv, bool have_prev) {
    const double sts = s.dot(s);
    if (sts <= 1e-30) return;
    Eigen::VectorXd bs = b * s;
    const double sbs = s.dot(bs);
    double sy = s.dot(yv);
    if (!have_prev && sy > 1e-12) {
      // Oren-Luenberger sizing before the first update.
      const double tau = yv.dot(yv) / sy;
      b = tau * Eigen::MatrixXd::Identity(b.rows(), b.cols());
      bs = b * s;
    }
    const double sbs2 = s.dot(bs);
    Eigen::VectorXd yd = yv;
    if (sy < 0.2 * sbs2) {
      const double theta = 0.8 * sbs2 / (sbs2 - sy);
      yd = theta * yv + (1.0 - theta) * bs;
      sy = s.dot(yd);
    }
    if (sy <= 1e-14 * std::sqrt(sts) || sbs2 <= 0.0) return;
    b += yd * yd.transpose() / sy - bs * bs.transpose() / sbs2;
    (void)sbs;
  }

  SqpSettings st_;
};

}  // namespace raceline

#endif  // RACELINE_NLP_HPP_
