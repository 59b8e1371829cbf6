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

#include "raceline/nlp.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

namespace raceline {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Textbook primal active-set method for strictly convex QPs with a feasible
// start at the origin. Reference implementation for checking the
// interior-point path; deliberately independent of it.
struct ActiveSetOracle {
  VectorXd x, lambda;
  bool solve(const MatrixXd& h, const VectorXd& g, const MatrixXd& a, const VectorXd& b) {
    const int n = static_cast<int>(h.rows());
    const int m = static_cast<int>(a.rows());
    x = VectorXd::Zero(n);
    lambda = VectorXd::Zero(m);
    std::vector<int> wset;
    for (int iter = 0; iter < 500; ++iter) {
      const int k = static_cast<int>(wset.size());
      MatrixXd kkt(n + k, n + k);
      kkt.setZero();
      kkt.topLeftCorner(n, n) = h;
      for (int r = 0; r < k; ++r) {
        kkt.block(n + r, 0, 1, n) = a.row(wset[r]);
        kkt.block(0, n + r, n, 1) = a.row(wset[r]).transpose();
      }
      VectorXd rhs(n + k);
      rhs.head(n) = -(h * x + g);
      rhs.tail(k).setZero();
      const VectorXd sol = kkt.fullPivLu().solve(rhs);
      const VectorXd p = sol.head(n);
      if (p.lpNorm<Eigen::Infinity>() < 1e-11) {
        double lmin = 0.0;
        int drop = -1;
        for (int r = 0; r < k; ++r) {
          if (sol[n + r] < lmin) {
            lmin = sol[n + r];
            drop = r;
          }
        }
        if (drop < 0) {
          lambda.setZero();
          for (int r = 0; r < k; ++r) lambda[wset[r]] = sol[n + r];
          return true;
        }
        wset.erase(wset.begin() + drop);
        continue;
      }
      double alpha = 1.0;
      int block = -1;
      for (int r = 0; r < m; ++r) {
        if (std::find(wset.begin(), wset.end(), r) != wset.end()) continue;
        const double ap = a.row(r).dot(p);
        if (ap > 1e-12) {
          const double room = (b[r] - a.row(r).dot(x)) / ap;
          if (room < alpha) {
            alpha = room;
            block = r;
          }
        }
      }
      x += alpha * p;
      if (block >= 0) wset.push_back(block);
    }
    return false;
  }
};

TEST(QpSolve, UnconstrainedStepIsNegativeGradient) {
  QpData qp;
  qp.n = 4;
  qp.hess.push_back({0, MatrixXd::Identity(4, 4)});
  qp.g = VectorXd::LinSpaced(4, 1.0, 4.0);
  qp.eq_rhs.resize(0);
  qp.ineq_rhs.resize(0);
  QpResult r = solve_qp(qp);
  ASSERT_TRUE(r.ok);
  EXPECT_LT((r.x + qp.g).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(QpSolve, SingleActiveConstraintProjects) {
  // min 0.5|x|^2 + g'x  s.t. a'x <= 0, with -g strictly violating.
  QpData qp;
  qp.n = 3;
  qp.hess.push_back({0, MatrixXd::Identity(3, 3)});
  qp.g.resize(3);
  qp.g << -1.0, -2.0, -0.5;
  JacRow row;
  row.col0 = 0;
  row.a = {1.0, 1.0, 1.0};
  qp.ineq_rows.push_back(row);
  qp.ineq_rhs.resize(1);
  qp.ineq_rhs[0] = 0.0;
  QpResult r = solve_qp(qp);
  ASSERT_TRUE(r.ok);
  Eigen::Vector3d a(1.0, 1.0, 1.0);
  Eigen::Vector3d unc = -qp.g;
  Eigen::Vector3d expected = unc - a * (a.dot(unc) / a.squaredNorm());
  EXPECT_LT((r.x - expected).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(QpSolve, RandomQpsMatchActiveSetOracle) {
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 12; ++trial) {
    const int n = 20, m = 14;
    MatrixXd root = MatrixXd::NullaryExpr(n, n, [&]() { return u(rng); });
    MatrixXd h = root * root.transpose() + 0.5 * MatrixXd::Identity(n, n);
    VectorXd g = VectorXd::NullaryExpr(n, [&]() { return 2.0 * u(rng); });
    MatrixXd a = MatrixXd::NullaryExpr(m, n, [&]() { return u(rng); });
    VectorXd b = VectorXd::NullaryExpr(m, [&]() { return 1.0 + 0.5 * u(rng); });

    ActiveSetOracle oracle;
    ASSERT_TRUE(oracle.solve(h, g, a, b));

    QpData qp;
    qp.n = n;
    qp.hess.push_back({0, h});
    qp.g = g;
    for (int r = 0; r < m; ++r) {
      JacRow row;
      row.col0 = 0;
      row.a.assign(a.row(r).data(), a.row(r).data() + n);
      for (int c = 0; c < n; ++c) row.a[c] = a(r, c);
      qp.ineq_rows.push_back(row);
    }
    qp.ineq_rhs = b;
    QpResult r = solve_qp(qp);
    ASSERT_TRUE(r.ok);
    EXPECT_LT((r.x - oracle.x).lpNorm<Eigen::Infinity>(), 1e-8);
    EXPECT_LT((r.z - oracle.lambda).lpNorm<Eigen::Infinity>(), 1e-6);
  }
}

TEST(QpSolve, BandedLayoutWithBorderMatchesDense) {
  // Chain-structured QP with one long coupling row flagged as border.
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int stages = 12, nv = 3;
  const int n = stages * nv;
  QpData qp;
  qp.n = n;
  qp.g = VectorXd::NullaryExpr(n, [&]() { return u(rng); });
  for (int k = 0; k < stages; ++k) {
    MatrixXd blk = MatrixXd::NullaryExpr(nv, nv, [&]() { return 0.2 * u(rng); });
    qp.hess.push_back({k * nv, blk * blk.transpose() + MatrixXd::Identity(nv, nv)});
  }
  for (int k = 0; k + 1 < stages; ++k) {
    JacRow row;
    row.col0 = k * nv;
    row.a.resize(2 * nv);
    for (int i = 0; i < 2 * nv; ++i) row.a[i] = u(rng);
    qp.eq_rows.push_back(row);
  }
  JacRow cyc;
  cyc.col0 = 0;
  cyc.a.assign(n, 0.0);
  cyc.a[0] = 1.0;
  cyc.a[n - 1] = -1.0;
  qp.eq_rows.push_back(cyc);
  qp.border_rows = {static_cast<int>(qp.eq_rows.size()) - 1};
  qp.eq_rhs = VectorXd::NullaryExpr(qp.eq_rows.size(), [&]() { return 0.3 * u(rng); });
  for (int k = 0; k < stages; ++k) {
    JacRow row;
    row.col0 = k * nv;
    row.a = {1.0, 0.5, -0.25};
    qp.ineq_rows.push_back(row);
  }
  qp.ineq_rhs = VectorXd::Constant(stages, 2.0);
  for (int k = 0; k < stages; ++k) {
    qp.layout.segs.push_back({false, k * nv, nv});
    if (k + 1 < stages) qp.layout.segs.push_back({true, k, 1});
  }
  QpResult banded = solve_qp(qp);
  ASSERT_TRUE(banded.ok);

  QpData dense = qp;
  dense.layout.segs.clear();
  dense.border_rows.clear();
  QpResult ref = solve_qp(dense);
  ASSERT_TRUE(ref.ok);
  EXPECT_LT((banded.x - ref.x).lpNorm<Eigen::Infinity>(), 1e-7);
}

// ---------------------------------------------------------------------------
// SQP driver

class Quadratic1D : public NlpProblem {
 public:
  int num_vars() const override { return 1; }
  void initial_point(VectorXd* x) const override { x->setConstant(1, -7.0); }
  double objective(const VectorXd& x, VectorXd* grad) const override {
    if (grad) (*grad)(0) = 2.0 * (x[0] - 3.0);
    return (x[0] - 3.0) * (x[0] - 3.0);
  }
  bool lagrangian_hessian(const VectorXd&, const VectorXd&, const VectorXd&,
                          std::vector<HessBlock>* blocks) const override {
    blocks->push_back({0, 2.0 * MatrixXd::Identity(1, 1)});
    return true;
  }
};

TEST(Sqp, UnconstrainedQuadratic) {
  SqpSolver solver;
  SqpResult r = solver.solve(Quadratic1D{});
  EXPECT_EQ(r.status, SolveStatus::kSuccess);
  EXPECT_NEAR(r.x[0], 3.0, 1e-9);
}

class BoundQuadratic : public NlpProblem {
 public:
  int num_vars() const override { return 1; }
  int num_ineq() const override { return 1; }
  void initial_point(VectorXd* x) const override { x->setConstant(1, 4.0); }
  double objective(const VectorXd& x, VectorXd* grad) const override {
    if (grad) (*grad)(0) = 2.0 * x[0];
    return x[0] * x[0];
  }
  void ineq_constraints(const VectorXd& x, VectorXd* c, std::vector<JacRow>* jac) const override {
    if (c) {
      c->resize(1);
      (*c)[0] = 1.0 - x[0];  // x >= 1
    }
    if (jac) {
      jac->assign(1, JacRow{0, {-1.0}, -1, 0.0});
    }
  }
  bool lagrangian_hessian(const VectorXd&, const VectorXd&, const VectorXd&,
                          std::vector<HessBlock>* blocks) const override {
    blocks->push_back({0, 2.0 * MatrixXd::Identity(1, 1)});
    return true;
  }
};

TEST(Sqp, ActiveBoundWithKnownMultiplier) {
  SqpSolver solver;
  SqpResult r = solver.solve(BoundQuadratic{});
  EXPECT_EQ(r.status, SolveStatus::kSuccess);
  EXPECT_NEAR(r.x[0], 1.0, 1e-8);
  EXPECT_NEAR(r.z_ineq[0], 2.0, 1e-6);
}

TEST(Sqp, FeasibleStartQpSolvesInOneIteration) {
  // Quadratic objective, linear constraint, feasible start, exact Hessian.
  class Qp : public NlpProblem {
   public:
    int num_vars() const override { return 2; }
    int num_ineq() const override { return 1; }
    void initial_point(VectorXd* x) const override {
      x->resize(2);
      (*x) << 0.0, 0.0;
    }
    double objective(const VectorXd& x, VectorXd* grad) const override {
      if (grad) *grad = 2.0 * x - Eigen::Vector2d(2.0, 6.0);
      return x.squaredNorm() - 2.0 * x[0] - 6.0 * x[1];
    }
    void ineq_constraints(const VectorXd& x, VectorXd* c, std::vector<JacRow>* jac) const override {
      if (c) {
        c->resize(1);
        (*c)[0] = x[0] + x[1] - 1.0;
      }
      if (jac) jac->assign(1, JacRow{0, {1.0, 1.0}, -1, 0.0});
    }
    bool lagrangian_hessian(const VectorXd&, const VectorXd&, const VectorXd&,
                            std::vector<HessBlock>* blocks) const override {
      blocks->push_back({0, 2.0 * MatrixXd::Identity(2, 2)});
      return true;
    }
  };
  SqpSolver solver;
  SqpResult r = solver.solve(Qp{});
  EXPECT_EQ(r.status, SolveStatus::kSuccess);
  EXPECT_EQ(r.iterations, 1);
  // KKT by hand: on x0 + x1 = 1, grad f = (2x0 - 2, 2x1 - 6) = -lambda(1, 1)
  // gives 2x0 - 2 = 2x1 - 6, so x1 = x0 + 2 and x = (-0.5, 1.5), lambda = 3.
  EXPECT_NEAR(r.x[0], -0.5, 1e-8);
  EXPECT_NEAR(r.x[1], 1.5, 1e-8);
  EXPECT_NEAR(r.z_ineq[0], 3.0, 1e-7);
}

class RosenbrockEq : public NlpProblem {
 public:
  int num_vars() const override { return 2; }
  int num_eq() const override { return 1; }
  void initial_point(VectorXd* x) const override {
    x->resize(2);
    (*x) << 0.5, 0.5;
  }
  double objective(const VectorXd& x, VectorXd* grad) const override {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    if (grad) {
      (*grad)(0) = -2.0 * a - 400.0 * x[0] * b;
      (*grad)(1) = 200.0 * b;
    }
    return a * a + 100.0 * b * b;
  }
  void eq_constraints(const VectorXd& x, VectorXd* c, std::vector<JacRow>* jac) const override {
    if (c) {
      c->resize(1);
      (*c)[0] = x[0] + x[1] - 1.0;
    }
    if (jac) jac->assign(1, JacRow{0, {1.0, 1.0}, -1, 0.0});
  }
};

TEST(Sqp, RosenbrockOnLineMatchesGridOracle) {
  // Brute-force oracle along the constraint x + y = 1.
  double best_x = 0.0, best_f = kInf;
  for (int i = 0; i <= 200000; ++i) {
    const double x = -2.0 + 4.0 * i / 200000.0;
    const double y = 1.0 - x;
    const double b = y - x * x;
    const double f = (1.0 - x) * (1.0 - x) + 100.0 * b * b;
    if (f < best_f) {
      best_f = f;
      best_x = x;
    }
  }
  // Golden-section refinement around the grid winner.
  double lo = best_x - 5e-5, hi = best_x + 5e-5;
  auto phi = [](double x) {
    const double y = 1.0 - x;
    const double b = y - x * x;
    return (1.0 - x) * (1.0 - x) + 100.0 * b * b;
  };
  for (int k = 0; k < 200; ++k) {
    const double m1 = lo + 0.382 * (hi - lo), m2 = hi - 0.382 * (hi - lo);
    (phi(m1) < phi(m2) ? hi : lo) = (phi(m1) < phi(m2) ? m2 : m1);
  }
  const double oracle_x = 0.5 * (lo + hi);

  SqpSettings st;
  st.max_iter = 200;
  SqpSolver solver(st);
  SqpResult r = solver.solve(RosenbrockEq{});
  EXPECT_EQ(r.status, SolveStatus::kSuccess);
  EXPECT_NEAR(r.x[0], oracle_x, 1e-6);
  EXPECT_NEAR(r.x[1], 1.0 - oracle_x, 1e-6);
}

TEST(Sqp, ReportedKktResidualMatchesRecompute) {
  SqpSolver solver;
  SqpResult r = solver.solve(RosenbrockEq{});
  const double recomputed =
      kkt_residual(RosenbrockEq{}, r.x, r.y_eq, r.z_ineq, r.z_lower, r.z_upper);
  EXPECT_NEAR(r.kkt_residual, recomputed, 1e-12);
}

TEST(Sqp, DeterministicRuns) {
  SqpSolver a, b;
  SqpResult ra = a.solve(RosenbrockEq{});
  SqpResult rb = b.solve(RosenbrockEq{});
  ASSERT_EQ(ra.iterations, rb.iterations);
  EXPECT_EQ(ra.x[0], rb.x[0]);
  EXPECT_EQ(ra.x[1], rb.x[1]);
  EXPECT_EQ(ra.kkt_residual, rb.kkt_residual);
}

TEST(Sqp, InfeasibleProblemTriggersElasticAndFails) {
  class Infeasible : public NlpProblem {
   public:
    int num_vars() const override { return 1; }
    int num_ineq() const override { return 2; }
    void initial_point(VectorXd* x) const override { x->setZero(1); }
    double objective(const VectorXd& x, VectorXd* grad) const override {
      if (grad) (*grad)(0) = 2.0 * x[0];
      return x[0] * x[0];
    }
    void ineq_constraints(const VectorXd& x, VectorXd* c, std::vector<JacRow>* jac) const override {
      if (c) {
        c->resize(2);
        (*c)[0] = x[0] + 1.0;   // x <= -1
        (*c)[1] = 1.0 - x[0];   // x >= 1
      }
      if (jac) {
        jac->clear();
        jac->push_back(JacRow{0, {1.0}, -1, 0.0});
        jac->push_back(JacRow{0, {-1.0}, -1, 0.0});
      }
    }
    bool lagrangian_hessian(const VectorXd&, const VectorXd&, const VectorXd&,
                            std::vector<HessBlock>* blocks) const override {
      blocks->push_back({0, 2.0 * MatrixXd::Identity(1, 1)});
      return true;
    }
  };
  SqpSettings st;
  st.max_iter = 25;
  SqpSolver solver(st);
  SqpResult r = solver.solve(Infeasible{});
  EXPECT_NE(r.status, SolveStatus::kSuccess);
  EXPECT_GT(r.elastic_steps, 0);
}

TEST(Sqp, CooperativeDeadlineStopsEarly) {
  SqpSettings st;
  int calls = 0;
  st.should_stop = [&calls]() { return ++calls > 2; };
  SqpSolver solver(st);
  SqpResult r = solver.solve(RosenbrockEq{});
  EXPECT_EQ(r.status, SolveStatus::kDeadline);
  EXPECT_LE(r.iterations, 3);
}

}  // namespace
}  // namespace raceline
