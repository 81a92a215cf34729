#pragma once

#include <Eigen/Dense>

namespace asnmpc {

/// Strictly convex quadratic program
///     min 0.5 x'Hx + g'x   s.t.  C x <= d
/// solved with the Goldfarb-Idnani dual active-set method. H must be
/// symmetric positive definite; rows of C may have arbitrary scale (they are
/// normalized internally).
struct QpProblem {
    Eigen::MatrixXd H;
    Eigen::VectorXd g;
    Eigen::MatrixXd C;  // m x n, may have zero rows removed by the caller
    Eigen::VectorXd d;  // m
};

struct QpResult {
    enum class Status { Optimal, Infeasible, MaxIterations, NotPositiveDefinite };
    Status status = Status::Optimal;
    Eigen::VectorXd x;
    Eigen::VectorXd dual;  // one multiplier per row of C, >= 0, zero when inactive
    int active_set_changes = 0;
    double objective = 0.0;
};

QpResult solve_qp(const QpProblem& problem, double feas_tol = 1e-9);

}  // namespace asnmpc
