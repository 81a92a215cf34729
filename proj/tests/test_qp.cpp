#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include "asnmpc/qp.hpp"
#include "asnmpc/rng.hpp"

using namespace asnmpc;

namespace {

// independent optimality check: stationarity, primal/dual feasibility and
// complementary slackness of the returned point
void check_kkt(const QpProblem& p, const QpResult& r, double tol = 1e-7) {
    REQUIRE(r.status == QpResult::Status::Optimal);
    const Eigen::VectorXd stat = p.H * r.x + p.g + p.C.transpose() * r.dual;
    CHECK(stat.cwiseAbs().maxCoeff() < tol);
    const Eigen::VectorXd resid = p.C * r.x - p.d;
    CHECK(resid.maxCoeff() < tol);
    CHECK(r.dual.minCoeff() > -tol);
    for (int i = 0; i < r.dual.size(); ++i) {
        CHECK(std::abs(r.dual(i) * resid(i)) < tol * std::max(1.0, std::abs(r.dual(i))));
    }
}

QpProblem random_qp(Rng& rng, int n, int m) {
    QpProblem p;
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) M(i, j) = rng.uniform(-1.0, 1.0);
    p.H = M.transpose() * M + 0.1 * Eigen::MatrixXd::Identity(n, n);
    p.g.resize(n);
    for (int i = 0; i < n; ++i) p.g(i) = rng.uniform(-2.0, 2.0);
    p.C.resize(m, n);
    p.d.resize(m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) p.C(i, j) = rng.uniform(-1.0, 1.0);
        // keep the origin feasible so the problem is solvable
        p.d(i) = rng.uniform(0.05, 1.5);
    }
    return p;
}

// projected gradient descent for box-constrained QPs; slow but independent
Eigen::VectorXd box_qp_oracle(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                              const Eigen::VectorXd& lb, const Eigen::VectorXd& ub) {
    Eigen::VectorXd x = 0.5 * (lb + ub);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    const double step = 1.0 / es.eigenvalues().maxCoeff();
    for (int it = 0; it < 200000; ++it) {
        Eigen::VectorXd grad = H * x + g;
        Eigen::VectorXd next = (x - step * grad).cwiseMax(lb).cwiseMin(ub);
        if ((next - x).cwiseAbs().maxCoeff() < 1e-13) {
            x = next;
            break;
        }
        x = next;
    }
    return x;
}

}  // namespace

TEST_CASE("unconstrained minimum when no constraint binds") {
    QpProblem p;
    p.H = Eigen::Matrix2d::Identity();
    p.g = Eigen::Vector2d(-1.0, -2.0);
    p.C = Eigen::MatrixXd::Zero(1, 2);
    p.C << 1.0, 0.0;
    p.d = Eigen::VectorXd::Constant(1, 100.0);
    auto r = solve_qp(p);
    REQUIRE(r.status == QpResult::Status::Optimal);
    CHECK(r.x(0) == doctest::Approx(1.0));
    CHECK(r.x(1) == doctest::Approx(2.0));
    CHECK(r.dual(0) == 0.0);
}

TEST_CASE("single active constraint with known solution") {
    // min 0.5 (x1^2 + x2^2) s.t. x1 + x2 <= -1  -> x = (-0.5, -0.5), dual 0.5
    QpProblem p;
    p.H = Eigen::Matrix2d::Identity();
    p.g = Eigen::Vector2d::Zero();
    p.C.resize(1, 2);
    p.C << 1.0, 1.0;
    p.d = Eigen::VectorXd::Constant(1, -1.0);
    auto r = solve_qp(p);
    REQUIRE(r.status == QpResult::Status::Optimal);
    CHECK(r.x(0) == doctest::Approx(-0.5));
    CHECK(r.x(1) == doctest::Approx(-0.5));
    CHECK(r.dual(0) == doctest::Approx(0.5));
    check_kkt(p, r);
}

TEST_CASE("infeasible constraint pair is reported") {
    QpProblem p;
    p.H = Eigen::Matrix2d::Identity();
    p.g = Eigen::Vector2d::Zero();
    p.C.resize(2, 2);
    p.C << 1.0, 0.0, -1.0, 0.0;  // x1 <= -1 and -x1 <= -1 (x1 >= 1)
    p.d.resize(2);
    p.d << -1.0, -1.0;
    auto r = solve_qp(p);
    CHECK(r.status == QpResult::Status::Infeasible);
}

TEST_CASE("random QPs satisfy KKT conditions") {
    Rng rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(2, 12);
        const int m = rng.uniform_int(1, 3 * n);
        auto p = random_qp(rng, n, m);
        auto r = solve_qp(p);
        check_kkt(p, r);
    }
}

TEST_CASE("matches a projected-gradient oracle on box QPs") {
    Rng rng(202);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = rng.uniform_int(2, 10);
        Eigen::MatrixXd M(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) M(i, j) = rng.uniform(-1.0, 1.0);
        Eigen::MatrixXd H = M.transpose() * M + 0.2 * Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd g(n), lb(n), ub(n);
        for (int i = 0; i < n; ++i) {
            g(i) = rng.uniform(-3.0, 3.0);
            lb(i) = rng.uniform(-2.0, -0.1);
            ub(i) = rng.uniform(0.1, 2.0);
        }

        QpProblem p;
        p.H = H;
        p.g = g;
        p.C.resize(2 * n, n);
        p.d.resize(2 * n);
        p.C.topRows(n) = Eigen::MatrixXd::Identity(n, n);
        p.C.bottomRows(n) = -Eigen::MatrixXd::Identity(n, n);
        p.d.head(n) = ub;
        p.d.tail(n) = -lb;

        auto r = solve_qp(p);
        REQUIRE(r.status == QpResult::Status::Optimal);
        const Eigen::VectorXd oracle = box_qp_oracle(H, g, lb, ub);
        CHECK((r.x - oracle).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("handles the slack-variable scale split used by the OCP") {
    // two strongly penalized slack variables alongside regular variables,
    // mirroring the conditioning of the condensed controller QP
    Rng rng(303);
    for (int trial = 0; trial < 20; ++trial) {
        const int nu = 6, ns = 2, n = nu + ns;
        Eigen::MatrixXd M(nu, nu);
        for (int i = 0; i < nu; ++i)
            for (int j = 0; j < nu; ++j) M(i, j) = rng.uniform(-3.0, 3.0);

        QpProblem p;
        p.H = Eigen::MatrixXd::Zero(n, n);
        p.H.topLeftCorner(nu, nu) = M.transpose() * M + 1e-6 * Eigen::MatrixXd::Identity(nu, nu);
        p.H.bottomRightCorner(ns, ns) = 100.0 * Eigen::MatrixXd::Identity(ns, ns);
        p.g.resize(n);
        for (int i = 0; i < nu; ++i) p.g(i) = rng.uniform(-5.0, 5.0);
        p.g.tail(ns).setConstant(1e4);

        // coupled rows relaxed by slacks plus slack nonnegativity
        p.C.resize(ns + ns, n);
        p.d.resize(ns + ns);
        p.C.setZero();
        for (int i = 0; i < ns; ++i) {
            for (int j = 0; j < nu; ++j) p.C(i, j) = rng.uniform(-1.0, 1.0);
            p.C(i, nu + i) = -1.0;
            p.d(i) = rng.uniform(-0.5, 0.5);
            p.C(ns + i, nu + i) = -1.0;  // -s_i <= 0
            p.d(ns + i) = 0.0;
        }
        auto r = solve_qp(p);
        check_kkt(p, r, 1e-6);
    }
}
