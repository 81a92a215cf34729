#include "asnmpc/qp.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace asnmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Rotation helper used by the active-set factor updates; the xny form keeps
// the J update numerically stable (classic quadprog formulation).
void apply_givens(Eigen::MatrixXd& J, Eigen::VectorXd& dvec, int jcol) {
    const int n = static_cast<int>(J.rows());
    double cc = dvec(jcol - 1);
    double ss = dvec(jcol);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) return;
    dvec(jcol) = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        dvec(jcol - 1) = -h;
    } else {
        dvec(jcol - 1) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = 0; k < n; ++k) {
        const double t1 = J(k, jcol - 1);
        const double t2 = J(k, jcol);
        J(k, jcol - 1) = t1 * cc + t2 * ss;
        J(k, jcol) = xny * (t1 + J(k, jcol - 1)) - t2;
    }
}

}  // namespace

QpResult solve_qp(const QpProblem& problem, double feas_tol) {
    const int n = static_cast<int>(problem.H.rows());
    const int m = static_cast<int>(problem.C.rows());
    QpResult result;

    // Cholesky of H and J0 = L^-T
    Eigen::LLT<Eigen::MatrixXd> llt(problem.H);
    if (llt.info() != Eigen::Success) {
        result.status = QpResult::Status::NotPositiveDefinite;
        return result;
    }

    // normalized constraints in the ">=" convention: nvec_i' x >= b_i
    Eigen::MatrixXd N(m, n);
    Eigen::VectorXd b(m), row_scale(m);
    for (int i = 0; i < m; ++i) {
        const double nrm = problem.C.row(i).norm();
        row_scale(i) = nrm > 0.0 ? nrm : 1.0;
        N.row(i) = -problem.C.row(i) / row_scale(i);
        b(i) = -problem.d(i) / row_scale(i);
    }

    Eigen::MatrixXd J = Eigen::MatrixXd::Identity(n, n);
    llt.matrixU().solveInPlace(J);  // J = U^-1 = L^-T

    Eigen::VectorXd x = llt.solve(-problem.g);

    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(n, n);
    std::vector<int> active;   // constraint indices
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n + 1);
    int iq = 0;

    Eigen::VectorXd dvec(n), z(n), r(n), np(n);
    const int max_changes = 20 * (m + n);
    int changes = 0;

    std::vector<char> is_active_row(static_cast<std::size_t>(m), 0);
    Eigen::VectorXd sval = N * x - b;  // updated incrementally on primal steps

    while (true) {
        // most violated inactive constraint
        int p = -1;
        double worst = -feas_tol;
        for (int i = 0; i < m; ++i) {
            if (is_active_row[static_cast<std::size_t>(i)]) continue;
            if (sval(i) < worst) {
                worst = sval(i);
                p = i;
            }
        }
        if (p < 0) break;  // feasible and optimal

        np = N.row(p).transpose();
        u(iq) = 0.0;
        double slack = worst;

        while (true) {
            // step directions
            dvec.noalias() = J.transpose() * np;
            z.setZero();
            for (int k = iq; k < n; ++k) z += J.col(k) * dvec(k);
            // r = R^-1 d1
            for (int k = iq - 1; k >= 0; --k) {
                double sum = dvec(k);
                for (int j = k + 1; j < iq; ++j) sum -= R(k, j) * r(j);
                r(k) = sum / R(k, k);
            }

            // dual blocking step
            double t1 = kInf;
            int drop_pos = -1;
            for (int k = 0; k < iq; ++k) {
                if (r(k) > 0.0) {
                    const double tk = u(k) / r(k);
                    if (tk < t1) {
                        t1 = tk;
                        drop_pos = k;
                    }
                }
            }

            // primal step to reach constraint p
            const double ztn = z.dot(np);
            const double t2 = (z.norm() > 1e-14 && ztn > 1e-14) ? -slack / ztn : kInf;

            const double t = std::min(t1, t2);
            if (t >= kInf) {
                result.status = QpResult::Status::Infeasible;
                result.x = x;
                return result;
            }

            if (t2 >= kInf) {
                // pure dual step; drop the blocking constraint
                for (int k = 0; k < iq; ++k) u(k) -= t * r(k);
                u(iq) += t;
                // delete constraint at drop_pos
                is_active_row[static_cast<std::size_t>(active[static_cast<std::size_t>(
                    drop_pos)])] = 0;
                active.erase(active.begin() + drop_pos);
                for (int j = drop_pos; j < iq - 1; ++j) {
                    u(j) = u(j + 1);
                    R.col(j) = R.col(j + 1);
                }
                u(iq - 1) = u(iq);
                u(iq) = 0.0;
                --iq;
                for (int j = drop_pos; j < iq; ++j) {
                    // re-triangularize rows j, j+1
                    double cc = R(j, j);
                    double ss = R(j + 1, j);
                    const double h = std::hypot(cc, ss);
                    if (h == 0.0) continue;
                    cc /= h;
                    ss /= h;
                    if (cc < 0.0) {
                        cc = -cc;
                        ss = -ss;
                        R(j, j) = -h;
                    } else {
                        R(j, j) = h;
                    }
                    R(j + 1, j) = 0.0;
                    const double xny = ss / (1.0 + cc);
                    for (int col = j + 1; col < iq; ++col) {
                        const double t1v = R(j, col);
                        const double t2v = R(j + 1, col);
                        R(j, col) = t1v * cc + t2v * ss;
                        R(j + 1, col) = xny * (t1v + R(j, col)) - t2v;
                    }
                    for (int k = 0; k < n; ++k) {
                        const double t1v = J(k, j);
                        const double t2v = J(k, j + 1);
                        J(k, j) = t1v * cc + t2v * ss;
                        J(k, j + 1) = xny * (J(k, j) + t1v) - t2v;
                    }
                }
                if (++changes > max_changes) {
                    result.status = QpResult::Status::MaxIterations;
                    result.x = x;
                    return result;
                }
                continue;
            }

            // primal (possibly partial) step
            x += t * z;
            sval.noalias() += t * (N * z);
            for (int k = 0; k < iq; ++k) u(k) -= t * r(k);
            u(iq) += t;
            slack = sval(p);

            if (t == t2) {
                // add p to the active set
                active.push_back(p);
                is_active_row[static_cast<std::size_t>(p)] = 1;
                for (int j = n - 1; j >= iq + 1; --j) apply_givens(J, dvec, j);
                R.col(iq).head(iq + 1) = dvec.head(iq + 1);
                ++iq;
                if (++changes > max_changes) {
                    result.status = QpResult::Status::MaxIterations;
                    result.x = x;
                    return result;
                }
                break;
            }

            // partial step: drop the blocking constraint and retry
            is_active_row[static_cast<std::size_t>(
                active[static_cast<std::size_t>(drop_pos)])] = 0;
            active.erase(active.begin() + drop_pos);
            for (int j = drop_pos; j < iq - 1; ++j) {
                u(j) = u(j + 1);
                R.col(j) = R.col(j + 1);
            }
            u(iq - 1) = u(iq);
            u(iq) = 0.0;
            --iq;
            for (int j = drop_pos; j < iq; ++j) {
                double cc = R(j, j);
                double ss = R(j + 1, j);
                const double h = std::hypot(cc, ss);
                if (h == 0.0) continue;
                cc /= h;
                ss /= h;
                if (cc < 0.0) {
                    cc = -cc;
                    ss = -ss;
                    R(j, j) = -h;
                } else {
                    R(j, j) = h;
                }
                R(j + 1, j) = 0.0;
                const double xny = ss / (1.0 + cc);
                for (int col = j + 1; col < iq; ++col) {
                    const double t1v = R(j, col);
                    const double t2v = R(j + 1, col);
                    R(j, col) = t1v * cc + t2v * ss;
                    R(j + 1, col) = xny * (t1v + R(j, col)) - t2v;
                }
                for (int k = 0; k < n; ++k) {
                    const double t1v = J(k, j);
                    const double t2v = J(k, j + 1);
                    J(k, j) = t1v * cc + t2v * ss;
                    J(k, j + 1) = xny * (J(k, j) + t1v) - t2v;
                }
            }
            if (++changes > max_changes) {
                result.status = QpResult::Status::MaxIterations;
                result.x = x;
                return result;
            }
        }
    }

    result.x = x;
    result.dual = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < iq; ++k) {
        const int idx = active[static_cast<std::size_t>(k)];
        result.dual(idx) = u(k) / row_scale(idx);
    }
    result.active_set_changes = changes;
    result.objective = 0.5 * x.dot(problem.H * x) + problem.g.dot(x);
    return result;
}

}  // namespace asnmpc
