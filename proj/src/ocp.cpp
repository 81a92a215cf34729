#include "asnmpc/ocp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <stdexcept>

#include "asnmpc/qp.hpp"

namespace asnmpc {

namespace {

// residual selector rows: (x, y, psi, v_lon, delta_f, a)
constexpr int kStageSel[6] = {0, 1, 2, 3, 6, 7};
// terminal selector rows: (x, y, psi, v_lon)
constexpr int kTermSel[4] = {0, 1, 2, 3};

VehicleState clamp_speed(VehicleState s, const VehicleParams& p) {
    if (s.v_lon < p.v_lon_min_model) s.v_lon = p.v_lon_min_model;
    return s;
}

double unwrap_near(double angle, double anchor) {
    return angle - 2.0 * M_PI * std::round((angle - anchor) / (2.0 * M_PI));
}

}  // namespace

const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Solved: return "solved";
        case SolveStatus::MaxIterations: return "max_iterations";
        case SolveStatus::Infeasible: return "infeasible";
    }
    return "unknown";
}

void SnmpcConfig::validate() const {
    if (!(t_pred > 0.0) || !(t_step > 0.0)) {
        throw std::invalid_argument("SnmpcConfig: horizon times must be positive");
    }
    if (n_nodes() < 1) throw std::invalid_argument("SnmpcConfig: horizon shorter than one node");
    if (std::abs(n_nodes() * t_step - t_pred) > 1e-9) {
        throw std::invalid_argument("SnmpcConfig: t_pred must be a multiple of t_step");
    }
    if (weights.minCoeff() < 0.0 || terminal_weight_scale < 0.0) {
        throw std::invalid_argument("SnmpcConfig: weights must be nonnegative");
    }
    if (!(a_x_max > 0.0 && a_y_max > 0.0 && delta_max > 0.0 && omega_max > 0.0)) {
        throw std::invalid_argument("SnmpcConfig: limits must be positive");
    }
    if (sqp_max_iters < 1 || !(qp_tolerance > 0.0) || !(slack_penalty > 0.0)) {
        throw std::invalid_argument("SnmpcConfig: solver settings out of range");
    }
    vehicle.validate();
}

StageTargets build_stage_targets(std::span<const RacelinePoint> refs, double initial_psi,
                                 double t_step) {
    if (refs.size() < 2) throw std::invalid_argument("need at least two reference points");
    const int n = static_cast<int>(refs.size()) - 1;
    StageTargets out;
    out.stage.resize(n, 6);
    double anchor = initial_psi;
    for (int t = 0; t < n; ++t) {
        const double psi = unwrap_near(refs[static_cast<std::size_t>(t)].psi, anchor);
        anchor = psi;
        const double a_ref = (refs[static_cast<std::size_t>(t) + 1].v_ref -
                              refs[static_cast<std::size_t>(t)].v_ref) /
                             t_step;
        out.stage.row(t) << refs[static_cast<std::size_t>(t)].x,
            refs[static_cast<std::size_t>(t)].y, psi, refs[static_cast<std::size_t>(t)].v_ref,
            0.0, a_ref;
    }
    const double psi_e = unwrap_near(refs[static_cast<std::size_t>(n)].psi, anchor);
    out.terminal << refs[static_cast<std::size_t>(n)].x, refs[static_cast<std::size_t>(n)].y,
        psi_e, refs[static_cast<std::size_t>(n)].v_ref;
    return out;
}

double rollout_cost(const SnmpcConfig& config, const VehicleState& x0,
                    const StageTargets& targets, std::span<const ControlInput> controls) {
    const int n = static_cast<int>(controls.size());
    double cost = 0.0;
    VehicleState s = x0;
    for (int t = 0; t < n; ++t) {
        Eigen::Matrix<double, 6, 1> r;
        const StateVector xv = s.to_vector();
        for (int k = 0; k < 6; ++k) r(k) = xv(kStageSel[k]) - targets.stage(t, k);
        cost += 0.5 * r.dot(config.weights.cwiseProduct(r));
        s = integrate_step(clamp_speed(s, config.vehicle), controls[static_cast<std::size_t>(t)],
                           config.t_step, config.vehicle);
    }
    Eigen::Matrix<double, 4, 1> re;
    const StateVector xe = s.to_vector();
    for (int k = 0; k < 4; ++k) re(k) = xe(kTermSel[k]) - targets.terminal(k);
    const Eigen::Matrix<double, 4, 1> we =
        config.terminal_weight_scale * config.weights.head<4>();
    cost += 0.5 * re.dot(we.cwiseProduct(re));
    return cost;
}

struct OcpWorkspace::Linearization {
    std::vector<StateVector> f_next;                    // N
    std::vector<StateVector> defect;                    // N
    std::vector<Eigen::Matrix<double, 8, 8>> A;         // N
    std::vector<Eigen::Matrix<double, 8, 2>> B;         // N
    std::vector<Eigen::MatrixXd> G;                     // N+1, each 8 x 2N (G[0] = 0)
    std::vector<StateVector> w;                         // N+1 (w[0] = 0)
    Eigen::MatrixXd r_stage;                            // N x 6
    Eigen::Matrix<double, 4, 1> r_term;
    Eigen::VectorXd h;                                  // N, nodes 1..N
    Eigen::MatrixXd h_grad;                             // N x 8
    double cost = 0.0;
};

OcpWorkspace::OcpWorkspace(const SnmpcConfig& config) : config_(config) {
    config_.validate();
    n_ = config_.n_nodes();
    bound_ = Eigen::VectorXd::Ones(n_);
    dual_h_ = Eigen::VectorXd::Zero(n_);
    dual_delta_ = Eigen::VectorXd::Zero(2 * n_);
    dual_omega_ = Eigen::VectorXd::Zero(2 * n_);
}

void OcpWorkspace::set_problem_data(const VehicleState& initial_mean,
                                    std::span<const RacelinePoint> refs,
                                    std::span<const double> tightenings,
                                    const SnmpcParams& params) {
    if (static_cast<int>(refs.size()) != n_ + 1) {
        throw std::invalid_argument("set_problem_data: need N_p + 1 reference points");
    }
    if (static_cast<int>(tightenings.size()) != n_) {
        throw std::invalid_argument("set_problem_data: need N_p tightenings");
    }
    if (params.n_u < 1 || params.n_u > n_) {
        throw std::invalid_argument("set_problem_data: n_u out of range");
    }
    for (int t = 0; t < n_; ++t) {
        const double b = tightenings[static_cast<std::size_t>(t)];
        if (b < 0.0 || !std::isfinite(b)) {
            throw std::invalid_argument("set_problem_data: tightenings must be nonnegative");
        }
        if (t >= params.n_u && b != 0.0) {
            throw std::invalid_argument(
                "set_problem_data: tightenings beyond the UPH must be zero");
        }
    }
    x0_ = initial_mean;
    targets_ = build_stage_targets(refs, initial_mean.psi, config_.t_step);
    for (int t = 0; t < n_; ++t) bound_(t) = 1.0 - tightenings[static_cast<std::size_t>(t)];
    data_ready_ = true;
}

void OcpWorkspace::evaluate(const std::vector<VehicleState>& xs,
                            const std::vector<ControlInput>& us, Linearization& lin,
                            bool with_jacobians) const {
    const int n = n_;
    const double dt = config_.t_step;
    lin.f_next.resize(static_cast<std::size_t>(n));
    lin.defect.resize(static_cast<std::size_t>(n));
    lin.r_stage.resize(n, 6);
    lin.h.resize(n);
    lin.h_grad.resize(n, 8);
    lin.cost = 0.0;

    for (int t = 0; t < n; ++t) {
        const VehicleState xt = clamp_speed(xs[static_cast<std::size_t>(t)], config_.vehicle);
        lin.f_next[static_cast<std::size_t>(t)] =
            integrate_step(xt, us[static_cast<std::size_t>(t)], dt, config_.vehicle).to_vector();
        lin.defect[static_cast<std::size_t>(t)] =
            lin.f_next[static_cast<std::size_t>(t)] -
            xs[static_cast<std::size_t>(t) + 1].to_vector();

        const StateVector xv = xs[static_cast<std::size_t>(t)].to_vector();
        for (int k = 0; k < 6; ++k) {
            lin.r_stage(t, k) = xv(kStageSel[k]) - targets_.stage(t, k);
        }
        lin.cost += 0.5 * (config_.weights.array() *
                           lin.r_stage.row(t).transpose().array().square())
                              .sum();
    }
    const StateVector xe = xs[static_cast<std::size_t>(n)].to_vector();
    for (int k = 0; k < 4; ++k) lin.r_term(k) = xe(kTermSel[k]) - targets_.terminal(k);
    const Eigen::Matrix<double, 4, 1> we =
        config_.terminal_weight_scale * config_.weights.head<4>();
    lin.cost += 0.5 * lin.r_term.dot(we.cwiseProduct(lin.r_term));

    for (int j = 1; j <= n; ++j) {
        lin.h(j - 1) = combined_accel_fraction(xs[static_cast<std::size_t>(j)], config_.a_x_max,
                                               config_.a_y_max);
        lin.h_grad.row(j - 1) =
            combined_accel_fraction_gradient(xs[static_cast<std::size_t>(j)], config_.a_x_max,
                                             config_.a_y_max)
                .transpose();
    }

    if (!with_jacobians) return;

    lin.A.resize(static_cast<std::size_t>(n));
    lin.B.resize(static_cast<std::size_t>(n));
    lin.G.assign(static_cast<std::size_t>(n) + 1, Eigen::MatrixXd::Zero(8, 2 * n));
    lin.w.assign(static_cast<std::size_t>(n) + 1, StateVector::Zero());

    Eigen::Matrix<double, 8, 8> As, tmp88;
    Eigen::Matrix<double, 8, 2> Bs, tmp82;
    for (int t = 0; t < n; ++t) {
        // RK4 sensitivity chain; stage Jacobians by central differences
        const VehicleState xt = clamp_speed(xs[static_cast<std::size_t>(t)], config_.vehicle);
        const ControlInput& ut = us[static_cast<std::size_t>(t)];
        const StateVector x0v = xt.to_vector();

        Eigen::Matrix<double, 8, 8> dkdx[4];
        Eigen::Matrix<double, 8, 2> dkdu[4];
        StateVector k[4];
        StateVector stage = x0v;
        for (int s = 0; s < 4; ++s) {
            const VehicleState xst = VehicleState::from_vector(stage);
            k[s] = dynamics_rhs_smoothed(xst, ut, config_.vehicle);
            linearize_fd(xst, ut, config_.vehicle, config_.fd_eps, As, Bs);
            if (s == 0) {
                dkdx[0] = As;
                dkdu[0] = Bs;
            } else {
                const double c = (s == 3) ? dt : dt / 2.0;
                dkdx[s].noalias() = As * (Eigen::Matrix<double, 8, 8>::Identity() +
                                          c * dkdx[s - 1]);
                dkdu[s].noalias() = As * (c * dkdu[s - 1]);
                dkdu[s] += Bs;
            }
            if (s < 3) {
                const double c = (s == 2) ? dt : dt / 2.0;
                stage = x0v + c * k[s];
            }
        }
        lin.A[static_cast<std::size_t>(t)] =
            Eigen::Matrix<double, 8, 8>::Identity() +
            (dt / 6.0) * (dkdx[0] + 2.0 * dkdx[1] + 2.0 * dkdx[2] + dkdx[3]);
        lin.B[static_cast<std::size_t>(t)] =
            (dt / 6.0) * (dkdu[0] + 2.0 * dkdu[1] + 2.0 * dkdu[2] + dkdu[3]);
    }

    for (int t = 0; t < n; ++t) {
        // controls beyond node t cannot influence x_{t+1}
        lin.G[static_cast<std::size_t>(t) + 1].leftCols(2 * t).noalias() =
            lin.A[static_cast<std::size_t>(t)] * lin.G[static_cast<std::size_t>(t)].leftCols(2 * t);
        lin.G[static_cast<std::size_t>(t) + 1].block(0, 2 * t, 8, 2) =
            lin.B[static_cast<std::size_t>(t)];
        lin.w[static_cast<std::size_t>(t) + 1] =
            lin.A[static_cast<std::size_t>(t)] * lin.w[static_cast<std::size_t>(t)] +
            lin.defect[static_cast<std::size_t>(t)];
    }
}

double OcpWorkspace::merit(const std::vector<VehicleState>& xs,
                           const std::vector<ControlInput>& us) const {
    const int n = n_;
    (void)us;
    double phi = 0.0;
    for (int t = 0; t < n; ++t) {
        const StateVector xv = xs[static_cast<std::size_t>(t)].to_vector();
        for (int k = 0; k < 6; ++k) {
            const double r = xv(kStageSel[k]) - targets_.stage(t, k);
            phi += 0.5 * config_.weights(k) * r * r;
        }
    }
    const StateVector xe = xs[static_cast<std::size_t>(n)].to_vector();
    for (int k = 0; k < 4; ++k) {
        const double r = xe(kTermSel[k]) - targets_.terminal(k);
        phi += 0.5 * config_.terminal_weight_scale * config_.weights(k) * r * r;
    }
    for (int j = 1; j <= n; ++j) {
        const double h = combined_accel_fraction(xs[static_cast<std::size_t>(j)], config_.a_x_max,
                                                 config_.a_y_max);
        phi += config_.slack_penalty * std::max(0.0, h - bound_(j - 1));
        phi += config_.slack_penalty *
               std::max(0.0, std::abs(xs[static_cast<std::size_t>(j)].delta_f) -
                                 config_.delta_max);
    }
    return phi;
}

double OcpWorkspace::kkt_from_lin(const Linearization& lin, const std::vector<VehicleState>& xs,
                                  const std::vector<ControlInput>& us) const {
    const int n = n_;
    double res = 0.0;

    // primal: shooting defects and hard bounds
    for (int t = 0; t < n; ++t) {
        res = std::max(res, lin.defect[static_cast<std::size_t>(t)].cwiseAbs().maxCoeff());
        res = std::max(res, std::abs(us[static_cast<std::size_t>(t)].omega_f) -
                                config_.omega_max);
    }

    // stationarity wrt controls through the condensed sensitivities
    Eigen::VectorXd stat = Eigen::VectorXd::Zero(2 * n);
    const Eigen::Matrix<double, 4, 1> we =
        config_.terminal_weight_scale * config_.weights.head<4>();
    for (int t = 1; t < n; ++t) {
        const int nc = 2 * t;
        const Eigen::Matrix<double, 6, 1> wr =
            config_.weights.cwiseProduct(lin.r_stage.row(t).transpose());
        for (int k = 0; k < 6; ++k) {
            stat.head(nc).noalias() +=
                lin.G[static_cast<std::size_t>(t)].row(kStageSel[k]).head(nc).transpose() * wr(k);
        }
    }
    {
        Eigen::Matrix<double, 4, Eigen::Dynamic> sg(4, 2 * n);
        for (int k = 0; k < 4; ++k) sg.row(k) = lin.G[static_cast<std::size_t>(n)].row(kTermSel[k]);
        stat.noalias() += sg.transpose() * we.cwiseProduct(lin.r_term);
    }
    for (int j = 1; j <= n; ++j) {
        const Eigen::VectorXd hg =
            lin.G[static_cast<std::size_t>(j)].transpose() * lin.h_grad.row(j - 1).transpose();
        stat.noalias() += hg * dual_h_(j - 1);
        const Eigen::VectorXd dg =
            lin.G[static_cast<std::size_t>(j)].row(6).transpose();  // delta_f row
        stat.noalias() += dg * (dual_delta_(j - 1) - dual_delta_(n + j - 1));
    }
    for (int t = 0; t < n; ++t) {
        stat(2 * t + 1) += dual_omega_(t) - dual_omega_(n + t);
    }
    if (std::getenv("ASNMPC_KKT_DEBUG")) {
        std::fprintf(stderr, "[kkt] primal=%.3e stat=%.3e", res, stat.cwiseAbs().maxCoeff());
    }
    res = std::max(res, stat.cwiseAbs().maxCoeff());

    // complementarity and dual admissibility on the soft constraint; all
    // dual-scale quantities are measured relative to the slack penalty
    for (int j = 1; j <= n; ++j) {
        const double viol = std::max(0.0, lin.h(j - 1) - bound_(j - 1));
        const double gap = std::max(0.0, bound_(j - 1) - lin.h(j - 1));
        const double mu = dual_h_(j - 1);
        const double slack_quad = 1e-2 * config_.slack_penalty;
        if (viol > 1e-7) {
            // slack active: its stationarity pins the multiplier
            res = std::max(res, std::abs(config_.slack_penalty + slack_quad * viol - mu) /
                                    config_.slack_penalty);
        } else {
            res = std::max(res,
                           std::max(0.0, mu - config_.slack_penalty - slack_quad * viol) /
                               config_.slack_penalty);
        }
        res = std::max(res, std::min(mu, gap));
        // hard steering-angle feasibility at the shooting nodes
        res = std::max(res, std::abs(xs[static_cast<std::size_t>(j)].delta_f) -
                                config_.delta_max);
    }
    if (std::getenv("ASNMPC_KKT_DEBUG")) std::fprintf(stderr, " total=%.3e\n", res);
    return res;
}

OcpSolution OcpWorkspace::solve(const OcpSolution* warm_start) {
    if (!data_ready_) throw std::logic_error("solve: problem data not set");
    const int n = n_;
    const double dt = config_.t_step;

    // Feasible-iterate SQP: states are kept as the exact rollout of the
    // current controls, so shooting defects vanish at every iterate and the
    // merit function is the penalized objective itself.
    std::vector<VehicleState> xs(static_cast<std::size_t>(n) + 1);
    std::vector<ControlInput> us(static_cast<std::size_t>(n));
    if (warm_start && static_cast<int>(warm_start->controls.size()) == n) {
        us = warm_start->controls;
    } else {
        for (auto& u : us) u = ControlInput{0.0, 0.0};
    }
    for (auto& u : us) {
        u.omega_f = std::clamp(u.omega_f, -config_.omega_max, config_.omega_max);
    }
    auto roll_states = [&](const std::vector<ControlInput>& controls,
                           std::vector<VehicleState>& states) {
        states[0] = x0_;
        for (int t = 0; t < n; ++t) {
            states[static_cast<std::size_t>(t) + 1] = integrate_step(
                clamp_speed(states[static_cast<std::size_t>(t)], config_.vehicle),
                controls[static_cast<std::size_t>(t)], dt, config_.vehicle);
        }
    };
    roll_states(us, xs);

    dual_h_.setZero();
    dual_delta_.setZero();
    dual_omega_.setZero();

    Linearization lin;
    double kkt = std::numeric_limits<double>::infinity();
    int qp_count = 0;
    bool qp_failed = false;

    const int nz = 3 * n;
    const int mrows = 6 * n;
    QpProblem qp;
    qp.H.resize(nz, nz);
    qp.g.resize(nz);
    qp.C.resize(mrows, nz);
    qp.d.resize(mrows);
    const double slack_quad = 1e-2 * config_.slack_penalty;

    const bool debug = std::getenv("ASNMPC_OCP_DEBUG") != nullptr;
    const bool prof = std::getenv("ASNMPC_OCP_PROF") != nullptr;
    double t_eval = 0.0, t_asm = 0.0, t_qp = 0.0;
    auto now = [] { return std::chrono::steady_clock::now(); };
    using Dms = std::chrono::duration<double, std::milli>;
    double lm_damping = config_.levenberg;  // Levenberg-Marquardt style adaptation
    while (true) {
        auto tp0 = now();
        evaluate(xs, us, lin, true);
        kkt = kkt_from_lin(lin, xs, us);
        t_eval += Dms(now() - tp0).count();
        if (debug) {
            double dmax = 0.0;
            for (const auto& d : lin.defect) dmax = std::max(dmax, d.cwiseAbs().maxCoeff());
            std::fprintf(stderr, "[sqp] it=%d kkt=%.3e cost=%.6e defect=%.3e\n", qp_count, kkt,
                         lin.cost, dmax);
        }
        if (kkt <= config_.qp_tolerance) break;
        if (qp_count >= config_.sqp_max_iters) break;

        // --- condensed QP assembly ---
        auto tp1 = now();
        qp.H.setZero();
        qp.g.setZero();
        qp.C.setZero();

        Eigen::MatrixXd hu = Eigen::MatrixXd::Zero(2 * n, 2 * n);
        Eigen::VectorXd gu = Eigen::VectorXd::Zero(2 * n);
        const Eigen::Matrix<double, 4, 1> we =
            config_.terminal_weight_scale * config_.weights.head<4>();

        Eigen::MatrixXd sg(6, 2 * n);
        for (int t = 1; t < n; ++t) {
            const int nc = 2 * t;
            for (int k = 0; k < 6; ++k) {
                sg.row(k).head(nc) = lin.G[static_cast<std::size_t>(t)].row(kStageSel[k]).head(nc);
            }
            Eigen::Matrix<double, 6, 1> rw;
            for (int k = 0; k < 6; ++k) {
                rw(k) = lin.r_stage(t, k) + lin.w[static_cast<std::size_t>(t)](kStageSel[k]);
            }
            hu.topLeftCorner(nc, nc).noalias() +=
                sg.leftCols(nc).transpose() * config_.weights.asDiagonal() * sg.leftCols(nc);
            gu.head(nc).noalias() +=
                sg.leftCols(nc).transpose() * config_.weights.cwiseProduct(rw);
        }
        {
            Eigen::MatrixXd sge(4, 2 * n);
            for (int k = 0; k < 4; ++k) {
                sge.row(k) = lin.G[static_cast<std::size_t>(n)].row(kTermSel[k]);
            }
            Eigen::Matrix<double, 4, 1> rw;
            for (int k = 0; k < 4; ++k) {
                rw(k) = lin.r_term(k) + lin.w[static_cast<std::size_t>(n)](kTermSel[k]);
            }
            hu.noalias() += sge.transpose() * we.asDiagonal() * sge;
            gu.noalias() += sge.transpose() * we.cwiseProduct(rw);
        }

        // PSD curvature of the (quadratic) acceleration constraint, weighted
        // by the lagged multipliers; keeps the model honest once h-rows are
        // active without breaking positive definiteness
        for (int j = 1; j <= n; ++j) {
            const double mu = dual_h_(j - 1);
            if (mu <= 0.0) continue;
            const VehicleState& xj = xs[static_cast<std::size_t>(j)];
            const Eigen::MatrixXd& gj = lin.G[static_cast<std::size_t>(j)];
            Eigen::RowVectorXd lat_row =
                (xj.psi_dot * gj.row(3) + xj.v_lon * gj.row(5)) / config_.a_y_max;
            Eigen::RowVectorXd lon_row = gj.row(7) / config_.a_x_max;
            hu.noalias() += (2.0 * mu) * lat_row.transpose() * lat_row;
            hu.noalias() += (2.0 * mu) * lon_row.transpose() * lon_row;
        }

        qp.H.topLeftCorner(2 * n, 2 * n) = hu;
        qp.H.topLeftCorner(2 * n, 2 * n) =
            0.5 * (qp.H.topLeftCorner(2 * n, 2 * n) +
                   qp.H.topLeftCorner(2 * n, 2 * n).transpose()).eval();
        qp.H.topLeftCorner(2 * n, 2 * n).diagonal().array() += lm_damping;
        qp.H.bottomRightCorner(n, n).diagonal().setConstant(slack_quad);
        qp.g.head(2 * n) = gu;
        qp.g.tail(n).setConstant(config_.slack_penalty);

        for (int j = 1; j <= n; ++j) {
            const int row_h = j - 1;
            const int row_s = n + j - 1;
            const int row_du = 2 * n + j - 1;
            const int row_dl = 3 * n + j - 1;
            const Eigen::VectorXd hg =
                lin.G[static_cast<std::size_t>(j)].transpose() *
                lin.h_grad.row(j - 1).transpose();
            qp.C.row(row_h).head(2 * n) = hg.transpose();
            qp.C(row_h, 2 * n + j - 1) = -1.0;
            const double hw = lin.h_grad.row(j - 1).dot(lin.w[static_cast<std::size_t>(j)]);
            qp.d(row_h) = bound_(j - 1) - lin.h(j - 1) - hw;

            qp.C(row_s, 2 * n + j - 1) = -1.0;
            qp.d(row_s) = 0.0;

            const Eigen::VectorXd dg = lin.G[static_cast<std::size_t>(j)].row(6).transpose();
            const double dshift = xs[static_cast<std::size_t>(j)].delta_f +
                                  lin.w[static_cast<std::size_t>(j)](6);
            qp.C.row(row_du).head(2 * n) = dg.transpose();
            qp.d(row_du) = config_.delta_max - dshift;
            qp.C.row(row_dl).head(2 * n) = -dg.transpose();
            qp.d(row_dl) = config_.delta_max + dshift;
        }
        for (int t = 0; t < n; ++t) {
            const int row_up = 4 * n + t;
            const int row_lo = 5 * n + t;
            qp.C(row_up, 2 * t + 1) = 1.0;
            qp.d(row_up) = config_.omega_max - us[static_cast<std::size_t>(t)].omega_f;
            qp.C(row_lo, 2 * t + 1) = -1.0;
            qp.d(row_lo) = config_.omega_max + us[static_cast<std::size_t>(t)].omega_f;
        }

        t_asm += Dms(now() - tp1).count();
        auto tp2 = now();
        // Fast path: with all slack variables pinned at zero this is a plain
        // hard-constrained QP in the controls. By exact-penalty equivalence
        // its solution matches the slacked QP whenever it is feasible with
        // every h-row multiplier below the penalty; otherwise fall back to
        // the full slacked problem.
        QpResult sol;
        bool used_fast = false;
        {
            QpProblem qph;
            qph.H = qp.H.topLeftCorner(2 * n, 2 * n);
            qph.g = qp.g.head(2 * n);
            qph.C.resize(5 * n, 2 * n);
            qph.d.resize(5 * n);
            qph.C.topRows(n) = qp.C.topRows(n).leftCols(2 * n);
            qph.d.head(n) = qp.d.head(n);
            qph.C.bottomRows(4 * n) = qp.C.bottomRows(4 * n).leftCols(2 * n);
            qph.d.tail(4 * n) = qp.d.tail(4 * n);
            QpResult fast = solve_qp(qph);
            if (fast.status == QpResult::Status::Optimal &&
                fast.dual.head(n).maxCoeff() <= config_.slack_penalty) {
                used_fast = true;
                sol.status = QpResult::Status::Optimal;
                sol.x.resize(3 * n);
                sol.x.head(2 * n) = fast.x;
                sol.x.tail(n).setZero();
                sol.dual.resize(6 * n);
                sol.dual.head(n) = fast.dual.head(n);
                sol.dual.segment(n, n).setZero();
                sol.dual.tail(4 * n) = fast.dual.tail(4 * n);
                sol.active_set_changes = fast.active_set_changes;
            }
        }
        if (!used_fast) {
            sol = solve_qp(qp);
            if (sol.status == QpResult::Status::NotPositiveDefinite) {
                qp.H.topLeftCorner(2 * n, 2 * n).diagonal().array() +=
                    1e-6 * (1.0 + hu.diagonal().maxCoeff());
                sol = solve_qp(qp);
            }
        }
        t_qp += Dms(now() - tp2).count();
        ++qp_count;
        if (sol.status != QpResult::Status::Optimal) {
            qp_failed = true;
            break;
        }

        dual_h_ = sol.dual.segment(0, n);
        dual_delta_ = sol.dual.segment(2 * n, 2 * n);
        dual_omega_ = sol.dual.segment(4 * n, 2 * n);

        const Eigen::VectorXd du = sol.x.head(2 * n);

        // model decrease predicted by the QP; drives the Armijo condition
        const double pred = std::max(
            0.0, -(qp.g.dot(sol.x) + 0.5 * sol.x.dot(qp.H.selfadjointView<Eigen::Lower>() *
                                                     sol.x)));

        // backtracking line search on the penalized objective; trial states
        // are the exact rollout of the trial controls

        const double phi0 = merit(xs, us);
        // once the model improvement is below merit resolution we are in the
        // polish phase: take full steps on the QP's word
        const bool polish = pred <= 1e-9 * (1.0 + std::abs(phi0));
        double alpha = 1.0;
        bool accepted = false;
        std::vector<VehicleState> xs_try(static_cast<std::size_t>(n) + 1);
        std::vector<ControlInput> us_try(static_cast<std::size_t>(n));
        for (int back = 0; back < 11; ++back) {
            for (int t = 0; t < n; ++t) {
                us_try[static_cast<std::size_t>(t)].jerk =
                    us[static_cast<std::size_t>(t)].jerk + alpha * du(2 * t);
                us_try[static_cast<std::size_t>(t)].omega_f =
                    std::clamp(us[static_cast<std::size_t>(t)].omega_f + alpha * du(2 * t + 1),
                               -config_.omega_max, config_.omega_max);
            }
            roll_states(us_try, xs_try);
            const double phi_try = merit(xs_try, us_try);
            if (debug) {
                std::fprintf(stderr, "[ls]    alpha=%.4f phi=%.9e phi0=%.9e\n", alpha, phi_try,
                             phi0);
            }
            if (polish || phi_try <= phi0 - 1e-4 * alpha * pred) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (debug) {
            std::fprintf(stderr,
                         "[sqp]   qp_changes=%d step=%.3e alpha=%.4f accepted=%d lm=%.1e\n",
                         sol.active_set_changes, du.cwiseAbs().maxCoeff(), alpha,
                         accepted ? 1 : 0, lm_damping);
        }
        if (!accepted) {
            // step rejected outright: damp harder and retry, stall only once
            // damping is saturated
            if (lm_damping < 1e8) {
                lm_damping = std::min(1e8, std::max(lm_damping * 30.0, 1e-4));
                continue;
            }
            break;
        }
        // adapt damping from the accepted step length
        if (alpha >= 0.99) {
            lm_damping = std::max(config_.levenberg, lm_damping / 3.0);
        } else if (alpha < 0.24) {
            lm_damping = std::min(1e8, std::max(lm_damping * 5.0, 1e-4));
        }
        xs = xs_try;
        us = us_try;
    }

    if (prof) {
        std::fprintf(stderr, "[prof] eval=%.2f asm=%.2f qp=%.2f qps=%d\n", t_eval, t_asm, t_qp,
                     qp_count);
    }
    OcpSolution out;
    out.controls = us;
    out.states = xs;
    out.kkt_residual = kkt;
    out.sqp_iterations = qp_count;
    double max_slack = 0.0;
    for (int j = 1; j <= n; ++j) {
        max_slack = std::max(max_slack, lin.h(j - 1) - bound_(j - 1));
    }
    out.max_slack = std::max(0.0, max_slack);

    if (out.max_slack > config_.slack_feasible_threshold) {
        out.status = SolveStatus::Infeasible;
    } else if (kkt <= config_.qp_tolerance && !qp_failed) {
        out.status = SolveStatus::Solved;
    } else {
        out.status = SolveStatus::MaxIterations;
    }
    return out;
}

double OcpWorkspace::kkt_residual(const OcpSolution& candidate) const {
    if (static_cast<int>(candidate.controls.size()) != n_ ||
        static_cast<int>(candidate.states.size()) != n_ + 1) {
        throw std::invalid_argument("kkt_residual: candidate dimensions mismatch");
    }
    Linearization lin;
    evaluate(candidate.states, candidate.controls, lin, true);
    return kkt_from_lin(lin, candidate.states, candidate.controls);
}

OcpSolution reroll_solution(const OcpSolution& prev, const VehicleState& new_initial,
                            const SnmpcConfig& config) {
    const int n = config.n_nodes();
    if (static_cast<int>(prev.controls.size()) != n) {
        throw std::invalid_argument("reroll_solution: control count mismatch");
    }
    OcpSolution out;
    out.controls = prev.controls;
    out.states.resize(static_cast<std::size_t>(n) + 1);
    out.states[0] = new_initial;
    for (int t = 0; t < n; ++t) {
        VehicleState s = out.states[static_cast<std::size_t>(t)];
        if (s.v_lon < config.vehicle.v_lon_min_model) s.v_lon = config.vehicle.v_lon_min_model;
        out.states[static_cast<std::size_t>(t) + 1] = integrate_step(
            s, out.controls[static_cast<std::size_t>(t)], config.t_step, config.vehicle);
    }
    out.status = prev.status;
    return out;
}

OcpSolution shift_warm_start(const OcpSolution& prev, const VehicleState& new_initial,
                             const SnmpcConfig& config) {
    const int n = config.n_nodes();
    if (static_cast<int>(prev.controls.size()) != n) {
        throw std::invalid_argument("shift_warm_start: control count mismatch");
    }
    OcpSolution out;
    out.controls.resize(static_cast<std::size_t>(n));
    for (int t = 0; t + 1 < n; ++t) out.controls[static_cast<std::size_t>(t)] =
        prev.controls[static_cast<std::size_t>(t) + 1];
    out.controls[static_cast<std::size_t>(n) - 1] = prev.controls[static_cast<std::size_t>(n) - 1];

    out.states.resize(static_cast<std::size_t>(n) + 1);
    out.states[0] = new_initial;
    for (int t = 0; t < n; ++t) {
        VehicleState s = out.states[static_cast<std::size_t>(t)];
        if (s.v_lon < config.vehicle.v_lon_min_model) s.v_lon = config.vehicle.v_lon_min_model;
        out.states[static_cast<std::size_t>(t) + 1] =
            integrate_step(s, out.controls[static_cast<std::size_t>(t)], config.t_step,
                           config.vehicle);
    }
    out.status = prev.status;
    return out;
}

}  // namespace asnmpc
