#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "asnmpc/ocp.hpp"
#include "asnmpc/rng.hpp"

using namespace asnmpc;

namespace {

std::vector<RacelinePoint> straight_refs(int count, double x0, double v, double t_step) {
    std::vector<RacelinePoint> refs(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) {
        auto& p = refs[static_cast<std::size_t>(t)];
        p.s = x0 + v * t * t_step;
        p.x = p.s;
        p.y = 0.0;
        p.psi = 0.0;
        p.v_ref = v;
        p.curvature = 0.0;
    }
    return refs;
}

std::vector<RacelinePoint> accelerating_refs(int count, double v0, double accel, double t_step) {
    std::vector<RacelinePoint> refs(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) {
        const double tau = t * t_step;
        auto& p = refs[static_cast<std::size_t>(t)];
        p.x = v0 * tau + 0.5 * accel * tau * tau;
        p.s = p.x;
        p.y = 0.0;
        p.psi = 0.0;
        p.v_ref = v0 + accel * tau;
        p.curvature = 0.0;
    }
    return refs;
}

std::vector<RacelinePoint> arc_refs(int count, double radius, double v, double t_step) {
    std::vector<RacelinePoint> refs(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) {
        const double phi = v * t * t_step / radius;
        auto& p = refs[static_cast<std::size_t>(t)];
        p.x = radius * std::sin(phi);
        p.y = radius * (1.0 - std::cos(phi));
        p.psi = phi;
        p.v_ref = v;
        p.curvature = 1.0 / radius;
        p.s = v * t * t_step;
    }
    return refs;
}

VehicleState on_straight(double x, double v) {
    VehicleState s;
    s.x_pos = x;
    s.v_lon = v;
    return s;
}

}  // namespace

TEST_CASE("configuration: node count and validation") {
    SnmpcConfig cfg;
    CHECK(cfg.n_nodes() == 38);

    SnmpcConfig single;
    single.t_pred = 0.08;
    single.t_step = 0.08;
    CHECK(single.n_nodes() == 1);
    CHECK_NOTHROW(OcpWorkspace{single});

    SnmpcConfig bad;
    bad.weights(2) = -1.0;
    CHECK_THROWS_AS(OcpWorkspace{bad}, std::invalid_argument);
}

TEST_CASE("stationary on a straight reference: zero controls, tiny KKT") {
    SnmpcConfig cfg;
    OcpWorkspace ws(cfg);
    const int n = cfg.n_nodes();
    auto refs = straight_refs(n + 1, 0.0, 20.0, cfg.t_step);
    std::vector<double> tight(static_cast<std::size_t>(n), 0.0);
    ws.set_problem_data(on_straight(0.0, 20.0), refs, tight, SnmpcParams{0.0, 25});

    auto sol = ws.solve(nullptr);
    CHECK(sol.status == SolveStatus::Solved);
    CHECK(sol.kkt_residual <= 1e-6);
    for (const auto& u : sol.controls) {
        CHECK(std::abs(u.jerk) < 1e-6);
        CHECK(std::abs(u.omega_f) < 1e-6);
    }
}

TEST_CASE("tracking from an offset converges and respects hard bounds") {
    SnmpcConfig cfg;
    OcpWorkspace ws(cfg);
    const int n = cfg.n_nodes();
    auto refs = straight_refs(n + 1, 0.0, 20.0, cfg.t_step);
    std::vector<double> tight(static_cast<std::size_t>(n), 0.0);

    VehicleState x0 = on_straight(0.0, 20.0);
    x0.y_pos = 0.25;  // lateral offset
    x0.psi = -0.01;
    ws.set_problem_data(x0, refs, tight, SnmpcParams{0.0, 25});

    auto sol = ws.solve(nullptr);
    CHECK(sol.status == SolveStatus::Solved);
    CHECK(sol.kkt_residual <= 1e-6);
    for (const auto& u : sol.controls) {
        CHECK(std::abs(u.omega_f) <= cfg.omega_max + 1e-9);
    }
    for (const auto& s : sol.states) {
        CHECK(std::abs(s.delta_f) <= cfg.delta_max + 1e-9);
    }
    // terminal state moved toward the reference
    CHECK(std::abs(sol.states.back().y_pos) < 0.12);
}

TEST_CASE("reference beyond the acceleration limit saturates h at its bound") {
    SnmpcConfig cfg;
    OcpWorkspace ws(cfg);
    const int n = cfg.n_nodes();
    auto refs = accelerating_refs(n + 1, 15.0, 8.0, cfg.t_step);  // demands 8 m/s^2 > 4.5
    std::vector<double> tight(static_cast<std::size_t>(n), 0.0);
    ws.set_problem_data(on_straight(0.0, 15.0), refs, tight, SnmpcParams{0.0, 25});

    auto sol = ws.solve(nullptr);
    CHECK(sol.status == SolveStatus::Solved);
    CHECK(sol.max_slack <= 1e-6);
    double h_max = 0.0;
    for (std::size_t j = 1; j < sol.states.size(); ++j) {
        h_max = std::max(h_max,
                         combined_accel_fraction(sol.states[j], cfg.a_x_max, cfg.a_y_max));
    }
    CHECK(h_max == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("backoff beyond one yields an infeasible status") {
    SnmpcConfig cfg;
    OcpWorkspace ws(cfg);
    const int n = cfg.n_nodes();
    auto refs = straight_refs(n + 1, 0.0, 20.0, cfg.t_step);
    std::vector<double> tight(static_cast<std::size_t>(n), 1.2);  // bound = -0.2 < 0 <= h
    ws.set_problem_data(on_straight(0.0, 20.0), refs, tight, SnmpcParams{2.0, n});

    auto sol = ws.solve(nullptr);
    CHECK(sol.status == SolveStatus::Infeasible);
    CHECK(sol.max_slack > 1e-3);
}

TEST_CASE("tightenings beyond the UPH are rejected") {
    SnmpcConfig cfg;
    OcpWorkspace ws(cfg);
    const int n = cfg.n_nodes();
    auto refs = straight_refs(n + 1, 0.0, 20.0, cfg.t_step);
    std::vector<double> tight(static_cast<std::size_t>(n), 0.0);
    tight[15] = 0.1;
    CHECK_THROWS_AS(ws.set_problem_data(on_straight(0.0, 20.0), refs, tight,
                                        SnmpcParams{0.42, 10}),
                    std::invalid_argument);
    // negative tightening also rejected
    tight[15] = -0.1;
    CHECK_THROWS_AS(ws.set_problem_data(on_straight(0.0, 20.0), refs, tight,
                                        SnmpcParams{0.42, 38}),
                    std::invalid_argument);
}

TEST_CASE("cost is nondecreasing in the applied backoff") {
    SnmpcConfig cfg;
    cfg.sqp_max_iters = 80;
    OcpWorkspace ws(cfg);
    const int n = cfg.n_nodes();
    // accelerating through a wide arc so the constraint binds but stays
    // reachable at every backoff level
    const double radius = 150.0, v0 = 18.0, accel = 1.5;
    std::vector<RacelinePoint> refs(static_cast<std::size_t>(n) + 1);
    for (int t = 0; t <= n; ++t) {
        const double tau = t * cfg.t_step;
        const double arc = v0 * tau + 0.5 * accel * tau * tau;
        auto& p = refs[static_cast<std::size_t>(t)];
        p.s = arc;
        p.psi = arc / radius;
        p.x = radius * std::sin(p.psi);
        p.y = radius * (1.0 - std::cos(p.psi));
        p.v_ref = v0 + accel * tau;
        p.curvature = 1.0 / radius;
    }
    VehicleState x0;
    x0.v_lon = 18.0;
    x0.psi_dot = 18.0 / 150.0;
    x0.delta_f = 0.021;
    x0.a = accel;

    double prev_cost = -1.0;
    for (double backoff : {0.0, 0.35, 0.45, 0.55}) {
        std::vector<double> tight(static_cast<std::size_t>(n), backoff);
        ws.set_problem_data(x0, refs, tight, SnmpcParams{1.0, n});
        auto sol = ws.solve(nullptr);
        REQUIRE(sol.status == SolveStatus::Solved);
        const auto targets = build_stage_targets(refs, x0.psi, cfg.t_step);
        const double cost = rollout_cost(cfg, x0, targets, sol.controls);
        CHECK(cost >= prev_cost - 1e-9);
        prev_cost = cost;
    }
}

TEST_CASE("solutions are deterministic") {
    SnmpcConfig cfg;
    OcpWorkspace ws(cfg);
    const int n = cfg.n_nodes();
    auto refs = arc_refs(n + 1, 100.0, 18.0, cfg.t_step);
    VehicleState x0;
    x0.v_lon = 18.0;
    x0.psi_dot = 0.18;
    std::vector<double> tight(static_cast<std::size_t>(n), 0.0);
    for (int k = 0; k < 12; ++k) tight[static_cast<std::size_t>(k)] = 0.02 * k;

    ws.set_problem_data(x0, refs, tight, SnmpcParams{0.8, 12});
    auto a = ws.solve(nullptr);
    ws.set_problem_data(x0, refs, tight, SnmpcParams{0.8, 12});
    auto b = ws.solve(nullptr);
    REQUIRE(a.controls.size() == b.controls.size());
    for (std::size_t t = 0; t < a.controls.size(); ++t) {
        CHECK(a.controls[t].jerk == b.controls[t].jerk);
        CHECK(a.controls[t].omega_f == b.controls[t].omega_f);
    }
    CHECK(a.kkt_residual == b.kkt_residual);
}

TEST_CASE("kkt residual increases when a converged control is perturbed") {
    SnmpcConfig cfg;
    OcpWorkspace ws(cfg);
    const int n = cfg.n_nodes();
    auto refs = straight_refs(n + 1, 0.0, 20.0, cfg.t_step);
    std::vector<double> tight(static_cast<std::size_t>(n), 0.0);
    VehicleState x0 = on_straight(0.0, 20.0);
    x0.y_pos = 0.3;
    ws.set_problem_data(x0, refs, tight, SnmpcParams{0.0, 25});
    auto sol = ws.solve(nullptr);
    REQUIRE(sol.status == SolveStatus::Solved);

    const double base = ws.kkt_residual(sol);
    OcpSolution perturbed = sol;
    perturbed.controls[5].jerk += 0.1;
    CHECK(ws.kkt_residual(perturbed) > base + 1e-4);
}

TEST_CASE("shift_warm_start shifts controls and re-rolls states") {
    SnmpcConfig cfg;
    const int n = cfg.n_nodes();
    OcpSolution prev;
    prev.controls.resize(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        prev.controls[static_cast<std::size_t>(t)] = ControlInput{0.01 * t, 0.001 * t};
    }
    prev.states.resize(static_cast<std::size_t>(n) + 1);

    VehicleState x0 = on_straight(5.0, 22.0);
    auto shifted = shift_warm_start(prev, x0, cfg);
    for (int t = 0; t + 1 < n; ++t) {
        CHECK(shifted.controls[static_cast<std::size_t>(t)].jerk ==
              prev.controls[static_cast<std::size_t>(t) + 1].jerk);
    }
    CHECK(shifted.controls.back().jerk == prev.controls.back().jerk);

    // re-rolled states satisfy the shooting constraints to integrator accuracy
    for (int t = 0; t < n; ++t) {
        auto next = integrate_step(shifted.states[static_cast<std::size_t>(t)],
                                   shifted.controls[static_cast<std::size_t>(t)], cfg.t_step,
                                   cfg.vehicle);
        CHECK((next.to_vector() -
               shifted.states[static_cast<std::size_t>(t) + 1].to_vector())
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
    }

    // constant sequence shifts to itself
    OcpSolution constant;
    constant.controls.assign(static_cast<std::size_t>(n), ControlInput{0.5, -0.01});
    constant.states.resize(static_cast<std::size_t>(n) + 1);
    auto same = shift_warm_start(constant, x0, cfg);
    for (const auto& u : same.controls) {
        CHECK(u.jerk == 0.5);
        CHECK(u.omega_f == -0.01);
    }
}

TEST_CASE("warm started resolve terminates quickly at the same point") {
    SnmpcConfig cfg;
    OcpWorkspace ws(cfg);
    const int n = cfg.n_nodes();
    auto refs = arc_refs(n + 1, 120.0, 20.0, cfg.t_step);
    VehicleState x0;
    x0.v_lon = 20.0;
    x0.psi_dot = 20.0 / 120.0;
    std::vector<double> tight(static_cast<std::size_t>(n), 0.0);
    ws.set_problem_data(x0, refs, tight, SnmpcParams{0.0, 25});
    auto cold = ws.solve(nullptr);
    REQUIRE(cold.status == SolveStatus::Solved);

    ws.set_problem_data(x0, refs, tight, SnmpcParams{0.0, 25});
    auto warm = ws.solve(&cold);
    CHECK(warm.status == SolveStatus::Solved);
    CHECK(warm.sqp_iterations <= cold.sqp_iterations);
    for (std::size_t t = 0; t < warm.controls.size(); ++t) {
        CHECK(std::abs(warm.controls[t].jerk - cold.controls[t].jerk) < 1e-3);
    }
}

// independent oracle: single-shooting gradient descent (Barzilai-Borwein with
// projection onto the steering-rate box) over the same rollout cost
TEST_CASE("five-node nominal problem matches a single-shooting descent oracle") {
    SnmpcConfig cfg;
    cfg.t_pred = 0.4;
    cfg.t_step = 0.08;
    OcpWorkspace ws(cfg);
    const int n = cfg.n_nodes();
    REQUIRE(n == 5);

    auto refs = straight_refs(n + 1, 0.0, 15.0, cfg.t_step);
    VehicleState x0 = on_straight(0.0, 15.0);
    x0.y_pos = 0.05;
    x0.psi = 0.005;
    std::vector<double> tight(static_cast<std::size_t>(n), 0.0);
    ws.set_problem_data(x0, refs, tight, SnmpcParams{0.0, 3});
    auto sol = ws.solve(nullptr);
    REQUIRE(sol.status == SolveStatus::Solved);

    const auto targets = build_stage_targets(refs, x0.psi, cfg.t_step);
    const double sqp_cost = rollout_cost(cfg, x0, targets, sol.controls);

    // oracle
    auto cost_of = [&](const Eigen::VectorXd& u) {
        std::vector<ControlInput> controls(static_cast<std::size_t>(n));
        for (int t = 0; t < n; ++t) {
            controls[static_cast<std::size_t>(t)] = ControlInput{u(2 * t), u(2 * t + 1)};
        }
        return rollout_cost(cfg, x0, targets, controls);
    };
    auto grad_of = [&](const Eigen::VectorXd& u) {
        Eigen::VectorXd g(u.size());
        for (int i = 0; i < u.size(); ++i) {
            Eigen::VectorXd up = u, um = u;
            up(i) += 1e-6;
            um(i) -= 1e-6;
            g(i) = (cost_of(up) - cost_of(um)) / 2e-6;
        }
        return g;
    };
    auto project = [&](Eigen::VectorXd u) {
        for (int t = 0; t < n; ++t) {
            u(2 * t + 1) = std::clamp(u(2 * t + 1), -cfg.omega_max, cfg.omega_max);
        }
        return u;
    };

    Eigen::VectorXd u = Eigen::VectorXd::Zero(2 * n);
    Eigen::VectorXd g = grad_of(u);
    double step = 1e-3;
    Eigen::VectorXd u_prev = u, g_prev = g;
    for (int it = 0; it < 20000; ++it) {
        u = project(u_prev - step * g_prev);
        g = grad_of(u);
        const Eigen::VectorXd du = u - u_prev;
        const Eigen::VectorXd dg = g - g_prev;
        const double denom = dg.squaredNorm();
        step = denom > 1e-18 ? std::abs(du.dot(dg)) / denom : 1e-3;
        if (du.cwiseAbs().maxCoeff() < 1e-12) break;
        u_prev = u;
        g_prev = g;
    }
    const double oracle_cost = cost_of(u);

    CHECK(std::abs(sqp_cost - oracle_cost) <= 1e-4 * std::max(1.0, std::abs(oracle_cost)));
}
