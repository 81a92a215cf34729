#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "asnmpc/pce.hpp"
#include "asnmpc/track.hpp"
#include "asnmpc/vehicle_model.hpp"

namespace asnmpc {

struct SnmpcConfig {
    double t_pred = 3.04;  ///< prediction horizon [s]
    double t_step = 0.08;  ///< shooting interval [s]

    /// stage weights over the residual (x, y, psi, v_lon, delta_f, a)
    Eigen::Matrix<double, 6, 1> weights{(Eigen::Matrix<double, 6, 1>() << 8.0, 8.0, 4.0, 2.0,
                                         0.5, 0.1)
                                            .finished()};
    double terminal_weight_scale = 10.0;  ///< applied to the (x, y, psi, v_lon) block

    double a_x_max = 4.5;    ///< [m/s^2]
    double a_y_max = 5.0;    ///< [m/s^2]
    double delta_max = 0.61;   ///< steering angle bound [rad]
    double omega_max = 0.322;  ///< steering rate bound [rad/s]

    int sqp_max_iters = 30;
    double qp_tolerance = 1e-6;
    double slack_penalty = 1e4;           ///< L1 weight on constraint slack
    double slack_feasible_threshold = 1e-3;
    double levenberg = 1e-8;  ///< Hessian damping
    double fd_eps = 1e-6;     ///< linearize_fd step scale

    VehicleParams vehicle;

    int n_nodes() const { return static_cast<int>(std::lround(t_pred / t_step)); }
    void validate() const;  // throws std::invalid_argument
};

enum class SolveStatus { Solved, MaxIterations, Infeasible };

const char* to_string(SolveStatus s);

struct OcpSolution {
    std::vector<ControlInput> controls;  // N_p
    std::vector<VehicleState> states;    // N_p + 1 (mean trajectory)
    SolveStatus status = SolveStatus::MaxIterations;
    double kkt_residual = 0.0;
    double max_slack = 0.0;
    int sqp_iterations = 0;
};

/// Stage tracking targets derived from a reference window: per-node
/// (x, y, psi, v_lon, delta_ref = 0, a_ref) rows plus the terminal
/// (x, y, psi, v_lon) target. Reference headings are unwrapped against the
/// initial heading so residuals never jump by 2*pi.
struct StageTargets {
    Eigen::MatrixXd stage;        // N_p x 6
    Eigen::Matrix<double, 4, 1> terminal;
};

StageTargets build_stage_targets(std::span<const RacelinePoint> refs, double initial_psi,
                                 double t_step);

/// Tracking cost of rolling x0 forward under the control sequence
/// (single-shooting evaluation of the discretized objective).
double rollout_cost(const SnmpcConfig& config, const VehicleState& x0,
                    const StageTargets& targets, std::span<const ControlInput> controls);

/// Multiple-shooting SQP workspace for the robustified tracking OCP.
///
/// One instance per controller; not safe for concurrent use, but distinct
/// instances are independent.
class OcpWorkspace {
public:
    explicit OcpWorkspace(const SnmpcConfig& config);

    /// Install initial mean state, reference window (N_p + 1 points) and the
    /// per-node constraint tightenings (N_p values, mapped to state nodes
    /// 1..N_p; entries at or beyond the UPH node count must be zero).
    void set_problem_data(const VehicleState& initial_mean, std::span<const RacelinePoint> refs,
                          std::span<const double> tightenings, const SnmpcParams& params);

    /// Gauss-Newton SQP with a condensed dense QP per iteration. Input boxes
    /// and steering-angle rows are hard; the robustified acceleration
    /// constraint is soft with an L1 slack penalty. Never throws on
    /// infeasibility; the status field reports it.
    OcpSolution solve(const OcpSolution* warm_start);

    /// Max-norm KKT residual (stationarity, defects, complementarity and
    /// hard-bound feasibility) of a candidate, evaluated with the multipliers
    /// stored from the last QP solve.
    double kkt_residual(const OcpSolution& candidate) const;

    const SnmpcConfig& config() const { return config_; }

private:
    struct Linearization;

    SnmpcConfig config_;
    int n_ = 0;  // shooting nodes

    VehicleState x0_;
    StageTargets targets_;
    Eigen::VectorXd bound_;  // N: right-hand side 1 - backoff per state node 1..N
    bool data_ready_ = false;

    // multipliers from the most recent QP (sized on first solve)
    Eigen::VectorXd dual_h_;       // N
    Eigen::VectorXd dual_delta_;   // 2N (upper, lower)
    Eigen::VectorXd dual_omega_;   // 2N

    void evaluate(const std::vector<VehicleState>& xs, const std::vector<ControlInput>& us,
                  Linearization& lin, bool with_jacobians) const;
    double merit(const std::vector<VehicleState>& xs,
                 const std::vector<ControlInput>& us) const;
    double kkt_from_lin(const Linearization& lin, const std::vector<VehicleState>& xs,
                        const std::vector<ControlInput>& us) const;
};

/// Shift the previous solution one node (last control repeated) and re-roll
/// the state trajectory from the new initial mean.
OcpSolution shift_warm_start(const OcpSolution& prev, const VehicleState& new_initial,
                             const SnmpcConfig& config);

/// Keep the previous control sequence but re-roll the states from a new
/// initial mean (used between node-shift instants when the controller runs
/// faster than the shooting grid).
OcpSolution reroll_solution(const OcpSolution& prev, const VehicleState& new_initial,
                            const SnmpcConfig& config);

}  // namespace asnmpc
