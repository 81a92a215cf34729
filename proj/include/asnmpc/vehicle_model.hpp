#pragma once

#include <Eigen/Dense>

namespace asnmpc {

/// Planar dynamic single-track state.
/// Layout: [x_pos, y_pos, psi, v_lon, v_lat, psi_dot, delta_f, a]
struct VehicleState {
    double x_pos = 0.0;    ///< world x position [m]
    double y_pos = 0.0;    ///< world y position [m]
    double psi = 0.0;      ///< heading [rad], unwrapped
    double v_lon = 0.0;    ///< body longitudinal velocity [m/s]
    double v_lat = 0.0;    ///< body lateral velocity [m/s]
    double psi_dot = 0.0;  ///< yaw rate [rad/s]
    double delta_f = 0.0;  ///< front steering angle [rad]
    double a = 0.0;        ///< longitudinal acceleration state [m/s^2]

    Eigen::Matrix<double, 8, 1> to_vector() const;
    static VehicleState from_vector(const Eigen::Matrix<double, 8, 1>& v);
    bool all_finite() const;
};

using StateVector = Eigen::Matrix<double, 8, 1>;
using VehicleStateDerivative = StateVector;

struct ControlInput {
    double jerk = 0.0;     ///< longitudinal jerk [m/s^3]
    double omega_f = 0.0;  ///< front steering rate [rad/s]
};

struct VehicleParams {
    double mass = 2500.0;                      ///< [kg]
    double yaw_inertia = 4800.0;               ///< [kg m^2]
    double dist_front = 1.5;                   ///< CoG to front axle [m]
    double dist_rear = 1.6;                    ///< CoG to rear axle [m]
    double cornering_stiffness_front = 9.0e4;  ///< [N/rad]
    double cornering_stiffness_rear = 1.1e5;   ///< [N/rad]
    double v_lon_min_model = 1.0;              ///< slip-angle low-speed guard [m/s]

    double wheelbase() const { return dist_front + dist_rear; }
    void validate() const;  // throws std::invalid_argument on nonpositive entries
};

/// Continuous-time dynamics xdot = f(x, u).
///
/// Kinematics couple body velocities into world pose rates; lateral dynamics
/// use linear tire forces (cornering stiffness times slip angle). Steering
/// angle and acceleration are integrator states driven directly by the
/// inputs. Throws std::domain_error when v_lon is below the low-speed guard,
/// where slip angles are not defined.
VehicleStateDerivative dynamics_rhs(const VehicleState& state, const ControlInput& input,
                                    const VehicleParams& params);

/// Same right-hand side with the slip-angle denominator smoothed by
/// max(v_lon, v_lon_min_model) instead of the precondition check. This is
/// the evaluation integrators use at intermediate stages.
VehicleStateDerivative dynamics_rhs_smoothed(const VehicleState& state, const ControlInput& input,
                                             const VehicleParams& params);

/// One explicit RK4 step of length dt. dt == 0 returns the state unchanged;
/// dt < 0 throws std::invalid_argument. Intermediate stage evaluations guard
/// the slip-angle denominator with max(v_lon, v_lon_min_model) so transient
/// stage dips below the guard are well defined; the entry state itself must
/// satisfy the dynamics_rhs precondition.
VehicleState integrate_step(const VehicleState& state, const ControlInput& input, double dt,
                            const VehicleParams& params);

/// Central finite-difference Jacobians of the continuous dynamics,
/// A = df/dx (8x8) and B = df/du (8x2), at the given operating point.
/// Per-component step is eps * max(1, |component|).
void linearize_fd(const VehicleState& state, const ControlInput& input,
                  const VehicleParams& params, double eps, Eigen::Matrix<double, 8, 8>& A,
                  Eigen::Matrix<double, 8, 2>& B);

/// Hand-derived Jacobians of the continuous dynamics at the operating point.
/// Serves as the independent cross-check for linearize_fd.
void analytic_jacobians(const VehicleState& state, const ControlInput& input,
                        const VehicleParams& params, Eigen::Matrix<double, 8, 8>& A,
                        Eigen::Matrix<double, 8, 2>& B);

/// Combined acceleration usage h(x) = (a_lon/a_x_max)^2 + (a_lat/a_y_max)^2
/// with a_lon = a and a_lat = v_lon * psi_dot. The constrained quantity is
/// h <= 1.
double combined_accel_fraction(const VehicleState& state, double a_x_max, double a_y_max);

/// Gradient of combined_accel_fraction with respect to the state vector.
Eigen::Matrix<double, 8, 1> combined_accel_fraction_gradient(const VehicleState& state,
                                                             double a_x_max, double a_y_max);

}  // namespace asnmpc
