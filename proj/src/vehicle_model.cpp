#include "asnmpc/vehicle_model.hpp"

#include <cmath>
#include <stdexcept>

namespace asnmpc {

Eigen::Matrix<double, 8, 1> VehicleState::to_vector() const {
    Eigen::Matrix<double, 8, 1> v;
    v << x_pos, y_pos, psi, v_lon, v_lat, psi_dot, delta_f, a;
    return v;
}

VehicleState VehicleState::from_vector(const Eigen::Matrix<double, 8, 1>& v) {
    VehicleState s;
    s.x_pos = v(0);
    s.y_pos = v(1);
    s.psi = v(2);
    s.v_lon = v(3);
    s.v_lat = v(4);
    s.psi_dot = v(5);
    s.delta_f = v(6);
    s.a = v(7);
    return s;
}

bool VehicleState::all_finite() const {
    return to_vector().allFinite();
}

void VehicleParams::validate() const {
    if (!(mass > 0.0 && yaw_inertia > 0.0 && dist_front > 0.0 && dist_rear > 0.0 &&
          cornering_stiffness_front > 0.0 && cornering_stiffness_rear > 0.0 &&
          v_lon_min_model > 0.0)) {
        throw std::invalid_argument("VehicleParams: all entries must be strictly positive");
    }
}

namespace {

// Shared RHS evaluation with the slip-angle denominator guarded; callers that
// enforce the v_lon precondition go through dynamics_rhs instead.
VehicleStateDerivative rhs_guarded(const VehicleState& s, const ControlInput& u,
                                   const VehicleParams& p) {
    const double v_eff = std::max(s.v_lon, p.v_lon_min_model);
    const double alpha_f = s.delta_f - std::atan((s.v_lat + p.dist_front * s.psi_dot) / v_eff);
    const double alpha_r = -std::atan((s.v_lat - p.dist_rear * s.psi_dot) / v_eff);
    const double f_yf = p.cornering_stiffness_front * alpha_f;
    const double f_yr = p.cornering_stiffness_rear * alpha_r;

    const double cos_psi = std::cos(s.psi);
    const double sin_psi = std::sin(s.psi);
    const double cos_d = std::cos(s.delta_f);

    VehicleStateDerivative d;
    d(0) = s.v_lon * cos_psi - s.v_lat * sin_psi;
    d(1) = s.v_lon * sin_psi + s.v_lat * cos_psi;
    d(2) = s.psi_dot;
    d(3) = s.a + s.v_lat * s.psi_dot;
    d(4) = (f_yf * cos_d + f_yr) / p.mass - s.v_lon * s.psi_dot;
    d(5) = (p.dist_front * f_yf * cos_d - p.dist_rear * f_yr) / p.yaw_inertia;
    d(6) = u.omega_f;
    d(7) = u.jerk;
    return d;
}

}  // namespace

VehicleStateDerivative dynamics_rhs(const VehicleState& state, const ControlInput& input,
                                    const VehicleParams& params) {
    if (!(state.v_lon >= params.v_lon_min_model)) {
        throw std::domain_error("dynamics_rhs: v_lon below low-speed guard");
    }
    return rhs_guarded(state, input, params);
}

VehicleStateDerivative dynamics_rhs_smoothed(const VehicleState& state, const ControlInput& input,
                                             const VehicleParams& params) {
    return rhs_guarded(state, input, params);
}

VehicleState integrate_step(const VehicleState& state, const ControlInput& input, double dt,
                            const VehicleParams& params) {
    if (dt < 0.0) throw std::invalid_argument("integrate_step: dt must be nonnegative");
    if (dt == 0.0) return state;
    if (!(state.v_lon >= params.v_lon_min_model)) {
        throw std::domain_error("integrate_step: v_lon below low-speed guard");
    }

    const StateVector x0 = state.to_vector();
    const StateVector k1 = rhs_guarded(state, input, params);
    const StateVector k2 =
        rhs_guarded(VehicleState::from_vector(x0 + 0.5 * dt * k1), input, params);
    const StateVector k3 =
        rhs_guarded(VehicleState::from_vector(x0 + 0.5 * dt * k2), input, params);
    const StateVector k4 = rhs_guarded(VehicleState::from_vector(x0 + dt * k3), input, params);
    return VehicleState::from_vector(x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

void linearize_fd(const VehicleState& state, const ControlInput& input,
                  const VehicleParams& params, double eps, Eigen::Matrix<double, 8, 8>& A,
                  Eigen::Matrix<double, 8, 2>& B) {
    if (!(eps > 0.0)) throw std::invalid_argument("linearize_fd: eps must be positive");

    const StateVector x0 = state.to_vector();
    for (int j = 0; j < 8; ++j) {
        const double h = eps * std::max(1.0, std::abs(x0(j)));
        StateVector xp = x0, xm = x0;
        xp(j) += h;
        xm(j) -= h;
        const StateVector fp = rhs_guarded(VehicleState::from_vector(xp), input, params);
        const StateVector fm = rhs_guarded(VehicleState::from_vector(xm), input, params);
        A.col(j) = (fp - fm) / (2.0 * h);
    }

    const double in[2] = {input.jerk, input.omega_f};
    for (int j = 0; j < 2; ++j) {
        const double h = eps * std::max(1.0, std::abs(in[j]));
        ControlInput up = input, um = input;
        (j == 0 ? up.jerk : up.omega_f) += h;
        (j == 0 ? um.jerk : um.omega_f) -= h;
        const StateVector fp = rhs_guarded(state, up, params);
        const StateVector fm = rhs_guarded(state, um, params);
        B.col(j) = (fp - fm) / (2.0 * h);
    }
}

void analytic_jacobians(const VehicleState& state, const ControlInput& input,
                        const VehicleParams& params, Eigen::Matrix<double, 8, 8>& A,
                        Eigen::Matrix<double, 8, 2>& B) {
    (void)input;
    const double lf = params.dist_front;
    const double lr = params.dist_rear;
    const double cf = params.cornering_stiffness_front;
    const double cr = params.cornering_stiffness_rear;
    const double m = params.mass;
    const double iz = params.yaw_inertia;

    const double v_eff = std::max(state.v_lon, params.v_lon_min_model);
    const double dveff_dvlon = state.v_lon > params.v_lon_min_model ? 1.0 : 0.0;

    const double qf = (state.v_lat + lf * state.psi_dot) / v_eff;
    const double qr = (state.v_lat - lr * state.psi_dot) / v_eff;
    const double alpha_f = state.delta_f - std::atan(qf);
    const double wf = 1.0 / (1.0 + qf * qf);  // d atan
    const double wr = 1.0 / (1.0 + qr * qr);

    // slip-angle partials
    const double daf_dvlat = -wf / v_eff;
    const double daf_dpsidot = -wf * lf / v_eff;
    const double daf_dvlon = wf * qf / v_eff * dveff_dvlon;
    const double dar_dvlat = -wr / v_eff;
    const double dar_dpsidot = wr * lr / v_eff;
    const double dar_dvlon = wr * qr / v_eff * dveff_dvlon;

    const double cos_psi = std::cos(state.psi);
    const double sin_psi = std::sin(state.psi);
    const double cos_d = std::cos(state.delta_f);
    const double sin_d = std::sin(state.delta_f);

    A.setZero();
    B.setZero();

    // xdot_pos = v_lon cos(psi) - v_lat sin(psi)
    A(0, 2) = -state.v_lon * sin_psi - state.v_lat * cos_psi;
    A(0, 3) = cos_psi;
    A(0, 4) = -sin_psi;
    // ydot_pos = v_lon sin(psi) + v_lat cos(psi)
    A(1, 2) = state.v_lon * cos_psi - state.v_lat * sin_psi;
    A(1, 3) = sin_psi;
    A(1, 4) = cos_psi;
    // psidot = psi_dot
    A(2, 5) = 1.0;
    // vdot_lon = a + v_lat psi_dot
    A(3, 4) = state.psi_dot;
    A(3, 5) = state.v_lat;
    A(3, 7) = 1.0;
    // vdot_lat = (cf alpha_f cos(delta) + cr alpha_r)/m - v_lon psi_dot
    A(4, 3) = (cf * cos_d * daf_dvlon + cr * dar_dvlon) / m - state.psi_dot;
    A(4, 4) = (cf * cos_d * daf_dvlat + cr * dar_dvlat) / m;
    A(4, 5) = (cf * cos_d * daf_dpsidot + cr * dar_dpsidot) / m - state.v_lon;
    A(4, 6) = cf * (cos_d - alpha_f * sin_d) / m;
    // psiddot = (lf cf alpha_f cos(delta) - lr cr alpha_r)/iz
    A(5, 3) = (lf * cf * cos_d * daf_dvlon - lr * cr * dar_dvlon) / iz;
    A(5, 4) = (lf * cf * cos_d * daf_dvlat - lr * cr * dar_dvlat) / iz;
    A(5, 5) = (lf * cf * cos_d * daf_dpsidot - lr * cr * dar_dpsidot) / iz;
    A(5, 6) = lf * cf * (cos_d - alpha_f * sin_d) / iz;

    B(6, 1) = 1.0;  // deltadot_f = omega_f
    B(7, 0) = 1.0;  // adot = jerk
}

double combined_accel_fraction(const VehicleState& state, double a_x_max, double a_y_max) {
    const double lon = state.a / a_x_max;
    const double lat = state.v_lon * state.psi_dot / a_y_max;
    return lon * lon + lat * lat;
}

Eigen::Matrix<double, 8, 1> combined_accel_fraction_gradient(const VehicleState& state,
                                                             double a_x_max, double a_y_max) {
    Eigen::Matrix<double, 8, 1> g = Eigen::Matrix<double, 8, 1>::Zero();
    const double lat = state.v_lon * state.psi_dot;
    g(3) = 2.0 * lat * state.psi_dot / (a_y_max * a_y_max);
    g(5) = 2.0 * lat * state.v_lon / (a_y_max * a_y_max);
    g(7) = 2.0 * state.a / (a_x_max * a_x_max);
    return g;
}

}  // namespace asnmpc
