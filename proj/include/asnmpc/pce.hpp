#pragma once

#include <Eigen/Dense>
#include <span>
#include <stdexcept>
#include <vector>

#include "asnmpc/rng.hpp"
#include "asnmpc/vehicle_model.hpp"

namespace asnmpc {

/// Standard deviations of the simulated state disturbances, ordered
/// [x, y, psi, v_lon, v_lat, psi_dot, delta_f].
struct DisturbanceSpec {
    Eigen::Matrix<double, 7, 1> sigma = Eigen::Matrix<double, 7, 1>::Zero();

    double& sigma_x() { return sigma(0); }
    double& sigma_y() { return sigma(1); }
    double& sigma_psi() { return sigma(2); }
    double& sigma_v_lon() { return sigma(3); }
    double& sigma_v_lat() { return sigma(4); }
    double& sigma_psi_dot() { return sigma(5); }
    double& sigma_delta_f() { return sigma(6); }
    double sigma_v_lon() const { return sigma(3); }
    double sigma_v_lat() const { return sigma(4); }
    double sigma_psi_dot() const { return sigma(5); }
};

/// Multivariate probabilists' Hermite basis over a standard-normal germ,
/// truncated at a total order. Basis functions are normalized so that
/// E[psi_k^2] = 1, which makes Var = sum of squared coefficients (k >= 1).
class PceBasis {
public:
    PceBasis(int germ_dim = 3, int order = 2);

    int germ_dim() const { return germ_dim_; }
    int order() const { return order_; }
    int num_terms() const { return static_cast<int>(multi_indices_.size()); }  // L

    double evaluate(int term, const Eigen::VectorXd& xi) const;

    /// Rows: germ points; columns: basis terms. (n_s x L)
    Eigen::MatrixXd evaluate_matrix(const Eigen::MatrixXd& germ_points) const;

    const std::vector<std::vector<int>>& multi_indices() const { return multi_indices_; }

private:
    int germ_dim_;
    int order_;
    std::vector<std::vector<int>> multi_indices_;
    std::vector<double> norms_;  // sqrt(prod alpha_i!)
};

/// Germ draws, perturbed state samples and the least-squares regression
/// operator shared by all PCE estimates of one control step.
struct SamplePack {
    Eigen::MatrixXd germ_points;               // n_s x germ_dim
    Eigen::Matrix<double, Eigen::Dynamic, 8> state_samples;  // n_s x 8
    Eigen::MatrixXd regression_pinv;           // L x n_s
    double basis_condition = 0.0;
    VehicleState measured_state;

    int num_samples() const { return static_cast<int>(germ_points.rows()); }
};

/// Adapted SNMPC parameters: constraint robustification factor and the
/// uncertainty propagation horizon in shooting nodes.
struct SnmpcParams {
    double kappa = 0.42;
    int n_u = 25;
};

/// Per-shooting-node uncertainty estimate.
struct NodeUncertainty {
    VehicleState mean_state;
    double h_mean = 0.0;
    double h_var = 0.0;
    int node = 0;
};

struct PropagationConfig {
    VehicleParams vehicle;
    double dt = 0.08;        ///< shooting interval [s]
    double a_x_max = 4.5;    ///< constraint scaling [m/s^2]
    double a_y_max = 5.0;    ///< constraint scaling [m/s^2]
    double divergence_speed_limit = 200.0;  ///< [m/s]
};

/// Raised when propagated samples leave physical bounds; the controller maps
/// it to an infeasible solver status.
struct UncertaintyDivergence : std::runtime_error {
    explicit UncertaintyDivergence(const std::string& what) : std::runtime_error(what) {}
};

/// Robustification factor kappa = sqrt((1-p)/p) for a desired constraint
/// violation probability p in (0, 1].
double kappa_from_p(double p);

/// Draw n_s standard-normal germ points and build state samples around the
/// measured state; only (v_lon, v_lat, psi_dot) are perturbed, scaled by the
/// matching entries of the disturbance spec. The regression pseudoinverse is
/// precomputed; germ draws are repeated (fresh randomness) in the unlikely
/// event the basis matrix conditioning exceeds 1e10.
SamplePack draw_samples(const VehicleState& measured_state, const DisturbanceSpec& spec, int n_s,
                        Rng& rng, const PceBasis& basis);

/// Least-squares PCE coefficients of per-sample scalar values. c(0) is the
/// mean estimate; the sum of squares of the remaining coefficients estimates
/// the variance. Throws std::runtime_error if the pack's basis conditioning
/// is out of range.
Eigen::VectorXd pce_coefficients(std::span<const double> sample_values, const SamplePack& pack);

/// Mean/variance estimate helpers over a coefficient vector.
double pce_mean(const Eigen::VectorXd& coeffs);
double pce_variance(const Eigen::VectorXd& coeffs);

/// Propagate the sampled states through the prediction horizon under the
/// shared control sequence. Nodes t = 0..n_u-1 integrate every sample one
/// step and regress the state mean and the acceleration-constraint mean and
/// variance; from the UPH onward only the mean state continues
/// deterministically and the constraint variance is exactly zero.
/// Output index t corresponds to the state after t+1 shooting steps.
std::vector<NodeUncertainty> propagate_uncertainty(const SamplePack& pack,
                                                   std::span<const ControlInput> control_seq,
                                                   const SnmpcParams& params,
                                                   const PropagationConfig& config);

/// The robustified constraint quantity E[h] + kappa * sqrt(Var[h]).
double robustified_bound(double h_mean, double h_var, double kappa);

}  // namespace asnmpc
