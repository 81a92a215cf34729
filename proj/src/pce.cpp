#include "asnmpc/pce.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace asnmpc {

namespace {

// probabilists' Hermite He_n(x), n <= 4 is plenty here
double hermite(int n, double x) {
    switch (n) {
        case 0: return 1.0;
        case 1: return x;
        case 2: return x * x - 1.0;
        case 3: return x * (x * x - 3.0);
        default: {
            double hm = x * (x * x - 3.0), hmm = x * x - 1.0, h = hm;
            for (int k = 4; k <= n; ++k) {
                h = x * hm - (k - 1) * hmm;
                hmm = hm;
                hm = h;
            }
            return h;
        }
    }
}

double factorial(int n) {
    double f = 1.0;
    for (int k = 2; k <= n; ++k) f *= k;
    return f;
}

void enumerate_indices(int dim, int order, std::vector<int>& current, int remaining,
                       std::vector<std::vector<int>>& out) {
    if (static_cast<int>(current.size()) == dim) {
        out.push_back(current);
        return;
    }
    for (int k = 0; k <= remaining; ++k) {
        current.push_back(k);
        enumerate_indices(dim, order, current, remaining - k, out);
        current.pop_back();
    }
}

}  // namespace

PceBasis::PceBasis(int germ_dim, int order) : germ_dim_(germ_dim), order_(order) {
    if (germ_dim < 1 || order < 0) throw std::invalid_argument("PceBasis: bad dimensions");
    std::vector<int> current;
    enumerate_indices(germ_dim, order, current, order, multi_indices_);
    // sort by total order, then lexicographic, so term 0 is the constant
    std::sort(multi_indices_.begin(), multi_indices_.end(),
              [](const std::vector<int>& a, const std::vector<int>& b) {
                  int sa = 0, sb = 0;
                  for (int v : a) sa += v;
                  for (int v : b) sb += v;
                  if (sa != sb) return sa < sb;
                  return a < b;
              });
    norms_.reserve(multi_indices_.size());
    for (const auto& mi : multi_indices_) {
        double n2 = 1.0;
        for (int v : mi) n2 *= factorial(v);
        norms_.push_back(std::sqrt(n2));
    }
}

double PceBasis::evaluate(int term, const Eigen::VectorXd& xi) const {
    const auto& mi = multi_indices_[static_cast<std::size_t>(term)];
    double v = 1.0;
    for (int d = 0; d < germ_dim_; ++d) v *= hermite(mi[static_cast<std::size_t>(d)], xi(d));
    return v / norms_[static_cast<std::size_t>(term)];
}

Eigen::MatrixXd PceBasis::evaluate_matrix(const Eigen::MatrixXd& germ_points) const {
    const int n = static_cast<int>(germ_points.rows());
    Eigen::MatrixXd phi(n, num_terms());
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd xi = germ_points.row(i).transpose();
        for (int k = 0; k < num_terms(); ++k) phi(i, k) = evaluate(k, xi);
    }
    return phi;
}

double kappa_from_p(double p) {
    if (!(p > 0.0 && p <= 1.0)) {
        throw std::domain_error("kappa_from_p: p must lie in (0, 1]");
    }
    return std::sqrt((1.0 - p) / p);
}

SamplePack draw_samples(const VehicleState& measured_state, const DisturbanceSpec& spec, int n_s,
                        Rng& rng, const PceBasis& basis) {
    if (n_s < basis.num_terms()) {
        throw std::invalid_argument("draw_samples: need n_s >= number of basis terms");
    }

    SamplePack pack;
    pack.measured_state = measured_state;
    constexpr double kMaxCondition = 1e10;
    for (int attempt = 0; attempt < 8; ++attempt) {
        pack.germ_points.resize(n_s, basis.germ_dim());
        for (int i = 0; i < n_s; ++i) {
            for (int d = 0; d < basis.germ_dim(); ++d) pack.germ_points(i, d) = rng.normal();
        }
        const Eigen::MatrixXd phi = basis.evaluate_matrix(pack.germ_points);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(phi,
                                              Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        pack.basis_condition =
            sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
        if (pack.basis_condition <= kMaxCondition) {
            // pinv = V * S^-1 * U^T
            Eigen::VectorXd inv = sv.cwiseInverse();
            pack.regression_pinv =
                svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
            break;
        }
    }
    if (pack.regression_pinv.size() == 0) {
        throw std::runtime_error("draw_samples: basis matrix conditioning repeatedly exceeded 1e10");
    }

    pack.state_samples.resize(n_s, 8);
    const Eigen::Matrix<double, 8, 1> base = measured_state.to_vector();
    for (int i = 0; i < n_s; ++i) {
        Eigen::Matrix<double, 8, 1> s = base;
        s(3) += spec.sigma(3) * pack.germ_points(i, 0);  // v_lon
        s(4) += spec.sigma(4) * pack.germ_points(i, 1);  // v_lat
        s(5) += spec.sigma(5) * pack.germ_points(i, 2);  // psi_dot
        pack.state_samples.row(i) = s.transpose();
    }
    return pack;
}

Eigen::VectorXd pce_coefficients(std::span<const double> sample_values, const SamplePack& pack) {
    if (static_cast<int>(sample_values.size()) != pack.num_samples()) {
        throw std::invalid_argument("pce_coefficients: sample count mismatch");
    }
    if (!(pack.basis_condition <= 1e10)) {
        throw std::runtime_error("pce_coefficients: basis matrix is rank deficient");
    }
    Eigen::Map<const Eigen::VectorXd> v(sample_values.data(),
                                        static_cast<Eigen::Index>(sample_values.size()));
    if (!v.allFinite()) throw std::invalid_argument("pce_coefficients: nonfinite sample values");
    return pack.regression_pinv * v;
}

double pce_mean(const Eigen::VectorXd& coeffs) { return coeffs(0); }

double pce_variance(const Eigen::VectorXd& coeffs) {
    return coeffs.tail(coeffs.size() - 1).squaredNorm();
}

double robustified_bound(double h_mean, double h_var, double kappa) {
    return h_mean + kappa * std::sqrt(std::max(0.0, h_var));
}

std::vector<NodeUncertainty> propagate_uncertainty(const SamplePack& pack,
                                                   std::span<const ControlInput> control_seq,
                                                   const SnmpcParams& params,
                                                   const PropagationConfig& config) {
    const int n_p = static_cast<int>(control_seq.size());
    if (params.n_u < 1 || params.n_u > n_p) {
        throw std::invalid_argument("propagate_uncertainty: need 1 <= n_u <= n_p");
    }
    const int n_s = pack.num_samples();

    std::vector<NodeUncertainty> out;
    out.reserve(static_cast<std::size_t>(n_p));

    std::vector<VehicleState> samples(static_cast<std::size_t>(n_s));
    for (int i = 0; i < n_s; ++i) {
        samples[static_cast<std::size_t>(i)] =
            VehicleState::from_vector(pack.state_samples.row(i).transpose());
    }

    std::vector<double> h_vals(static_cast<std::size_t>(n_s));
    Eigen::MatrixXd coord(n_s, 8);
    VehicleState mean_state{};

    for (int t = 0; t < n_p; ++t) {
        const ControlInput& u = control_seq[static_cast<std::size_t>(t)];
        NodeUncertainty node;
        node.node = t;
        if (t < params.n_u) {
            for (int i = 0; i < n_s; ++i) {
                VehicleState& s = samples[static_cast<std::size_t>(i)];
                // samples may dip below the slip-angle guard; floor them there
                if (s.v_lon < config.vehicle.v_lon_min_model) {
                    s.v_lon = config.vehicle.v_lon_min_model;
                }
                s = integrate_step(s, u, config.dt, config.vehicle);
                if (!s.all_finite() || std::abs(s.v_lon) > config.divergence_speed_limit ||
                    std::abs(s.v_lat) > config.divergence_speed_limit) {
                    throw UncertaintyDivergence("sample state exceeded physical bounds at node " +
                                                std::to_string(t));
                }
                coord.row(i) = s.to_vector().transpose();
                h_vals[static_cast<std::size_t>(i)] =
                    combined_accel_fraction(s, config.a_x_max, config.a_y_max);
            }
            // mean state: constant-term regression coefficient per coordinate
            Eigen::Matrix<double, 8, 1> mean =
                (pack.regression_pinv.row(0) * coord).transpose();
            mean_state = VehicleState::from_vector(mean);
            const Eigen::VectorXd c = pce_coefficients(h_vals, pack);
            node.mean_state = mean_state;
            node.h_mean = pce_mean(c);
            node.h_var = pce_variance(c);
        } else {
            if (mean_state.v_lon < config.vehicle.v_lon_min_model) {
                mean_state.v_lon = config.vehicle.v_lon_min_model;
            }
            mean_state = integrate_step(mean_state, u, config.dt, config.vehicle);
            if (!mean_state.all_finite()) {
                throw UncertaintyDivergence("mean state became nonfinite at node " +
                                            std::to_string(t));
            }
            node.mean_state = mean_state;
            node.h_mean = combined_accel_fraction(mean_state, config.a_x_max, config.a_y_max);
            node.h_var = 0.0;
        }
        out.push_back(node);
    }
    return out;
}

}  // namespace asnmpc
