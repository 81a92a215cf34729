#pragma once

#include <array>
#include <optional>

#include "asnmpc/ocp.hpp"
#include "asnmpc/pce.hpp"
#include "asnmpc/rng.hpp"
#include "asnmpc/track.hpp"
#include "asnmpc/vehicle_model.hpp"

namespace asnmpc {

/// Per-component disturbance ranges (sigma_min, sigma_max), ordered like
/// DisturbanceSpec: [x, y, psi, v_lon, v_lat, psi_dot, delta_f].
struct DisturbanceRanges {
    std::array<std::pair<double, double>, 7> ranges{};

    static DisturbanceRanges none();
    /// Table III ranges.
    static DisturbanceRanges nominal();
    /// Stress ranges: (v_lon, v_lat, psi_dot) raised per the feasibility
    /// experiment; remaining components keep their nominal ranges.
    static DisturbanceRanges stress();

    DisturbanceSpec midpoint() const;
    DisturbanceSpec sample(Rng& rng) const;
};

struct SimConfig {
    double t_s_sim = 0.02;            ///< plant step [s]
    double range_switch_period = 30.0;  ///< disturbance re-draw period [s]
    DisturbanceRanges ranges = DisturbanceRanges::nominal();
    VehicleParams vehicle;
    double a_x_max = 4.5;  ///< for the true-constraint check
    double a_y_max = 5.0;
    double delta_max = 0.61;

    long switch_steps() const { return std::lround(range_switch_period / t_s_sim); }
    void validate() const;
};

struct EnvState {
    VehicleState true_state;
    VehicleState measured_state;
    DisturbanceSpec active_spec;
    long sim_step = 0;
    double s_progress = 0.0;   ///< cumulative distance traveled [m]
    double s_on_track = 0.0;   ///< current arc-length position [m]
    bool lap_done = false;
};

struct StepOutcome {
    double e_lat_true = 0.0;
    double h_true = 0.0;
    bool violated = false;
};

enum class EpisodeStatus { Running, TerminatedLapComplete, TruncatedInfeasible };

/// Closed-loop plant: integrates the undisturbed vehicle at the simulation
/// rate and produces measurements corrupted by the active Gaussian
/// disturbance spec (all state components except the acceleration). The
/// disturbance spec is re-sampled every switch period and at resets.
class SimEnv {
public:
    SimEnv(const SimConfig& config, const Raceline& track, std::uint64_t seed);

    /// Place the vehicle on the raceline start at the reference speed and
    /// draw a fresh disturbance spec.
    const EnvState& reset();

    /// Apply one control input with the plant held at the hard input bounds.
    StepOutcome step(const ControlInput& u0);

    EpisodeStatus episode_status(SolveStatus last_solver_status) const;

    const EnvState& state() const { return state_; }
    const SimConfig& config() const { return config_; }
    const Raceline& track() const { return track_; }

private:
    SimConfig config_;
    const Raceline& track_;
    Rng noise_rng_;
    Rng spec_rng_;
    Rng reset_rng_;
    EnvState state_;

    void sample_spec();
    void measure();
};

/// Keeps the controller actuated through infeasible solves: consumes the
/// remaining controls of the last accepted solution, then holds a braking
/// input once the sequence is exhausted.
class InfeasibilityFallback {
public:
    explicit InfeasibilityFallback(double brake_jerk = -10.0, double a_x_max = 4.5)
        : brake_jerk_(brake_jerk), a_x_max_(a_x_max) {}

    /// Record a fresh solved solution (resets the fallback cursor).
    void on_solved(const OcpSolution& solution);

    /// Next control while infeasible; current_a limits the braking ramp.
    ControlInput next(double current_a);

    bool has_reserve() const { return cursor_ < static_cast<long>(controls_.size()); }

private:
    std::vector<ControlInput> controls_;
    long cursor_ = 0;
    double brake_jerk_;
    double a_x_max_;
};

}  // namespace asnmpc
