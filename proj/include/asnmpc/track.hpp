#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace asnmpc {

struct RacelinePoint {
    double s = 0.0;          ///< arc length from the start [m]
    double x = 0.0;          ///< [m]
    double y = 0.0;          ///< [m]
    double psi = 0.0;        ///< path heading [rad], continuous (not wrapped)
    double v_ref = 0.0;      ///< reference speed [m/s]
    double curvature = 0.0;  ///< signed curvature of the outgoing segment [1/m]
};

struct TrackSegment {
    enum class Kind { Straight, Arc };
    Kind kind = Kind::Straight;
    double length_m = 0.0;   ///< straight length, or arc length when sweep_deg == 0
    double radius_m = 0.0;   ///< arcs only; signed, positive = left turn
    double sweep_deg = 0.0;  ///< arcs only; optional exact sweep (overrides length_m)
};

struct TrackSpec {
    std::vector<TrackSegment> segments;
    bool closed = false;
    double v_top = 37.5;  ///< straight-line speed cap [m/s]
};

struct ProjectionResult {
    double s = 0.0;      ///< arc length of the closest point
    double e_lat = 0.0;  ///< signed lateral offset, positive left of the path
};

struct Pose2d {
    double x = 0.0;
    double y = 0.0;
    double psi = 0.0;
};

struct EgoRefPoint {
    double x_local = 0.0;
    double y_local = 0.0;
    double v_ref = 0.0;
};

/// Immutable sampled raceline with a speed profile. Thread-safe for
/// concurrent reads after construction.
class Raceline {
public:
    /// Build a G1-continuous centerline from straight/arc segments sampled at
    /// <= 1 m spacing, then attach a speed profile v = min(v_top,
    /// sqrt(a_y_max/|curvature|)) smoothed by forward/backward passes that
    /// respect the combined (a_x_max, a_y_max) acceleration ellipse.
    /// Throws std::invalid_argument for empty/nonpositive segments or when a
    /// spec marked closed fails to close geometrically.
    static Raceline generate(const TrackSpec& spec, double a_y_max, double a_x_max,
                             double sample_ds = 1.0);

    const std::vector<RacelinePoint>& points() const { return pts_; }
    bool closed() const { return closed_; }
    double total_length() const { return total_length_; }
    double a_x_max() const { return a_x_max_; }

    /// Locally nearest point around s_hint. The search window widens until
    /// the coarse minimum is bracketed; the result is refined by projecting
    /// onto the neighboring polyline segments.
    ProjectionResult project(double x, double y, double s_hint) const;

    /// One reference point per horizon time, advanced from s0 by integrating
    /// the local v_ref (capped by what is reachable from v_current under the
    /// profile's a_x_max). Wraps on closed tracks.
    std::vector<RacelinePoint> reference_window(double s0, std::span<const double> horizon_times,
                                                double v_current) const;

    /// Interpolated raceline point at arc length s (wraps if closed, clamps
    /// otherwise).
    RacelinePoint point_at(double s) const;

    void export_csv(std::ostream& os) const;

private:
    std::vector<RacelinePoint> pts_;
    bool closed_ = false;
    double total_length_ = 0.0;
    double a_x_max_ = 0.0;

    double wrap_s(double s) const;
    std::size_t segment_index_for_s(double s) const;
};

/// Rigid transform of reference points into the ego frame (ego at the origin,
/// heading along +x). v_ref passes through unchanged.
std::vector<EgoRefPoint> to_ego_frame(std::span<const RacelinePoint> points, const Pose2d& ego);

/// Inverse of to_ego_frame for a single point (used by round-trip checks).
void ego_to_world(const EgoRefPoint& local, const Pose2d& ego, double& x, double& y);

/// Load/store the track spec from JSON text (see README for the schema).
TrackSpec track_spec_from_json(const std::string& text);
std::string track_spec_to_json(const TrackSpec& spec);
TrackSpec load_track_spec(const std::string& path);

}  // namespace asnmpc
