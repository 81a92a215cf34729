#include "asnmpc/track.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace asnmpc {

namespace {

constexpr double kClosureTol = 1e-6;

double wrap_angle(double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a < -M_PI) a += 2.0 * M_PI;
    return a;
}

// Longitudinal budget left by the acceleration ellipse at speed v and
// curvature kappa.
double lon_budget(double v, double kappa, double a_x_max, double a_y_max) {
    const double lat_frac = v * v * std::abs(kappa) / a_y_max;
    const double rem = 1.0 - lat_frac * lat_frac;
    return rem <= 0.0 ? 0.0 : a_x_max * std::sqrt(rem);
}

}  // namespace

Raceline Raceline::generate(const TrackSpec& spec, double a_y_max, double a_x_max,
                            double sample_ds) {
    if (spec.segments.empty()) throw std::invalid_argument("track spec has no segments");
    if (!(a_y_max > 0.0) || !(a_x_max > 0.0) || !(spec.v_top > 0.0) || !(sample_ds > 0.0)) {
        throw std::invalid_argument("track limits must be strictly positive");
    }

    Raceline rl;
    rl.closed_ = spec.closed;
    rl.a_x_max_ = a_x_max;

    double x = 0.0, y = 0.0, psi = 0.0, s = 0.0;
    for (const auto& seg : spec.segments) {
        double length = seg.length_m;
        double kappa = 0.0;
        if (seg.kind == TrackSegment::Kind::Arc) {
            if (seg.radius_m == 0.0) throw std::invalid_argument("arc needs nonzero radius");
            kappa = 1.0 / seg.radius_m;
            if (seg.sweep_deg != 0.0) {
                length = std::abs(seg.sweep_deg) * M_PI / 180.0 * std::abs(seg.radius_m);
            }
        }
        if (!(length > 0.0) || !std::isfinite(length)) {
            throw std::invalid_argument("segment length must be positive and finite");
        }

        const int n = std::max(1, static_cast<int>(std::ceil(length / sample_ds)));
        const double ds = length / n;
        for (int i = 0; i < n; ++i) {
            rl.pts_.push_back({s, x, y, psi, 0.0, kappa});
            if (kappa == 0.0) {
                x += ds * std::cos(psi);
                y += ds * std::sin(psi);
            } else {
                const double dpsi = kappa * ds;
                // exact arc advance
                x += (std::sin(psi + dpsi) - std::sin(psi)) / kappa;
                y += (-std::cos(psi + dpsi) + std::cos(psi)) / kappa;
                psi += dpsi;
            }
            s += ds;
        }
    }

    if (spec.closed) {
        const double ex = x - rl.pts_.front().x;
        const double ey = y - rl.pts_.front().y;
        const double epsi = wrap_angle(psi - rl.pts_.front().psi);
        if (std::hypot(ex, ey) > kClosureTol || std::abs(epsi) > kClosureTol) {
            std::ostringstream msg;
            msg << "closed track spec does not close: position error " << std::hypot(ex, ey)
                << " m, heading error " << epsi << " rad";
            throw std::invalid_argument(msg.str());
        }
        // terminal point coincides with the start (heading kept continuous)
        rl.pts_.push_back({s, rl.pts_.front().x, rl.pts_.front().y, psi, 0.0,
                           rl.pts_.front().curvature});
    } else {
        rl.pts_.push_back({s, x, y, psi, 0.0, rl.pts_.back().curvature});
    }
    rl.total_length_ = s;

    // lateral cap
    const std::size_t n = rl.pts_.size();
    for (auto& p : rl.pts_) {
        const double cap = p.curvature == 0.0
                               ? spec.v_top
                               : std::sqrt(a_y_max / std::abs(p.curvature));
        p.v_ref = std::min(spec.v_top, cap);
    }

    // Forward/backward passes limited by the ellipse budget. Transition
    // segments between different curvatures use the milder curvature so the
    // profile can ramp across junctions.
    auto seg_budget = [&](std::size_t i, std::size_t j, double v) {
        const double k = std::min(std::abs(rl.pts_[i].curvature), std::abs(rl.pts_[j].curvature));
        return lon_budget(v, k, a_x_max, a_y_max);
    };
    const int laps = spec.closed ? 3 : 1;
    for (int lap = 0; lap < laps; ++lap) {
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double ds = rl.pts_[i + 1].s - rl.pts_[i].s;
            const double vmax =
                std::sqrt(rl.pts_[i].v_ref * rl.pts_[i].v_ref +
                          2.0 * ds * seg_budget(i, i + 1, rl.pts_[i].v_ref));
            rl.pts_[i + 1].v_ref = std::min(rl.pts_[i + 1].v_ref, vmax);
        }
        if (spec.closed) rl.pts_.front().v_ref = rl.pts_.back().v_ref;
    }
    for (int lap = 0; lap < laps; ++lap) {
        for (std::size_t i = n - 1; i-- > 0;) {
            const double ds = rl.pts_[i + 1].s - rl.pts_[i].s;
            // budget at the decelerating node, evaluated conservatively at its cap
            const double vmax =
                std::sqrt(rl.pts_[i + 1].v_ref * rl.pts_[i + 1].v_ref +
                          2.0 * ds * seg_budget(i, i + 1, rl.pts_[i].v_ref));
            rl.pts_[i].v_ref = std::min(rl.pts_[i].v_ref, vmax);
        }
        if (spec.closed) rl.pts_.back().v_ref = rl.pts_.front().v_ref;
    }

    return rl;
}

double Raceline::wrap_s(double s) const {
    if (!closed_) return std::clamp(s, 0.0, total_length_);
    s = std::fmod(s, total_length_);
    if (s < 0.0) s += total_length_;
    return s;
}

std::size_t Raceline::segment_index_for_s(double s) const {
    // index i with pts_[i].s <= s < pts_[i+1].s
    auto it = std::upper_bound(pts_.begin(), pts_.end(), s,
                               [](double v, const RacelinePoint& p) { return v < p.s; });
    if (it == pts_.begin()) return 0;
    std::size_t i = static_cast<std::size_t>(it - pts_.begin()) - 1;
    return std::min(i, pts_.size() - 2);
}

RacelinePoint Raceline::point_at(double s) const {
    const double sw = wrap_s(s);
    const std::size_t i = segment_index_for_s(sw);
    const RacelinePoint& p0 = pts_[i];
    const RacelinePoint& p1 = pts_[i + 1];
    const double ds = p1.s - p0.s;
    const double t = ds > 0.0 ? (sw - p0.s) / ds : 0.0;
    RacelinePoint out;
    out.s = sw;
    out.x = p0.x + t * (p1.x - p0.x);
    out.y = p0.y + t * (p1.y - p0.y);
    out.psi = p0.psi + t * (p1.psi - p0.psi);
    out.v_ref = p0.v_ref + t * (p1.v_ref - p0.v_ref);
    out.curvature = p0.curvature;
    return out;
}

ProjectionResult Raceline::project(double x, double y, double s_hint) const {
    const std::size_t n = pts_.size();
    const std::size_t hint = segment_index_for_s(wrap_s(s_hint));

    auto sq_dist = [&](std::size_t i) {
        const double dx = pts_[i].x - x;
        const double dy = pts_[i].y - y;
        return dx * dx + dy * dy;
    };

    // coarse: windowed scan around the hint, widening until the minimum is
    // interior to the window
    std::size_t best = hint;
    long w = 64;
    while (true) {
        best = hint;
        double best_d = sq_dist(hint);
        for (long off = -w; off <= w; ++off) {
            long idx = static_cast<long>(hint) + off;
            if (closed_) {
                idx %= static_cast<long>(n - 1);
                if (idx < 0) idx += static_cast<long>(n - 1);
            } else {
                if (idx < 0 || idx >= static_cast<long>(n)) continue;
            }
            const double d = sq_dist(static_cast<std::size_t>(idx));
            if (d < best_d) {
                best_d = d;
                best = static_cast<std::size_t>(idx);
            }
        }
        const bool at_edge = [&] {
            long lo = static_cast<long>(hint) - w, hi = static_cast<long>(hint) + w;
            long b = static_cast<long>(best);
            if (closed_) {
                long span = 2 * w + 1;
                if (span >= static_cast<long>(n - 1)) return false;  // full track scanned
                long rel = (b - lo) % static_cast<long>(n - 1);
                if (rel < 0) rel += static_cast<long>(n - 1);
                return rel == 0 || rel == 2 * w;
            }
            return (b == std::max<long>(lo, 0) && lo > 0) ||
                   (b == std::min<long>(hi, static_cast<long>(n) - 1) &&
                    hi < static_cast<long>(n) - 1);
        }();
        if (!at_edge || static_cast<std::size_t>(2 * w + 1) >= n) break;
        w *= 2;
    }

    // refine on the two polyline segments adjacent to the best sample
    ProjectionResult result;
    double best_d = std::numeric_limits<double>::infinity();
    for (int segoff = -1; segoff <= 0; ++segoff) {
        long i0 = static_cast<long>(best) + segoff;
        if (closed_) {
            i0 %= static_cast<long>(n - 1);
            if (i0 < 0) i0 += static_cast<long>(n - 1);
        } else if (i0 < 0 || i0 + 1 >= static_cast<long>(n)) {
            continue;
        }
        const RacelinePoint& p0 = pts_[static_cast<std::size_t>(i0)];
        const RacelinePoint& p1 = pts_[static_cast<std::size_t>(i0) + 1];
        const double ex = p1.x - p0.x, ey = p1.y - p0.y;
        const double len2 = ex * ex + ey * ey;
        double t = len2 > 0.0 ? ((x - p0.x) * ex + (y - p0.y) * ey) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double qx = p0.x + t * ex, qy = p0.y + t * ey;
        const double d = (x - qx) * (x - qx) + (y - qy) * (y - qy);
        if (d < best_d) {
            best_d = d;
            const double seg_len = std::sqrt(len2);
            result.s = p0.s + t * (p1.s - p0.s);
            // signed offset: positive to the left of the tangent
            result.e_lat = (-(ey / seg_len)) * (x - qx) + (ex / seg_len) * (y - qy);
        }
    }
    return result;
}

std::vector<RacelinePoint> Raceline::reference_window(double s0,
                                                      std::span<const double> horizon_times,
                                                      double v_current) const {
    std::vector<RacelinePoint> out;
    out.reserve(horizon_times.size());
    double s = wrap_s(s0);
    double tau = 0.0;
    const double v_floor = 1.0;
    for (std::size_t k = 0; k < horizon_times.size(); ++k) {
        const double target = horizon_times[k];
        if (k > 0 && target < horizon_times[k - 1]) {
            throw std::invalid_argument("reference_window: horizon times must be nondecreasing");
        }
        while (tau < target - 1e-12) {
            const double dt = std::min(0.01, target - tau);
            // reachability cap keeps the window attainable from v_current
            const double cap = std::max(v_current, v_floor) + a_x_max_ * tau;
            const double v = std::min(point_at(s).v_ref, cap);
            s = wrap_s(s + v * dt);
            tau += dt;
        }
        out.push_back(point_at(s));
    }
    return out;
}

void Raceline::export_csv(std::ostream& os) const {
    os << "s,x,y,psi,v_ref,curvature\n";
    char buf[256];
    for (const auto& p : pts_) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.s, p.x, p.y,
                      p.psi, p.v_ref, p.curvature);
        os << buf;
    }
}

std::vector<EgoRefPoint> to_ego_frame(std::span<const RacelinePoint> points, const Pose2d& ego) {
    std::vector<EgoRefPoint> out;
    out.reserve(points.size());
    const double c = std::cos(ego.psi), s = std::sin(ego.psi);
    for (const auto& p : points) {
        const double dx = p.x - ego.x, dy = p.y - ego.y;
        out.push_back({c * dx + s * dy, -s * dx + c * dy, p.v_ref});
    }
    return out;
}

void ego_to_world(const EgoRefPoint& local, const Pose2d& ego, double& x, double& y) {
    const double c = std::cos(ego.psi), s = std::sin(ego.psi);
    x = ego.x + c * local.x_local - s * local.y_local;
    y = ego.y + s * local.x_local + c * local.y_local;
}

TrackSpec track_spec_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    TrackSpec spec;
    spec.closed = j.value("closed", false);
    spec.v_top = j.value("v_top", 37.5);
    for (const auto& js : j.at("segments")) {
        TrackSegment seg;
        const std::string type = js.at("type").get<std::string>();
        if (type == "straight") {
            seg.kind = TrackSegment::Kind::Straight;
            seg.length_m = js.at("length_m").get<double>();
        } else if (type == "arc") {
            seg.kind = TrackSegment::Kind::Arc;
            seg.radius_m = js.at("radius_m").get<double>();
            seg.sweep_deg = js.value("sweep_deg", 0.0);
            seg.length_m = js.value("length_m", 0.0);
            if (seg.sweep_deg == 0.0 && seg.length_m == 0.0) {
                throw std::invalid_argument("arc segment needs sweep_deg or length_m");
            }
        } else {
            throw std::invalid_argument("unknown segment type: " + type);
        }
        spec.segments.push_back(seg);
    }
    return spec;
}

std::string track_spec_to_json(const TrackSpec& spec) {
    nlohmann::json j;
    j["closed"] = spec.closed;
    j["v_top"] = spec.v_top;
    j["segments"] = nlohmann::json::array();
    for (const auto& seg : spec.segments) {
        nlohmann::json js;
        if (seg.kind == TrackSegment::Kind::Straight) {
            js["type"] = "straight";
            js["length_m"] = seg.length_m;
        } else {
            js["type"] = "arc";
            js["radius_m"] = seg.radius_m;
            if (seg.sweep_deg != 0.0)
                js["sweep_deg"] = seg.sweep_deg;
            else
                js["length_m"] = seg.length_m;
        }
        j["segments"].push_back(js);
    }
    return j.dump(2);
}

TrackSpec load_track_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open track spec: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return track_spec_from_json(ss.str());
}

}  // namespace asnmpc
