#include "dronet/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace dronet::sim {

namespace {
constexpr double kPi = 3.14159265358979323846;

double wrap_angle(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
}
} // namespace

int World::segment_of(double x, double y) const {
    for (int i = 0; i < 3; ++i)
        if (segments[i].contains(x, y)) return i;
    return -1;
}

const char* to_string(Outcome o) {
    switch (o) {
        case Outcome::success: return "success";
        case Outcome::crash: return "crash";
        case Outcome::stall: return "stall";
    }
    return "?";
}

const char* to_string(SegmentOutcome o) {
    switch (o) {
        case SegmentOutcome::success: return "success";
        case SegmentOutcome::crash: return "crash";
        case SegmentOutcome::stall: return "stall";
        case SegmentOutcome::not_attempted: return "---";
    }
    return "?";
}

// ---- world building -------------------------------------------------------

namespace {

// waypoints threading one straight corridor, weaving through obstacle gaps;
// dir is +1 when flying toward +x, -1 toward -x
void weave_waypoints(std::vector<Vec2>& wps, double x_to, double y_lo, double y_hi,
                     const std::vector<std::pair<double, double>>& station_gapcenter,
                     double obstacle_depth, double dir) {
    const double y_mid = 0.5 * (y_lo + y_hi);
    for (const auto& [st, gy] : station_gapcenter) {
        double mid = st + 0.5 * obstacle_depth;
        wps.push_back({mid - dir * 0.8, gy});
        wps.push_back({mid + dir * 0.35, gy});
        wps.push_back({mid + dir * 1.1, 0.5 * (gy + y_mid)});
    }
    wps.push_back({x_to, y_mid});
}

} // namespace

World build_upath_world(const UPathConfig& cfg) {
    if (cfg.obstacle_width >= cfg.corridor_width) throw SimError("obstacle wider than corridor");
    const double L = cfg.corridor_len;
    const double W = cfg.corridor_width;
    const double t = cfg.wall_thickness;
    const double d = cfg.obstacle_depth;
    const double ow = cfg.obstacle_width;
    const double top = 3.0 * W; // upper corridor top edge (6 m at defaults)

    World w;
    w.walls.push_back({-t, -t, L + W + t, 0});          // bottom
    w.walls.push_back({-t, top, L + W + t, top + t});   // top
    w.walls.push_back({-t, -t, 0, top + t});            // left
    w.walls.push_back({L + W, -t, L + W + t, top + t}); // right
    w.walls.push_back({0, W, L, 2.0 * W});              // divider between the corridors

    // lower corridor: obstacles leaning on alternating walls
    std::vector<std::pair<double, double>> s1_gaps;
    for (size_t i = 0; i < cfg.stations.size(); ++i) {
        const double st = cfg.stations[i];
        const bool on_bottom = (i % 2 == 0);
        const double gap_center = on_bottom ? 0.5 * (ow + W) : 0.5 * (W - ow);
        s1_gaps.push_back({st, gap_center});
        if (cfg.dynamic_obstacle && i == 1) {
            DynamicObstacle dyn;
            const double cy = 0.5 * W;
            dyn.rect = {st, cy - 0.5 * ow, st + d, cy + 0.5 * ow};
            dyn.trigger_x = st - cfg.dynamic_braking_space;
            dyn.trigger_band = {0, 0, L, W};
            dyn.lifetime_s = cfg.dynamic_lifetime_s;
            w.dynamic = dyn;
            continue;
        }
        w.obstacles.push_back(on_bottom ? Rect{st, 0, st + d, ow} : Rect{st, W - ow, st + d, W});
    }
    // upper corridor: mirrored pair, encountered in descending x while flying -x
    std::vector<std::pair<double, double>> s3_gaps;
    {
        std::vector<double> st3(cfg.stations.rbegin(), cfg.stations.rend());
        for (size_t i = 0; i < st3.size(); ++i) {
            const double st = st3[i];
            const bool on_top = (i % 2 == 0);
            w.obstacles.push_back(on_top ? Rect{st, top - ow, st + d, top}
                                         : Rect{st, 2.0 * W, st + d, 2.0 * W + ow});
            const double gap_center = on_top ? 2.0 * W + 0.5 * (W - ow) : top - 0.5 * (W - ow);
            s3_gaps.push_back({st, gap_center});
        }
    }

    w.segments[0] = {0, 0, L, W};
    w.segments[1] = {L, 0, L + W, top};
    w.segments[2] = {0, 2.0 * W, L, top};
    w.start_x = 0.5;
    w.start_y = 0.5 * W;
    w.start_theta = 0.0;
    w.goal = {0, 2.0 * W, 0.45, top};

    const double cx = L + 0.5 * W; // turn corridor center
    w.waypoints.push_back({1.2, 0.5 * W});
    weave_waypoints(w.waypoints, cx, 0, W, s1_gaps, d, +1.0);
    w.waypoints.push_back({cx, 1.5 * W});
    w.waypoints.push_back({cx, top - 0.5 * W});
    weave_waypoints(w.waypoints, 0.3, 2.0 * W, top, s3_gaps, d, -1.0);
    return w;
}

namespace {

World mirror_y(World w) {
    auto flip = [](Rect r) { return Rect{r.x0, -r.y1, r.x1, -r.y0}; };
    for (auto& r : w.walls) r = flip(r);
    for (auto& r : w.obstacles) r = flip(r);
    if (w.dynamic) {
        w.dynamic->rect = flip(w.dynamic->rect);
        w.dynamic->trigger_band = flip(w.dynamic->trigger_band);
    }
    for (auto& s : w.segments) s = flip(s);
    w.goal = flip(w.goal);
    for (auto& p : w.waypoints) p.y = -p.y;
    w.start_y = -w.start_y;
    w.start_theta = -w.start_theta;
    return w;
}

// single corridor along +x with alternating obstacles
World build_straight_world(Rng& rng) {
    const double W = 2.0, t = 0.2, d = 0.3, ow = 1.0;
    const double L = rng.uniform(8.0, 13.0);
    World w;
    w.walls.push_back({-t, -t, L + t, 0});
    w.walls.push_back({-t, W, L + t, W + t});
    w.walls.push_back({-t, -t, 0, W + t});
    w.walls.push_back({L, -t, L + t, W + t});

    int n_obs = rng.range(2, 3);
    bool on_bottom = rng.chance(0.5);
    std::vector<std::pair<double, double>> gaps;
    double st = rng.uniform(1.8, 2.6);
    for (int i = 0; i < n_obs && st < L - 2.0; ++i) {
        w.obstacles.push_back(on_bottom ? Rect{st, 0, st + d, ow} : Rect{st, W - ow, st + d, W});
        gaps.push_back({st, on_bottom ? 0.5 * (ow + W) : 0.5 * (W - ow)});
        on_bottom = !on_bottom;
        st += rng.uniform(1.9, 2.8);
    }
    const double third = L / 3.0;
    w.segments[0] = {0, 0, third, W};
    w.segments[1] = {third, 0, 2 * third, W};
    w.segments[2] = {2 * third, 0, L, W};
    w.start_x = 0.5;
    w.start_y = 0.5 * W;
    w.start_theta = 0;
    w.goal = {L - 0.45, 0, L, W};
    w.waypoints.push_back({1.0, 0.5 * W});
    weave_waypoints(w.waypoints, L - 0.3, 0, W, gaps, d, +1.0);
    return w;
}

// corridor along +x turning 90 degrees left into a corridor along +y
World build_lshape_world(Rng& rng) {
    const double W = 2.0, t = 0.2, d = 0.3, ow = 1.0;
    const double L1 = rng.uniform(5.0, 8.0);
    const double L2 = rng.uniform(4.0, 7.0);
    World w;
    w.walls.push_back({-t, -t, L1 + W + t, 0});                  // bottom
    w.walls.push_back({L1 + W, -t, L1 + W + t, W + L2 + t});     // right
    w.walls.push_back({-t, -t, 0, W + t});                       // left cap
    w.walls.push_back({-t, W, L1, W + t});                       // top of horizontal leg
    w.walls.push_back({L1 - t, W, L1, W + L2 + t});              // left of vertical leg
    w.walls.push_back({L1 - t, W + L2, L1 + W + t, W + L2 + t}); // top cap

    bool on_bottom = rng.chance(0.5);
    std::vector<std::pair<double, double>> gaps;
    double st = rng.uniform(1.8, 2.4);
    int n_obs = rng.range(1, 2);
    for (int i = 0; i < n_obs && st < L1 - 2.2; ++i) {
        w.obstacles.push_back(on_bottom ? Rect{st, 0, st + d, ow} : Rect{st, W - ow, st + d, W});
        gaps.push_back({st, on_bottom ? 0.5 * (ow + W) : 0.5 * (W - ow)});
        on_bottom = !on_bottom;
        st += rng.uniform(2.0, 2.8);
    }
    w.segments[0] = {0, 0, L1, W};
    w.segments[1] = {L1, 0, L1 + W, W};
    w.segments[2] = {L1, W, L1 + W, W + L2};
    w.start_x = 0.5;
    w.start_y = 0.5 * W;
    w.start_theta = 0;
    w.goal = {L1, W + L2 - 0.45, L1 + W, W + L2};
    const double cx = L1 + 0.5 * W;
    w.waypoints.push_back({1.0, 0.5 * W});
    weave_waypoints(w.waypoints, cx, 0, W, gaps, d, +1.0);
    if (rng.chance(0.5) && L2 > 5.0) {
        // one optional obstacle mid-way up the vertical leg
        const double sy = W + rng.uniform(1.5, L2 - 2.5);
        const bool on_left = rng.chance(0.5);
        w.obstacles.push_back(on_left ? Rect{L1, sy, L1 + ow, sy + d}
                                      : Rect{L1 + W - ow, sy, L1 + W, sy + d});
        const double gx = on_left ? L1 + ow + 0.5 * (W - ow) : L1 + 0.5 * (W - ow);
        w.waypoints.push_back({cx, sy - 0.8});
        w.waypoints.push_back({gx, sy + 0.5 * d + 0.35});
        w.waypoints.push_back({0.5 * (gx + cx), sy + 1.1});
    }
    w.waypoints.push_back({cx, W + L2 - 0.3});
    return w;
}

World build_random_upath(Rng& rng) {
    UPathConfig cfg;
    cfg.corridor_len = rng.uniform(5.5, 8.0);
    cfg.stations.clear();
    double st = rng.uniform(1.6, 2.4);
    while (st < cfg.corridor_len - 1.6) {
        cfg.stations.push_back(st);
        st += rng.uniform(1.9, 2.9);
    }
    if (cfg.stations.empty()) cfg.stations.push_back(2.0);
    return build_upath_world(cfg);
}

} // namespace

World build_random_world(uint64_t seed) {
    Rng rng(seed);
    // corners dominate the failure modes, so turn-bearing courses get the
    // larger share of the sampling budget
    const int kind = static_cast<int>(rng.below(4));
    World w;
    switch (kind) {
        case 0: w = build_straight_world(rng); break;
        case 1: w = build_lshape_world(rng); break;
        default: w = build_random_upath(rng); break;
    }
    if (rng.chance(0.5)) w = mirror_y(std::move(w));
    return w;
}

// ---- raycasting and rendering ----------------------------------------------

namespace {

// slab intersection; smallest t >= 0, negative on miss
double ray_rect(double px, double py, double dx, double dy, const Rect& r) {
    double tmin = -1e30, tmax = 1e30;
    if (std::fabs(dx) < 1e-12) {
        if (px < r.x0 || px > r.x1) return -1.0;
    } else {
        double t1 = (r.x0 - px) / dx, t2 = (r.x1 - px) / dx;
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
    }
    if (std::fabs(dy) < 1e-12) {
        if (py < r.y0 || py > r.y1) return -1.0;
    } else {
        double t1 = (r.y0 - py) / dy, t2 = (r.y1 - py) / dy;
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
    }
    if (tmax < tmin || tmax < 0.0) return -1.0;
    return tmin >= 0.0 ? tmin : 0.0;
}

struct Hit {
    double dist = -1.0;
    bool is_obstacle = false;
};

Hit cast_ray(const World& w, double px, double py, double dx, double dy, bool dynamic_active) {
    Hit best;
    double nearest = 1e30;
    auto consider = [&](const Rect& r, bool obstacle) {
        double t = ray_rect(px, py, dx, dy, r);
        if (t >= 0.0 && t < nearest) {
            nearest = t;
            best.dist = t;
            best.is_obstacle = obstacle;
        }
    };
    for (const auto& r : w.walls) consider(r, false);
    for (const auto& r : w.obstacles) consider(r, true);
    if (dynamic_active && w.dynamic) consider(w.dynamic->rect, true);
    return best;
}

uint8_t clamp_u8(int v) { return static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v)); }

} // namespace

Image render_camera(const World& w, const Pose& pose, bool dynamic_active, const CameraConfig& cam) {
    Image img(cam.height, cam.width);
    const double focal = (cam.width / 2.0) / std::tan(cam.hfov_rad / 2.0);
    const uint8_t ceil_px = clamp_u8(cam.ceiling_shade + cam.brightness_offset);
    const uint8_t floor_px = clamp_u8(cam.floor_shade + cam.brightness_offset);
    for (int col = 0; col < cam.width; ++col) {
        const double off = cam.hfov_rad * (0.5 - (col + 0.5) / cam.width);
        const double ang = pose.theta + off;
        const Hit hit = cast_ray(w, pose.x, pose.y, std::cos(ang), std::sin(ang), dynamic_active);
        int top_rows = cam.height / 2, span = 0;
        uint8_t shade = ceil_px;
        if (hit.dist >= 0.0) {
            // perpendicular distance keeps flat walls flat across the image;
            // round (not truncate) so 1-ulp ray noise cannot split columns
            const double d_perp = std::max(hit.dist * std::cos(off), 1e-3);
            span = std::clamp(
                static_cast<int>(std::llround(focal * cam.wall_height_m / d_perp)), 2, cam.height);
            top_rows = (cam.height - span) / 2;
            const int base = hit.is_obstacle ? cam.obstacle_shade : cam.wall_shade;
            shade = clamp_u8(base +
                             static_cast<int>(std::llround(24.0 * std::min(d_perp, cam.range_cap_m))) +
                             cam.brightness_offset);
        }
        for (int row = 0; row < cam.height; ++row) {
            uint8_t v;
            if (hit.dist < 0.0)
                v = row < cam.height / 2 ? ceil_px : floor_px;
            else if (row < top_rows)
                v = ceil_px;
            else if (row < top_rows + span)
                v = shade;
            else
                v = floor_px;
            img.at(row, col) = v;
        }
    }
    return img;
}

double forward_clearance(const World& w, const Pose& pose, bool dynamic_active, double cap_m) {
    Hit hit = cast_ray(w, pose.x, pose.y, std::cos(pose.theta), std::sin(pose.theta), dynamic_active);
    if (hit.dist < 0.0 || hit.dist > cap_m) return cap_m;
    return hit.dist;
}

bool collision_label(const World& w, const Pose& pose, bool dynamic_active) {
    return forward_clearance(w, pose, dynamic_active, 4.0) < 2.0;
}

// ---- control ----------------------------------------------------------------

DroneState control_step(const DroneState& s, double yaw_pred, double p_coll,
                        const ControlConfig& cfg) {
    double v_unfilt = cfg.v_target * (1.0 - p_coll);
    if (p_coll > cfg.brake_threshold) v_unfilt = 0.0;
    const double omega_unfilt = cfg.omega_max * std::clamp(yaw_pred, -1.0, 1.0);

    DroneState n = s;
    n.v_filter = cfg.alpha1 * v_unfilt + (1.0 - cfg.alpha1) * s.v_filter;
    n.omega_filter = cfg.alpha2 * omega_unfilt + (1.0 - cfg.alpha2) * s.omega_filter;
    n.x = s.x + n.v_filter * std::cos(s.theta) * cfg.dt;
    n.y = s.y + n.v_filter * std::sin(s.theta) * cfg.dt;
    n.theta = wrap_angle(s.theta + n.omega_filter * cfg.dt);
    n.time = s.time + cfg.dt;
    return n;
}

// ---- oracle pilot -------------------------------------------------------------

OraclePolicy::OraclePolicy(const World& w) {
    if (w.waypoints.empty()) throw SimError("oracle pilot needs a centerline");
}

std::pair<double, double> OraclePolicy::predict(const World& w, const DroneState& s, const Image&) {
    // plain pure-pursuit on the precomputed centerline
    while (next_wp_ + 1 < w.waypoints.size()) {
        const auto& wp = w.waypoints[next_wp_];
        const double dx = wp.x - s.x, dy = wp.y - s.y;
        if (std::sqrt(dx * dx + dy * dy) < lookahead_m)
            ++next_wp_;
        else
            break;
    }
    const auto& wp = w.waypoints[next_wp_];
    if (s.x < -1.0 || s.y < -20.0) throw SimError("oracle pilot: pose off-map");
    const double err = wrap_angle(std::atan2(wp.y - s.y, wp.x - s.x) - s.theta);
    return {std::clamp(gain * err, -1.0, 1.0), 0.0};
}

double OraclePolicy::command_at(const World& w, double x, double y, double theta) const {
    const size_t i = std::min(next_wp_, w.waypoints.size() - 1);
    const auto& wp = w.waypoints[i];
    const double err = wrap_angle(std::atan2(wp.y - y, wp.x - x) - theta);
    return std::clamp(gain * err, -1.0, 1.0);
}

// ---- episode runner -----------------------------------------------------------

namespace {

bool circle_hits_rect(double cx, double cy, double r, const Rect& rect) {
    const double px = std::clamp(cx, rect.x0, rect.x1);
    const double py = std::clamp(cy, rect.y0, rect.y1);
    const double dx = cx - px, dy = cy - py;
    return dx * dx + dy * dy <= r * r;
}

bool collides(const World& w, double x, double y, double r, bool dynamic_active) {
    for (const auto& rect : w.walls)
        if (circle_hits_rect(x, y, r, rect)) return true;
    for (const auto& rect : w.obstacles)
        if (circle_hits_rect(x, y, r, rect)) return true;
    return dynamic_active && w.dynamic && circle_hits_rect(x, y, r, w.dynamic->rect);
}

} // namespace

EpisodeLog run_episode(const World& w, Policy& policy, const EpisodeConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    policy.reset();

    DroneState s;
    s.x = w.start_x + cfg.start_jitter_xy * rng.uniform(-1.0, 1.0);
    s.y = w.start_y + cfg.start_jitter_xy * rng.uniform(-1.0, 1.0);
    s.theta = w.start_theta + cfg.start_jitter_theta * rng.uniform(-1.0, 1.0);

    EpisodeLog log;
    const double period = 1.0 / cfg.control.cnn_rate_hz;
    double next_inference = 0.0;
    double yaw_hold = 0.0, p_hold = 0.0;

    bool dyn_triggered = false, dyn_active = false;
    double dyn_on_at = 0.0;
    int max_seg = 0;

    const long max_ticks = static_cast<long>(cfg.control.timeout_s / cfg.control.dt);
    for (long tick = 0;; ++tick) {
        const double t = tick * cfg.control.dt;
        if (tick >= max_ticks) {
            log.outcome = Outcome::stall;
            log.fail_segment = max_seg;
            break;
        }
        if (w.dynamic) {
            if (!dyn_triggered && s.x >= w.dynamic->trigger_x &&
                w.dynamic->trigger_band.contains(s.x, s.y)) {
                dyn_triggered = true;
                dyn_on_at = t;
            }
            dyn_active = dyn_triggered && (t - dyn_on_at) < w.dynamic->lifetime_s;
        }

        const bool infer_now = t + 1e-9 >= next_inference;
        Image frame;
        const bool need_frame =
            (infer_now && policy.wants_frames()) || (cfg.observer && cfg.render_for_observer);
        if (need_frame) frame = render_camera(w, {s.x, s.y, s.theta}, dyn_active, cfg.camera);
        if (infer_now) {
            auto [yaw, p] = policy.predict(w, s, frame);
            yaw_hold = yaw;
            p_hold = p;
            ++log.cnn_queries;
            next_inference += period;
            if (next_inference < t) next_inference = t + period;
        }
        if (cfg.observer) cfg.observer(s, need_frame ? &frame : nullptr, yaw_hold, p_hold);

        s = control_step(s, yaw_hold, p_hold, cfg.control);
        const int seg = w.segment_of(s.x, s.y);
        if (seg > max_seg) max_seg = seg;
        log.trace.push_back({s.time, s.x, s.y, s.theta, s.v_filter, s.omega_filter, yaw_hold, p_hold});

        if (collides(w, s.x, s.y, cfg.control.drone_radius, dyn_active)) {
            log.outcome = Outcome::crash;
            log.fail_segment = seg >= 0 ? seg : max_seg;
            break;
        }
        if (w.goal.contains(s.x, s.y)) {
            log.outcome = Outcome::success;
            log.fail_segment = -1;
            break;
        }
    }
    log.duration_s = log.trace.empty() ? 0.0 : log.trace.back().t;
    evaluate_episode(log, w);
    return log;
}

void evaluate_episode(EpisodeLog& log, const World& w) {
    log.segments = {SegmentOutcome::not_attempted, SegmentOutcome::not_attempted,
                    SegmentOutcome::not_attempted};
    log.v_avg = -1.0;
    if (log.trace.empty()) return;

    int max_seg = 0;
    double arc = 0.0;
    for (size_t i = 0; i < log.trace.size(); ++i) {
        const auto& r = log.trace[i];
        if (i > 0) {
            const double dx = r.x - log.trace[i - 1].x, dy = r.y - log.trace[i - 1].y;
            arc += std::sqrt(dx * dx + dy * dy);
        }
        const int seg = w.segment_of(r.x, r.y);
        if (seg > max_seg) {
            // entering segment k completes every earlier one
            for (int k = max_seg; k < seg; ++k) log.segments[k] = SegmentOutcome::success;
            max_seg = seg;
        }
    }
    switch (log.outcome) {
        case Outcome::success:
            for (auto& so : log.segments)
                if (so == SegmentOutcome::not_attempted) so = SegmentOutcome::success;
            log.v_avg = log.duration_s > 0.0 ? arc / log.duration_s : 0.0;
            break;
        case Outcome::crash:
            log.segments[std::clamp(log.fail_segment, 0, 2)] = SegmentOutcome::crash;
            break;
        case Outcome::stall:
            log.segments[std::clamp(log.fail_segment, 0, 2)] = SegmentOutcome::stall;
            break;
    }
}

void save_episode_log(const EpisodeLog& log, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw SimError("cannot write " + path);
    f << "dronet-episode v1\n";
    char buf[256];
    for (const auto& r : log.trace) {
        std::snprintf(buf, sizeof(buf), "pose %.4f %.6f %.6f %.6f %.6f %.6f %.6f %.6f\n", r.t, r.x,
                      r.y, r.theta, r.v, r.omega, r.yaw_pred, r.p_coll);
        f << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "summary outcome=%s s1=%s s2=%s s3=%s duration=%.2f queries=%ld v_avg=",
                  to_string(log.outcome), to_string(log.segments[0]), to_string(log.segments[1]),
                  to_string(log.segments[2]), log.duration_s, log.cnn_queries);
    f << buf;
    if (log.has_v_avg()) {
        std::snprintf(buf, sizeof(buf), "%.3f\n", log.v_avg);
        f << buf;
    } else {
        f << "N/A\n";
    }
}

void plot_episode(const EpisodeLog& log, const World& w, const std::string& path) {
    double x0 = 1e30, y0 = 1e30, x1 = -1e30, y1 = -1e30;
    for (const auto& r : w.walls) {
        x0 = std::min(x0, r.x0);
        y0 = std::min(y0, r.y0);
        x1 = std::max(x1, r.x1);
        y1 = std::max(y1, r.y1);
    }
    const double scale = 50.0;
    const int W = static_cast<int>((x1 - x0) * scale) + 1;
    const int H = static_cast<int>((y1 - y0) * scale) + 1;
    std::vector<uint8_t> rgb(static_cast<size_t>(W) * H * 3, 255);
    auto put = [&](int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || x >= W || y < 0 || y >= H) return;
        const size_t i = (static_cast<size_t>(H - 1 - y) * W + x) * 3;
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    };
    auto fill_rect = [&](const Rect& r, uint8_t cr, uint8_t cg, uint8_t cb) {
        for (int y = static_cast<int>((r.y0 - y0) * scale); y <= (r.y1 - y0) * scale; ++y)
            for (int x = static_cast<int>((r.x0 - x0) * scale); x <= (r.x1 - x0) * scale; ++x)
                put(x, y, cr, cg, cb);
    };
    for (const auto& r : w.walls) fill_rect(r, 120, 120, 120);
    for (const auto& r : w.obstacles) fill_rect(r, 30, 30, 30);
    if (w.dynamic) fill_rect(w.dynamic->rect, 185, 185, 185);
    for (const auto& r : log.trace)
        put(static_cast<int>((r.x - x0) * scale), static_cast<int>((r.y - y0) * scale), 200, 30, 30);
    if (!log.trace.empty()) {
        put(static_cast<int>((log.trace.front().x - x0) * scale),
            static_cast<int>((log.trace.front().y - y0) * scale), 30, 160, 30);
        put(static_cast<int>((log.trace.back().x - x0) * scale),
            static_cast<int>((log.trace.back().y - y0) * scale), 30, 30, 200);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw SimError("cannot write " + path);
    f << "P6\n" << W << " " << H << "\n255\n";
    f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

} // namespace dronet::sim
