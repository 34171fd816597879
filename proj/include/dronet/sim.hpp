#pragma once
#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dronet/image.hpp"
#include "dronet/rng.hpp"

namespace dronet::sim {

struct SimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Vec2 {
    double x = 0.0, y = 0.0;
};

struct Rect {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }
};

// Dynamic obstacle: appears once the drone crosses trigger_x inside the
// trigger band, stays for lifetime_s seconds, then is removed.
struct DynamicObstacle {
    Rect rect;
    double trigger_x = 0.0;
    Rect trigger_band;     // drone must be inside this region when crossing
    double lifetime_s = 5.0;
};

struct World {
    std::vector<Rect> walls;
    std::vector<Rect> obstacles;
    std::optional<DynamicObstacle> dynamic;
    std::array<Rect, 3> segments; // S1, S2, S3 regions (index 0..2)
    std::vector<Vec2> waypoints;  // oracle centerline, ordered start -> goal
    double start_x = 0, start_y = 0, start_theta = 0;
    Rect goal; // reaching this region completes the course

    // -1 when outside every segment region
    int segment_of(double x, double y) const;
};

struct UPathConfig {
    double corridor_len = 6.0;     // straight segment length (S1 and S3)
    double corridor_width = 2.0;
    double wall_thickness = 0.2;
    double obstacle_width = 1.0;   // across the corridor
    double obstacle_depth = 0.3;   // along the corridor
    std::vector<double> stations = {2.0, 4.0}; // obstacle x positions per straight
    bool dynamic_obstacle = false; // replace obstacle 2 with the triggered one
    double dynamic_braking_space = 1.5;
    double dynamic_lifetime_s = 5.0;
};

World build_upath_world(const UPathConfig& cfg);

// randomized corridor course for dataset generation: straight / L-shaped /
// U-shaped template with randomized lengths, obstacle stations and sides
World build_random_world(uint64_t seed);

struct CameraConfig {
    int width = 200, height = 200;
    double hfov_rad = 60.0 * 3.14159265358979323846 / 180.0;
    double wall_height_m = 1.0;
    double range_cap_m = 4.0; // shading saturates here
    uint8_t wall_shade = 160, obstacle_shade = 64;
    uint8_t ceiling_shade = 235, floor_shade = 210;
    int brightness_offset = 0; // per-sequence lighting
};

struct Pose {
    double x = 0, y = 0, theta = 0;
};

// column raycast renderer; dynamic obstacle included only when active
Image render_camera(const World& w, const Pose& pose, bool dynamic_active = false,
                    const CameraConfig& cam = {});

// distance to the nearest wall/obstacle along the heading, capped
double forward_clearance(const World& w, const Pose& pose, bool dynamic_active, double cap_m = 4.0);

// labeling rule: obstacle in line of sight closer than 2 m
bool collision_label(const World& w, const Pose& pose, bool dynamic_active = false);

struct DroneState {
    double x = 0, y = 0;
    double theta = 0;
    double v_filter = 0;     // filtered forward speed, m/s
    double omega_filter = 0; // filtered yaw rate, rad/s
    double time = 0;         // s
};

struct ControlConfig {
    double v_target = 0.5;        // m/s, one of {0.5, 1.0, 1.5} in the protocol
    double alpha1 = 0.3;          // speed low-pass
    double alpha2 = 0.3;          // yaw-rate low-pass
    double omega_max = 1.5707963267948966; // rad/s mapped to |yaw_pred| = 1
    double brake_threshold = 0.7; // p_coll above this forces v_unfilt = 0
    double cnn_rate_hz = 100.0;   // inference rate, from the deployment report
    double dt = 0.01;             // 100 Hz control tick
    double timeout_s = 120.0;
    double drone_radius = 0.05;   // 10 cm diameter airframe
};

// One 100 Hz tick: v_unfilt = v_target*(1 - p_coll) (0 above the brake
// threshold), omega_unfilt = omega_max*yaw_pred, both low-pass filtered,
// then unicycle integration.
DroneState control_step(const DroneState& s, double yaw_pred, double p_coll,
                        const ControlConfig& cfg);

// policy queried at the configured inference rate; the last prediction is
// held between inferences
struct Policy {
    virtual ~Policy() = default;
    virtual void reset() {}
    virtual std::pair<double, double> predict(const World& w, const DroneState& s,
                                              const Image& frame) = 0; // (yaw, p_coll)
    // policies that do not consume images can skip rendering
    virtual bool wants_frames() const { return true; }
};

// waypoint-following pilot; stands in for the human pilot
struct OraclePolicy : Policy {
    explicit OraclePolicy(const World& w);
    std::pair<double, double> predict(const World& w, const DroneState& s,
                                      const Image& frame) override;
    // command toward the current waypoint from an arbitrary pose, without
    // advancing the waypoint cursor (used for label recomputation)
    double command_at(const World& w, double x, double y, double theta) const;
    bool wants_frames() const override { return false; }
    void reset() override { next_wp_ = 0; }

    double lookahead_m = 0.7;
    double gain = 2.2; // yaw command per radian of heading error

private:
    size_t next_wp_ = 0;
};

struct ConstantPolicy : Policy {
    double yaw, p_coll;
    ConstantPolicy(double y, double p) : yaw(y), p_coll(p) {}
    std::pair<double, double> predict(const World&, const DroneState&, const Image&) override {
        return {yaw, p_coll};
    }
    bool wants_frames() const override { return false; }
};

enum class Outcome { success, crash, stall };
enum class SegmentOutcome { success, crash, stall, not_attempted };

const char* to_string(Outcome o);
const char* to_string(SegmentOutcome o);

struct PoseRecord {
    double t, x, y, theta, v, omega, yaw_pred, p_coll;
};

struct EpisodeLog {
    std::vector<PoseRecord> trace; // 100 Hz
    Outcome outcome = Outcome::stall;
    int fail_segment = -1;             // segment index at failure, -1 on success
    double duration_s = 0.0;
    long cnn_queries = 0;
    std::array<SegmentOutcome, 3> segments{SegmentOutcome::not_attempted,
                                           SegmentOutcome::not_attempted,
                                           SegmentOutcome::not_attempted};
    double v_avg = -1.0; // arc length / time on full success, else < 0 (N/A)
    bool has_v_avg() const { return v_avg >= 0.0; }
};

struct EpisodeConfig {
    ControlConfig control;
    CameraConfig camera;
    double start_jitter_xy = 0.1;   // seeded start perturbation
    double start_jitter_theta = 0.1;
    // observer invoked every control tick (dataset capture); frame is only
    // rendered when non-null and the policy wants frames or capture is on
    std::function<void(const DroneState&, const Image*, double yaw_cmd, double p_coll)> observer;
    bool render_for_observer = false;
};

EpisodeLog run_episode(const World& w, Policy& policy, const EpisodeConfig& cfg, uint64_t seed);

// per-segment outcomes and v_avg from a finished trace
void evaluate_episode(EpisodeLog& log, const World& w);

// line-delimited pose records plus a summary record
void save_episode_log(const EpisodeLog& log, const std::string& path);

// trajectory over the world outline, written as a binary PPM raster
void plot_episode(const EpisodeLog& log, const World& w, const std::string& path);

} // namespace dronet::sim
