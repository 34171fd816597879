#pragma once
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dronet/image.hpp"
#include "dronet/rng.hpp"

namespace dronet::data {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Split { train, val, test, none };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

// one labeled navigation frame
struct Sample {
    Image image;      // 200x200 grayscale
    float yaw_rate = 0.0f; // in [-1, 1]
    int collision = 0;     // {0, 1}
};

struct FrameRecord {
    int index = 0;
    double timestamp = 0.0;
    float yaw_rate = 0.0f;
    int collision = 0;
    std::string rel_path; // image path relative to the sequence directory
};

struct SequenceMeta {
    std::string scenario = "indoor";     // indoor | outdoor
    std::string path_type = "straight";  // straight | turns
    std::string obstacle_types = "none";
    double height_m = 0.5; // {0.5, 1.0, 1.5}
    std::string light = "normal"; // dark | normal | bright
    std::string acquired = "";
    std::string location = "sim";
};

struct Sequence {
    std::string id;
    std::string dir; // relative to the dataset root
    SequenceMeta meta;
    Split split = Split::none;
    std::vector<FrameRecord> frames;
};

struct DatasetManifest {
    std::string root; // absolute or cwd-relative directory
    std::vector<Sequence> sequences;

    size_t frame_count() const;
    std::string frame_path(const Sequence& s, const FrameRecord& f) const;
    // sequences filtered by split tag (Split::none selects everything)
    DatasetManifest filter(Split s) const;
};

struct AugmentConfig {
    double flip_prob = 0.5;
    int brightness_delta = 30;      // +- range
    double vignette_strength = 0.4; // max radial falloff
    int blur_kernel_max = 3;        // box kernel, odd, 1 = off
};

struct GenerateConfig {
    std::vector<uint64_t> world_seeds;
    int frames_per_run = 400;
    int capture_every_n_ticks = 3;
    double v_target = 0.5;
    uint64_t seed = 1; // sequence-level randomization (lighting, heights)
    // each captured tick also emits frames from heading-perturbed poses
    // (command and collision labels recomputed there), widening the view
    // distribution the way a human pilot's wobble would; wide perturbations
    // teach recovery when the whole field of view is wall
    double heading_jitter_prob = 0.7;
    double heading_jitter_rad = 1.0;
    int heading_jitter_frames = 2;
};

// oracle pilot flies randomized corridor worlds; labels follow the ranging
// rule (collision = 1 iff line of sight blocked nearer than 2 m)
DatasetManifest generate_synthetic_dataset(const GenerateConfig& cfg, const std::string& out_dir);

// sequence-granular split, deterministic under seed; fractions must sum to 1
DatasetManifest split_dataset(const DatasetManifest& m, double train_frac, double val_frac,
                              double test_frac, uint64_t seed);

Sample augment_sample(const Sample& s, const AugmentConfig& cfg, Rng& rng);

// drops random zero-yaw frames (|yaw| <= tol) from the given split until
// their fraction is <= cap; never drops nonzero-yaw frames
DatasetManifest balance_split(const DatasetManifest& m, Split split, double zero_yaw_cap,
                              double tol, uint64_t seed);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// loads the pixel payload for one frame
Image load_frame(const DatasetManifest& m, const Sequence& s, const FrameRecord& f);

// zero-yaw fraction of a split (diagnostics and balancing)
double zero_yaw_fraction(const DatasetManifest& m, double tol = 1e-3);

// yaw-rate histogram over [-1,1]; emitted as an artifact next to metrics
std::vector<int> yaw_histogram(const DatasetManifest& m, int bins);

} // namespace dronet::data
