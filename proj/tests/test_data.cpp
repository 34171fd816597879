#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dronet/data.hpp"
#include "dronet/sim.hpp"

using namespace dronet;
using namespace dronet::data;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// small generated dataset reused across cases
const DatasetManifest& tiny_dataset() {
    static DatasetManifest m = [] {
        GenerateConfig cfg;
        cfg.world_seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
        cfg.frames_per_run = 60;
        cfg.capture_every_n_ticks = 10;
        cfg.seed = 99;
        return generate_synthetic_dataset(cfg, fresh_dir("dronet_data_tiny").string());
    }();
    return m;
}

} // namespace

TEST_CASE("pgm round-trip") {
    Image img(5, 7);
    for (size_t i = 0; i < img.px.size(); ++i) img.px[i] = static_cast<uint8_t>(i * 13 % 256);
    auto p = (fs::temp_directory_path() / "dronet_t.pgm").string();
    save_pgm(img, p);
    Image back = load_pgm(p);
    REQUIRE(back.h == 5);
    REQUIRE(back.w == 7);
    CHECK(back.px == img.px);
    fs::remove(p);
}

TEST_CASE("generator produces sequences with valid labels and files") {
    const auto& m = tiny_dataset();
    REQUIRE(m.sequences.size() == 10);
    size_t frames = 0;
    for (const auto& seq : m.sequences) {
        CHECK(!seq.frames.empty());
        for (const auto& fr : seq.frames) {
            frames++;
            CHECK(fr.yaw_rate >= -1.0f);
            CHECK(fr.yaw_rate <= 1.0f);
            CHECK((fr.collision == 0 || fr.collision == 1));
            CHECK(fs::exists(m.frame_path(seq, fr)));
        }
    }
    CHECK(frames > 200);
}

TEST_CASE("generator labels straight flight with near-zero yaw before balancing") {
    // on the flown trajectory (recovery jitter off) straight segments
    // dominate, so zero-yaw is the plurality before any balancing
    fs::path dir = fs::temp_directory_path() / "dronet_data_nojit";
    fs::remove_all(dir);
    GenerateConfig cfg;
    cfg.world_seeds = {41, 42, 43, 44};
    cfg.frames_per_run = 80;
    cfg.capture_every_n_ticks = 8;
    cfg.heading_jitter_prob = 0.0;
    auto m = generate_synthetic_dataset(cfg, dir.string());
    CHECK(zero_yaw_fraction(m, 0.05) > 0.3);

    auto h = yaw_histogram(m, 21);
    int total = 0;
    for (int c : h) total += c;
    CHECK(total == static_cast<int>(m.frame_count()));
    // center bin (zero yaw) dominates an unbalanced flown-label set
    for (int i = 0; i < 21; ++i)
        if (i != 10) CHECK(h[10] >= h[i]);
}

TEST_CASE("labeling rule is a pure function of pose and world") {
    sim::World w = sim::build_random_world(17);
    sim::Pose pose{w.start_x, w.start_y, w.start_theta};
    bool a = sim::collision_label(w, pose);
    for (int i = 0; i < 5; ++i) CHECK(sim::collision_label(w, pose) == a);
}

TEST_CASE("manifest round-trips through its file format") {
    const auto& m = tiny_dataset();
    auto path = (fs::path(m.root) / "manifest.txt").string();
    save_manifest(m, path);
    DatasetManifest loaded = load_manifest(path);
    REQUIRE(loaded.sequences.size() == m.sequences.size());
    CHECK(loaded.frame_count() == m.frame_count());
    for (size_t i = 0; i < m.sequences.size(); ++i) {
        CHECK(loaded.sequences[i].id == m.sequences[i].id);
        CHECK(loaded.sequences[i].frames.size() == m.sequences[i].frames.size());
        if (!m.sequences[i].frames.empty()) {
            CHECK(loaded.sequences[i].frames[0].yaw_rate ==
                  doctest::Approx(m.sequences[i].frames[0].yaw_rate));
        }
        CHECK(loaded.sequences[i].meta.light == m.sequences[i].meta.light);
    }
}

TEST_CASE("loader rejects out-of-range yaw with the offending row identified") {
    auto dir = fresh_dir("dronet_data_badyaw");
    fs::create_directories(dir / "s0" / "frames");
    save_pgm(Image(200, 200), (dir / "s0" / "frames" / "000000.pgm").string());
    std::ofstream f((dir / "manifest.txt").string());
    f << "dronet-manifest v1\n";
    f << "seq s0 none s0 1\n";
    f << "frame 0 0.0 1.5 0 frames/000000.pgm\n";
    f.close();
    try {
        load_manifest((dir / "manifest.txt").string());
        FAIL("expected rejection");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("loader rejects missing image files") {
    auto dir = fresh_dir("dronet_data_missing");
    fs::create_directories(dir / "s0" / "frames");
    std::ofstream f((dir / "manifest.txt").string());
    f << "dronet-manifest v1\n";
    f << "seq s0 none s0 1\n";
    f << "frame 0 0.0 0.25 1 frames/000000.pgm\n";
    f.close();
    CHECK_THROWS_AS(load_manifest((dir / "manifest.txt").string()), DataError);
}

TEST_CASE("split is sequence-granular, exhaustive, and seed-deterministic") {
    const auto& m = tiny_dataset();
    DatasetManifest s1 = split_dataset(m, 0.7, 0.1, 0.2, 5);
    DatasetManifest s2 = split_dataset(m, 0.7, 0.1, 0.2, 5);
    int n_train = 0, n_val = 0, n_test = 0;
    for (size_t i = 0; i < s1.sequences.size(); ++i) {
        CHECK(s1.sequences[i].split == s2.sequences[i].split);
        CHECK(s1.sequences[i].split != Split::none);
        if (s1.sequences[i].split == Split::train) ++n_train;
        if (s1.sequences[i].split == Split::val) ++n_val;
        if (s1.sequences[i].split == Split::test) ++n_test;
    }
    // 10 sequences at 70/10/20
    CHECK(n_train == 7);
    CHECK(n_val == 1);
    CHECK(n_test == 2);

    // every frame lands in exactly one split
    CHECK(s1.filter(Split::train).frame_count() + s1.filter(Split::val).frame_count() +
              s1.filter(Split::test).frame_count() ==
          m.frame_count());
}

TEST_CASE("split rejects too-few sequences and bad fractions") {
    DatasetManifest m;
    m.sequences.resize(2);
    CHECK_THROWS_AS(split_dataset(m, 0.7, 0.1, 0.2, 1), DataError);
    m.sequences.resize(5);
    CHECK_THROWS_AS(split_dataset(m, 0.7, 0.2, 0.2, 1), DataError);
}

TEST_CASE("flip augmentation negates yaw and is an involution on the image") {
    Rng rng(3);
    Sample s;
    s.image = Image(200, 200);
    for (size_t i = 0; i < s.image.px.size(); ++i) s.image.px[i] = static_cast<uint8_t>(i % 251);
    s.yaw_rate = 0.4f;
    s.collision = 1;

    AugmentConfig cfg;
    cfg.flip_prob = 1.0;
    cfg.brightness_delta = 0;
    cfg.vignette_strength = 0.0;
    cfg.blur_kernel_max = 1;
    Sample once = augment_sample(s, cfg, rng);
    CHECK(once.yaw_rate == doctest::Approx(-0.4f));
    CHECK(once.collision == 1);
    Sample twice = augment_sample(once, cfg, rng);
    CHECK(twice.yaw_rate == doctest::Approx(0.4f));
    CHECK(twice.image.px == s.image.px);
}

TEST_CASE("brightness shift on a constant image adds the constant") {
    Rng rng(4);
    Sample s;
    s.image = Image(200, 200, 128);
    AugmentConfig cfg;
    cfg.flip_prob = 0.0;
    cfg.brightness_delta = 10;
    cfg.vignette_strength = 0.0;
    cfg.blur_kernel_max = 1;
    // output stays a constant image at 128 + delta; the full delta range
    // is exercised across seeds
    bool saw_plus10 = false, saw_minus10 = false;
    for (int tries = 0; tries < 300; ++tries) {
        Rng local(tries);
        Sample out = augment_sample(s, cfg, local);
        const uint8_t first = out.image.px[0];
        for (auto v : out.image.px) CHECK(v == first);
        const int delta = static_cast<int>(first) - 128;
        CHECK(delta >= -10);
        CHECK(delta <= 10);
        if (delta == 10) saw_plus10 = true;
        if (delta == -10) saw_minus10 = true;
    }
    CHECK(saw_plus10);
    CHECK(saw_minus10);
}

TEST_CASE("augmented pixels stay within [0,255]") {
    Rng rng(6);
    Sample s;
    s.image = Image(200, 200, 250);
    AugmentConfig cfg;
    for (int i = 0; i < 10; ++i) {
        Sample out = augment_sample(s, cfg, rng);
        for (auto v : out.image.px) {
            CHECK(v <= 255);
        }
    }
}

TEST_CASE("balancing caps the zero-yaw fraction and touches nothing else") {
    const auto& base = tiny_dataset();
    DatasetManifest m = split_dataset(base, 0.7, 0.1, 0.2, 5);
    const double before = zero_yaw_fraction(m.filter(Split::test));
    DatasetManifest b = balance_split(m, Split::test, 0.3, 1e-3, 7);
    const double after = zero_yaw_fraction(b.filter(Split::test));
    CHECK(after <= 0.3 + 1e-9);
    CHECK(after <= before);
    // nonzero-yaw frames survive
    size_t nz_before = 0, nz_after = 0;
    for (const auto& seq : m.filter(Split::test).sequences)
        for (const auto& f : seq.frames)
            if (std::fabs(f.yaw_rate) > 1e-3) ++nz_before;
    for (const auto& seq : b.filter(Split::test).sequences)
        for (const auto& f : seq.frames)
            if (std::fabs(f.yaw_rate) > 1e-3) ++nz_after;
    CHECK(nz_before == nz_after);
    // other splits untouched
    CHECK(b.filter(Split::train).frame_count() == m.filter(Split::train).frame_count());
}

TEST_CASE("balancing is a no-op when already under the cap or cap is 1") {
    const auto& base = tiny_dataset();
    DatasetManifest one = balance_split(base, Split::none, 1.0, 1e-3, 7);
    CHECK(one.frame_count() == base.frame_count());

    // dataset with no zero-yaw frames
    DatasetManifest m;
    m.root = base.root;
    Sequence s;
    s.id = "x";
    s.dir = base.sequences[0].dir;
    FrameRecord f;
    f.yaw_rate = 0.5f;
    f.rel_path = base.sequences[0].frames[0].rel_path;
    s.frames.push_back(f);
    m.sequences.push_back(s);
    DatasetManifest out = balance_split(m, Split::none, 0.1, 1e-3, 7);
    CHECK(out.frame_count() == 1);
}

TEST_CASE("balancing arithmetic: 80% zeros capped to one half") {
    DatasetManifest m;
    m.root = ".";
    Sequence s;
    s.id = "x";
    s.dir = ".";
    for (int i = 0; i < 100; ++i) {
        FrameRecord f;
        f.index = i;
        f.yaw_rate = i < 80 ? 0.0f : 0.9f;
        s.frames.push_back(f);
    }
    m.sequences.push_back(s);
    DatasetManifest out = balance_split(m, Split::none, 0.5, 1e-3, 11);
    // 20 nonzero kept; zeros reduced to exactly 20 -> fraction 0.5
    CHECK(out.frame_count() == 40);
    CHECK(zero_yaw_fraction(out) == doctest::Approx(0.5));
}

TEST_CASE("flip symmetry drives the expected yaw toward zero") {
    Rng rng(12);
    AugmentConfig cfg;
    cfg.flip_prob = 0.5;
    cfg.brightness_delta = 0;
    cfg.vignette_strength = 0.0;
    cfg.blur_kernel_max = 1;
    Sample s;
    s.image = Image(8, 8, 100);
    s.yaw_rate = 0.6f;
    const int N = 4000;
    double sum = 0.0;
    for (int i = 0; i < N; ++i) sum += augment_sample(s, cfg, rng).yaw_rate;
    const double mean = sum / N;
    const double sigma = 0.6 / std::sqrt(static_cast<double>(N));
    CHECK(std::fabs(mean) < 3.0 * sigma);
}

TEST_CASE("yaw histogram covers the label range") {
    const auto& m = tiny_dataset();
    auto h = yaw_histogram(m, 21);
    int total = 0;
    for (int c : h) total += c;
    CHECK(total == static_cast<int>(m.frame_count()));
}
