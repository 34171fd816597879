#include "dronet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dronet/sim.hpp"

namespace fs = std::filesystem;

namespace dronet {

void save_pgm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ImageError("cannot write " + path);
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
}

Image load_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ImageError("cannot read " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw ImageError("not a binary pgm: " + path);
    int w = 0, h = 0, maxval = 0;
    f >> w >> h >> maxval;
    if (w <= 0 || h <= 0 || maxval != 255) throw ImageError("bad pgm header: " + path);
    f.get(); // single whitespace after maxval
    Image img(h, w);
    f.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (!f) throw ImageError("truncated pgm: " + path);
    return img;
}

} // namespace dronet

namespace dronet::data {

const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        case Split::none: return "none";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "none") return Split::none;
    throw DataError("unknown split: " + s);
}

size_t DatasetManifest::frame_count() const {
    size_t n = 0;
    for (const auto& s : sequences) n += s.frames.size();
    return n;
}

std::string DatasetManifest::frame_path(const Sequence& s, const FrameRecord& f) const {
    return (fs::path(root) / s.dir / f.rel_path).string();
}

DatasetManifest DatasetManifest::filter(Split s) const {
    if (s == Split::none) return *this;
    DatasetManifest out;
    out.root = root;
    for (const auto& seq : sequences)
        if (seq.split == s) out.sequences.push_back(seq);
    return out;
}

// ---- generation -------------------------------------------------------------

DatasetManifest generate_synthetic_dataset(const GenerateConfig& cfg, const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw DataError("unwritable output directory: " + out_dir);

    DatasetManifest m;
    m.root = out_dir;
    Rng seq_rng(cfg.seed);

    for (size_t wi = 0; wi < cfg.world_seeds.size(); ++wi) {
        const uint64_t ws = cfg.world_seeds[wi];
        sim::World world = sim::build_random_world(ws);

        Sequence seq;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "seq%03zu", wi);
        seq.id = idbuf;
        seq.dir = seq.id;
        const int light_pick = static_cast<int>(seq_rng.below(3));
        seq.meta.light = light_pick == 0 ? "dark" : (light_pick == 1 ? "normal" : "bright");
        const double heights[3] = {0.5, 1.0, 1.5};
        seq.meta.height_m = heights[seq_rng.below(3)];
        seq.meta.scenario = "indoor";
        seq.meta.path_type = world.waypoints.size() > 6 ? "turns" : "straight";
        seq.meta.obstacle_types = world.obstacles.empty() ? "none" : "boxes";
        seq.meta.location = "sim-world-" + std::to_string(ws);

        const fs::path seq_dir = fs::path(out_dir) / seq.dir;
        fs::create_directories(seq_dir / "frames", ec);
        if (!fs::is_directory(seq_dir / "frames"))
            throw DataError("unwritable output directory: " + (seq_dir / "frames").string());

        sim::EpisodeConfig ep;
        ep.control.v_target = cfg.v_target;
        ep.control.cnn_rate_hz = 100.0; // oracle queried every tick
        ep.control.timeout_s = 180.0;
        ep.camera.brightness_offset = light_pick == 0 ? -50 : (light_pick == 1 ? 0 : 50);
        ep.render_for_observer = true;

        int tick = 0;
        std::ofstream labels((seq_dir / "labels.csv").string(), std::ios::binary);
        labels << "frame,timestamp,yaw_rate,collision\n";
        sim::OraclePolicy pilot(world);
        Rng jitter_rng(ws ^ 0x71e6ULL);
        auto emit = [&](const Image& img, double t, double yaw, int coll) {
            FrameRecord fr;
            fr.index = static_cast<int>(seq.frames.size());
            fr.timestamp = t;
            fr.yaw_rate = static_cast<float>(std::clamp(yaw, -1.0, 1.0));
            fr.collision = coll;
            char name[32];
            std::snprintf(name, sizeof(name), "frames/%06d.pgm", fr.index);
            fr.rel_path = name;
            save_pgm(img, (seq_dir / fr.rel_path).string());
            char row[96];
            std::snprintf(row, sizeof(row), "%d,%.4f,%.6f,%d\n", fr.index, fr.timestamp,
                          fr.yaw_rate, fr.collision);
            labels << row;
            seq.frames.push_back(fr);
        };
        ep.observer = [&](const sim::DroneState& st, const Image* frame, double yaw_cmd, double) {
            if (frame && tick % cfg.capture_every_n_ticks == 0 &&
                static_cast<int>(seq.frames.size()) < cfg.frames_per_run) {
                emit(*frame, st.time, yaw_cmd,
                     sim::collision_label(world, {st.x, st.y, st.theta}, false) ? 1 : 0);
                // off-heading views from the same position: the command and
                // the ranging label are recomputed for each perturbed pose
                for (int j = 0; j < cfg.heading_jitter_frames; ++j) {
                    if (!jitter_rng.chance(cfg.heading_jitter_prob) ||
                        static_cast<int>(seq.frames.size()) >= cfg.frames_per_run)
                        continue;
                    const double jt =
                        st.theta + jitter_rng.uniform(-cfg.heading_jitter_rad, cfg.heading_jitter_rad);
                    sim::Pose jp{st.x, st.y, jt};
                    Image jimg = sim::render_camera(world, jp, false, ep.camera);
                    emit(jimg, st.time, pilot.command_at(world, st.x, st.y, jt),
                         sim::collision_label(world, jp, false) ? 1 : 0);
                }
            }
            ++tick;
        };
        sim::run_episode(world, pilot, ep, ws ^ 0x5eedULL);

        std::ofstream meta((seq_dir / "meta.txt").string(), std::ios::binary);
        meta << "sequence_id=" << seq.id << "\n"
             << "scenario=" << seq.meta.scenario << "\n"
             << "path_type=" << seq.meta.path_type << "\n"
             << "obstacle_types=" << seq.meta.obstacle_types << "\n"
             << "height_m=" << seq.meta.height_m << "\n"
             << "light=" << seq.meta.light << "\n"
             << "location=" << seq.meta.location << "\n";

        if (!seq.frames.empty()) m.sequences.push_back(std::move(seq));
    }
    return m;
}

// ---- split / augment / balance ------------------------------------------------

DatasetManifest split_dataset(const DatasetManifest& m, double train_frac, double val_frac,
                              double test_frac, uint64_t seed) {
    if (std::fabs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw DataError("split fractions must sum to 1");
    const size_t n = m.sequences.size();
    if (n < 3) throw DataError("fewer sequences than splits");

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    size_t n_train = static_cast<size_t>(std::round(train_frac * n));
    size_t n_val = static_cast<size_t>(std::round(val_frac * n));
    n_train = std::max<size_t>(1, std::min(n_train, n - 2));
    n_val = std::max<size_t>(1, std::min(n_val, n - n_train - 1));

    DatasetManifest out = m;
    for (size_t i = 0; i < n; ++i) {
        Split s = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
        out.sequences[order[i]].split = s;
    }
    return out;
}

namespace {

Image flip_horizontal(const Image& img) {
    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) out.at(y, x) = img.at(y, img.w - 1 - x);
    return out;
}

Image box_blur(const Image& img, int k) {
    if (k <= 1) return img;
    Image out(img.h, img.w);
    const int r = k / 2;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            int sum = 0, cnt = 0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
                    sum += img.at(yy, xx);
                    ++cnt;
                }
            out.at(y, x) = static_cast<uint8_t>(sum / cnt);
        }
    return out;
}

} // namespace

Sample augment_sample(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
    Sample out = s;
    if (rng.chance(cfg.flip_prob)) {
        out.image = flip_horizontal(out.image);
        out.yaw_rate = -out.yaw_rate; // mirror symmetry of the steering label
    }
    const int delta = rng.range(-cfg.brightness_delta, cfg.brightness_delta);
    const double vig = rng.uniform(0.0, cfg.vignette_strength);
    const double cy = (out.image.h - 1) / 2.0, cx = (out.image.w - 1) / 2.0;
    const double rmax2 = cy * cy + cx * cx;
    for (int y = 0; y < out.image.h; ++y)
        for (int x = 0; x < out.image.w; ++x) {
            double v = out.image.at(y, x) + delta;
            const double r2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / rmax2;
            v *= 1.0 - vig * r2;
            out.image.at(y, x) = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    int k = 1;
    if (cfg.blur_kernel_max >= 3 && rng.chance(0.5)) k = 2 * rng.range(1, cfg.blur_kernel_max / 2) + 1;
    out.image = box_blur(out.image, k);
    return out;
}

DatasetManifest balance_split(const DatasetManifest& m, Split split, double zero_yaw_cap,
                              double tol, uint64_t seed) {
    if (zero_yaw_cap <= 0.0 || zero_yaw_cap > 1.0) throw DataError("cap must be in (0,1]");
    size_t zero = 0, total = 0;
    for (const auto& seq : m.sequences) {
        if (split != Split::none && seq.split != split) continue;
        for (const auto& f : seq.frames) {
            ++total;
            if (std::fabs(f.yaw_rate) <= tol) ++zero;
        }
    }
    if (total == 0 || static_cast<double>(zero) / total <= zero_yaw_cap) return m;

    // drop enough zero-yaw frames so that zero' / (total - dropped) <= cap
    const size_t keep_zero_max =
        static_cast<size_t>(std::floor(zero_yaw_cap * (total - zero) / (1.0 - zero_yaw_cap)));
    const size_t to_drop = zero - std::min(zero, keep_zero_max);

    std::vector<std::pair<size_t, size_t>> zero_locs; // (sequence idx, frame idx)
    for (size_t si = 0; si < m.sequences.size(); ++si) {
        const auto& seq = m.sequences[si];
        if (split != Split::none && seq.split != split) continue;
        for (size_t fi = 0; fi < seq.frames.size(); ++fi)
            if (std::fabs(seq.frames[fi].yaw_rate) <= tol) zero_locs.push_back({si, fi});
    }
    Rng rng(seed);
    rng.shuffle(zero_locs);
    zero_locs.resize(to_drop);
    std::vector<std::vector<bool>> drop(m.sequences.size());
    for (size_t si = 0; si < m.sequences.size(); ++si)
        drop[si].assign(m.sequences[si].frames.size(), false);
    for (auto [si, fi] : zero_locs) drop[si][fi] = true;

    DatasetManifest out;
    out.root = m.root;
    for (size_t si = 0; si < m.sequences.size(); ++si) {
        Sequence seq = m.sequences[si];
        std::vector<FrameRecord> kept;
        for (size_t fi = 0; fi < seq.frames.size(); ++fi)
            if (!drop[si][fi]) kept.push_back(seq.frames[fi]);
        seq.frames = std::move(kept);
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

double zero_yaw_fraction(const DatasetManifest& m, double tol) {
    size_t zero = 0, total = 0;
    for (const auto& seq : m.sequences)
        for (const auto& f : seq.frames) {
            ++total;
            if (std::fabs(f.yaw_rate) <= tol) ++zero;
        }
    return total == 0 ? 0.0 : static_cast<double>(zero) / total;
}

std::vector<int> yaw_histogram(const DatasetManifest& m, int bins) {
    std::vector<int> h(bins, 0);
    for (const auto& seq : m.sequences)
        for (const auto& f : seq.frames) {
            int b = static_cast<int>((f.yaw_rate + 1.0) / 2.0 * bins);
            h[std::clamp(b, 0, bins - 1)]++;
        }
    return h;
}

// ---- manifest io ---------------------------------------------------------------

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << "dronet-manifest v1\n";
    char buf[256];
    for (const auto& seq : m.sequences) {
        std::snprintf(buf, sizeof(buf), "seq %s %s %s %zu\n", seq.id.c_str(),
                      to_string(seq.split), seq.dir.c_str(), seq.frames.size());
        f << buf;
        for (const auto& fr : seq.frames) {
            std::snprintf(buf, sizeof(buf), "frame %d %.4f %.6f %d %s\n", fr.index, fr.timestamp,
                          fr.yaw_rate, fr.collision, fr.rel_path.c_str());
            f << buf;
        }
    }
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    std::string line;
    if (!std::getline(f, line) || line != "dronet-manifest v1")
        throw DataError("bad manifest header: " + path);

    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    if (m.root.empty()) m.root = ".";
    size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "seq") {
            Sequence seq;
            std::string split;
            size_t n;
            ls >> seq.id >> split >> seq.dir >> n;
            if (ls.fail()) throw DataError("malformed seq line " + std::to_string(lineno));
            seq.split = split_from_string(split);
            // sequence meta is optional; read it when present
            const fs::path meta_path = fs::path(m.root) / seq.dir / "meta.txt";
            if (fs::exists(meta_path)) {
                std::ifstream mf(meta_path.string());
                std::string ml;
                while (std::getline(mf, ml)) {
                    auto eq = ml.find('=');
                    if (eq == std::string::npos) continue;
                    const std::string k = ml.substr(0, eq), v = ml.substr(eq + 1);
                    if (k == "scenario") seq.meta.scenario = v;
                    else if (k == "path_type") seq.meta.path_type = v;
                    else if (k == "obstacle_types") seq.meta.obstacle_types = v;
                    else if (k == "height_m") seq.meta.height_m = std::stod(v);
                    else if (k == "light") seq.meta.light = v;
                    else if (k == "location") seq.meta.location = v;
                }
            }
            m.sequences.push_back(std::move(seq));
        } else if (kind == "frame") {
            if (m.sequences.empty()) throw DataError("frame before seq at line " + std::to_string(lineno));
            FrameRecord fr;
            ls >> fr.index >> fr.timestamp >> fr.yaw_rate >> fr.collision >> fr.rel_path;
            if (ls.fail()) throw DataError("malformed frame line " + std::to_string(lineno));
            if (fr.yaw_rate < -1.0f || fr.yaw_rate > 1.0f)
                throw DataError("yaw_rate out of [-1,1] at line " + std::to_string(lineno));
            if (fr.collision != 0 && fr.collision != 1)
                throw DataError("collision label not binary at line " + std::to_string(lineno));
            m.sequences.back().frames.push_back(std::move(fr));
        } else {
            throw DataError("unknown record '" + kind + "' at line " + std::to_string(lineno));
        }
    }
    // referenced image files must exist
    for (const auto& seq : m.sequences)
        for (const auto& fr : seq.frames)
            if (!fs::exists(m.frame_path(seq, fr)))
                throw DataError("missing image file: " + m.frame_path(seq, fr));
    return m;
}

Image load_frame(const DatasetManifest& m, const Sequence& s, const FrameRecord& f) {
    return load_pgm(m.frame_path(s, f));
}

} // namespace dronet::data
