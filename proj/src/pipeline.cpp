#include "dronet/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace dronet::pipeline {

std::string PipelineConfig::resolved_root() const {
    const char* env = std::getenv("DRONET_ARTIFACT_ROOT");
    return env && *env ? std::string(env) : artifact_root;
}

std::string config_text(const PipelineConfig& c) {
    std::ostringstream os;
    char buf[128];
    auto put = [&](const char* k, const std::string& v) { os << k << "=" << v << "\n"; };
    auto putd = [&](const char* k, double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        put(k, buf);
    };
    auto puti = [&](const char* k, long long v) { put(k, std::to_string(v)); };

    puti("seed", static_cast<long long>(c.seed));
    put("artifact_root", c.artifact_root);
    put("arch.block", model::to_string(c.arch.block_kind));
    puti("arch.bypass", c.arch.use_bypass ? 1 : 0);
    puti("arch.gamma", c.arch.gamma);
    puti("arch.expansion", c.arch.expansion);
    puti("data.worlds", c.data_worlds);
    puti("data.frames_per_run", c.data_frames_per_run);
    puti("data.capture_every", c.data_capture_every);
    puti("train.epochs", c.loss.total_epochs);
    puti("train.beta_start", c.loss.beta_start_epoch);
    putd("train.beta_max", c.loss.beta_max);
    putd("train.hm_start", c.loss.hardmining_start_fraction);
    putd("train.hm_end", c.loss.hardmining_end_fraction);
    putd("train.lr", c.optim.lr);
    puti("train.batch", c.optim.batch);
    puti("train.augment", c.optim.augment ? 1 : 0);
    putd("balance.cap", c.balance_cap);
    putd("balance.tol", c.balance_tol);
    {
        std::string s;
        for (size_t i = 0; i < c.sim_speeds.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", c.sim_speeds[i]);
            s += (i ? "," : "") + std::string(buf);
        }
        put("sim.speeds", s);
    }
    puti("sim.episodes", c.sim_episodes);
    putd("sim.alpha", c.control.alpha1);
    putd("sim.omega_max", c.control.omega_max);
    putd("sim.brake", c.control.brake_threshold);
    putd("sim.timeout", c.control.timeout_s);
    return os.str();
}

void save_config(const PipelineConfig& c, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw PipelineError("cannot write " + path);
    f << config_text(c);
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw PipelineError("cannot read " + path);
    PipelineConfig c;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw PipelineError("bad config line: " + line);
        const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
        if (k == "seed") c.seed = std::stoull(v);
        else if (k == "artifact_root") c.artifact_root = v;
        else if (k == "arch.block") c.arch.block_kind = model::block_kind_from_string(v);
        else if (k == "arch.bypass") c.arch.use_bypass = v == "1";
        else if (k == "arch.gamma") c.arch.gamma = std::stoi(v);
        else if (k == "arch.expansion") c.arch.expansion = std::stoi(v);
        else if (k == "data.worlds") c.data_worlds = std::stoi(v);
        else if (k == "data.frames_per_run") c.data_frames_per_run = std::stoi(v);
        else if (k == "data.capture_every") c.data_capture_every = std::stoi(v);
        else if (k == "train.epochs") c.loss.total_epochs = std::stoi(v);
        else if (k == "train.beta_start") c.loss.beta_start_epoch = std::stoi(v);
        else if (k == "train.beta_max") c.loss.beta_max = std::stod(v);
        else if (k == "train.hm_start") c.loss.hardmining_start_fraction = std::stod(v);
        else if (k == "train.hm_end") c.loss.hardmining_end_fraction = std::stod(v);
        else if (k == "train.lr") c.optim.lr = std::stod(v);
        else if (k == "train.batch") c.optim.batch = std::stoi(v);
        else if (k == "train.augment") c.optim.augment = v == "1";
        else if (k == "balance.cap") c.balance_cap = std::stod(v);
        else if (k == "balance.tol") c.balance_tol = std::stod(v);
        else if (k == "sim.speeds") {
            c.sim_speeds.clear();
            std::istringstream ss(v);
            std::string tok;
            while (std::getline(ss, tok, ',')) c.sim_speeds.push_back(std::stod(tok));
        } else if (k == "sim.episodes") c.sim_episodes = std::stoi(v);
        else if (k == "sim.alpha") c.control.alpha1 = c.control.alpha2 = std::stod(v);
        else if (k == "sim.omega_max") c.control.omega_max = std::stod(v);
        else if (k == "sim.brake") c.control.brake_threshold = std::stod(v);
        else if (k == "sim.timeout") c.control.timeout_s = std::stod(v);
        else throw PipelineError("unknown config key: " + k);
    }
    return c;
}

std::pair<double, double> FloatCnnPolicy::predict(const sim::World&, const sim::DroneState&,
                                                  const Image& frame) {
    data::Sample s;
    s.image = frame;
    nn::Tensor x = train::frames_to_tensor({s});
    auto r = nn::model_forward(graph, params, x, nn::Mode::infer);
    return {r.yaw[0], r.p_coll[0]};
}

std::pair<double, double> QuantCnnPolicy::predict(const sim::World&, const sim::DroneState&,
                                                  const Image& frame) {
    auto r = quant::quantized_forward(qg, frame);
    return {r.yaw, r.p_coll};
}

namespace {

struct StageGuard {
    const char* stage;
    explicit StageGuard(const char* s) : stage(s) {}
};

[[noreturn]] void fail_stage(const char* stage, const std::exception& e) {
    throw PipelineError(std::string("stage '") + stage + "' failed: " + e.what());
}

} // namespace

std::string run_pipeline(const PipelineConfig& cfg) {
    const fs::path run_dir =
        fs::path(cfg.resolved_root()) / ("run-seed" + std::to_string(cfg.seed));
    fs::create_directories(run_dir);
    save_config(cfg, (run_dir / "config.txt").string());

    model::ModelGraph graph = model::build_model(cfg.arch);
    model::save_graph(graph, (run_dir / "graph.txt").string());

    // gen-data
    data::DatasetManifest manifest;
    try {
        data::GenerateConfig gen;
        for (int i = 0; i < cfg.data_worlds; ++i)
            gen.world_seeds.push_back(cfg.seed * 1000 + static_cast<uint64_t>(i));
        gen.frames_per_run = cfg.data_frames_per_run;
        gen.capture_every_n_ticks = cfg.data_capture_every;
        gen.seed = cfg.seed ^ 0xda7aULL;
        manifest = data::generate_synthetic_dataset(gen, (run_dir / "dataset").string());
        manifest = data::split_dataset(manifest, 0.7, 0.1, 0.2, cfg.seed ^ 0x5b11ULL);
        manifest = data::balance_split(manifest, data::Split::test, cfg.balance_cap,
                                       cfg.balance_tol, cfg.seed ^ 0xba1aULL);
        data::save_manifest(manifest, (run_dir / "dataset" / "manifest.txt").string());
        // histogram artifact for the balanced test distribution
        std::ofstream h((run_dir / "dataset" / "yaw_histogram.txt").string());
        auto hist = data::yaw_histogram(manifest.filter(data::Split::test), 21);
        for (size_t i = 0; i < hist.size(); ++i)
            h << (-1.0 + 2.0 * (static_cast<double>(i) + 0.5) / hist.size()) << " " << hist[i]
              << "\n";
    } catch (const std::exception& e) {
        fail_stage("gen-data", e);
    }

    // train
    train::TrainResult tr;
    try {
        tr = train::train(graph, manifest.filter(data::Split::train),
                          manifest.filter(data::Split::val), cfg.loss, cfg.optim,
                          cfg.seed ^ 0x7ea1ULL, (run_dir / "train").string());
    } catch (const std::exception& e) {
        fail_stage("train", e);
    }

    // eval
    try {
        auto test = manifest.filter(data::Split::test);
        train::Metrics m = train::evaluate_metrics(graph, tr.best_params, test);
        train::TrivialBaselines b = train::trivial_baselines(test);
        std::ofstream f((run_dir / "eval.txt").string());
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "test_rmse=%.6f test_acc=%.6f baseline_rmse_zero_yaw=%.6f "
                      "baseline_acc_always=%.6f baseline_acc_never=%.6f best_epoch=%d\n",
                      m.rmse, m.accuracy, b.rmse_always_zero_yaw, b.acc_always_collision,
                      b.acc_never_collision, tr.best_epoch);
        f << buf;
    } catch (const std::exception& e) {
        fail_stage("eval", e);
    }

    // quantize
    quant::QuantizedGraph qg;
    try {
        auto ranges = quant::calibrate_activations(graph, tr.best_params,
                                                   manifest.filter(data::Split::train), 256);
        qg = quant::quantize_model(graph, tr.best_params, ranges);
        quant::save_quantized(qg, (run_dir / "model_int8.bin").string());
        auto rep = quant::compare_fp32_int8(graph, tr.best_params, qg,
                                            manifest.filter(data::Split::test));
        std::ofstream f((run_dir / "quantization.txt").string());
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "float_rmse=%.6f int8_rmse=%.6f float_acc=%.6f int8_acc=%.6f "
                      "mean_abs_dyaw=%.6f mean_abs_dp=%.6f payload_bytes=%zu metadata_bytes=%zu\n",
                      rep.float_rmse, rep.int8_rmse, rep.float_acc, rep.int8_acc,
                      rep.mean_abs_dyaw, rep.mean_abs_dp, qg.weight_payload_bytes(),
                      qg.metadata_bytes());
        f << buf;
    } catch (const std::exception& e) {
        fail_stage("quantize", e);
    }

    // plan
    deploy::DeployReport report;
    try {
        deploy::HardwareModel hw;
        deploy::CycleModel cm = deploy::default_cycle_model();
        report = deploy::generate_report(qg, hw, cm);
        std::ofstream f((run_dir / "deploy_report.txt").string());
        f << deploy::report_table(report);
        deploy::save_report_records(report, (run_dir / "deploy_records.txt").string());
    } catch (const std::exception& e) {
        fail_stage("plan", e);
    }

    // simulate: seeded episodes per target speed, quantized policy at the
    // modeled inference rate
    try {
        sim::World world = sim::build_upath_world({});
        QuantCnnPolicy policy(qg);
        std::ofstream f((run_dir / "episodes.txt").string());
        for (double speed : cfg.sim_speeds) {
            for (int ep = 0; ep < cfg.sim_episodes; ++ep) {
                sim::EpisodeConfig ec;
                ec.control = cfg.control;
                ec.control.v_target = speed;
                ec.control.cnn_rate_hz = report.fps_mp;
                sim::EpisodeLog log =
                    sim::run_episode(world, policy, ec, cfg.seed * 100 + ep);
                char name[64];
                std::snprintf(name, sizeof(name), "episode_v%.1f_%d", speed, ep);
                sim::save_episode_log(log, (run_dir / (std::string(name) + ".txt")).string());
                sim::plot_episode(log, world, (run_dir / (std::string(name) + ".ppm")).string());
                char buf[256];
                std::snprintf(buf, sizeof(buf), "v=%.1f ep=%d outcome=%s s1=%s s2=%s s3=%s v_avg=",
                              speed, ep, sim::to_string(log.outcome),
                              sim::to_string(log.segments[0]), sim::to_string(log.segments[1]),
                              sim::to_string(log.segments[2]));
                f << buf;
                if (log.has_v_avg()) {
                    std::snprintf(buf, sizeof(buf), "%.3f\n", log.v_avg);
                    f << buf;
                } else {
                    f << "N/A\n";
                }
            }
        }
    } catch (const std::exception& e) {
        fail_stage("simulate", e);
    }

    return run_dir.string();
}

} // namespace dronet::pipeline
