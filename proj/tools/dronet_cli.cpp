// Command-line entry point chaining the full stack: dataset generation,
// training, evaluation, quantization, deployment planning and closed-loop
// simulation. Exit codes: 0 success, 1 stage failure, 2 usage error.
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "dronet/pipeline.hpp"

using namespace dronet;
namespace fs = std::filesystem;

namespace {

model::ArchConfig arch_from(const std::string& block, bool bypass, int gamma) {
    model::ArchConfig cfg;
    cfg.block_kind = model::block_kind_from_string(block);
    cfg.use_bypass = bypass;
    cfg.gamma = gamma;
    return cfg;
}

data::DatasetManifest load_split(const std::string& manifest, const std::string& split) {
    auto m = data::load_manifest(manifest);
    return m.filter(data::split_from_string(split));
}

int cmd_gen_data(const std::string& out, int worlds, int frames, int every, uint64_t seed) {
    data::GenerateConfig cfg;
    for (int i = 0; i < worlds; ++i) cfg.world_seeds.push_back(seed * 1000 + i);
    cfg.frames_per_run = frames;
    cfg.capture_every_n_ticks = every;
    cfg.seed = seed;
    auto m = data::generate_synthetic_dataset(cfg, out);
    m = data::split_dataset(m, 0.7, 0.1, 0.2, seed ^ 0x5b11ULL);
    m = data::balance_split(m, data::Split::test, 0.3, 1e-3, seed ^ 0xba1aULL);
    data::save_manifest(m, (fs::path(out) / "manifest.txt").string());
    std::printf("wrote %zu sequences, %zu frames, manifest at %s\n", m.sequences.size(),
                m.frame_count(), (fs::path(out) / "manifest.txt").string().c_str());
    return 0;
}

int cmd_train(const std::string& manifest, const std::string& block, bool bypass, int gamma,
              int epochs, double lr, int batch, uint64_t seed, const std::string& out) {
    auto g = model::build_model(arch_from(block, bypass, gamma));
    train::LossConfig lc;
    lc.total_epochs = epochs;
    lc.beta_start_epoch = std::min(10, std::max(1, epochs / 3));
    train::OptimConfig oc;
    oc.lr = lr;
    oc.batch = batch;
    auto r = train::train(g, load_split(manifest, "train"), load_split(manifest, "val"), lc, oc,
                          seed, out);
    std::printf("best epoch %d, val_rmse %.4f, val_acc %.4f; checkpoint in %s\n", r.best_epoch,
                r.log[r.best_epoch].val_rmse, r.log[r.best_epoch].val_acc, out.c_str());
    return 0;
}

int cmd_eval(const std::string& manifest, const std::string& split, const std::string& block,
             bool bypass, int gamma, const std::string& ckpt) {
    auto g = model::build_model(arch_from(block, bypass, gamma));
    auto params = nn::load_checkpoint(ckpt);
    auto m = load_split(manifest, split);
    auto metrics = train::evaluate_metrics(g, params, m);
    auto base = train::trivial_baselines(m);
    std::printf("rmse %.4f  accuracy %.4f\n", metrics.rmse, metrics.accuracy);
    std::printf("trivial: rmse_zero_yaw %.4f  acc_always %.4f  acc_never %.4f\n",
                base.rmse_always_zero_yaw, base.acc_always_collision, base.acc_never_collision);
    return 0;
}

int cmd_quantize(const std::string& manifest, const std::string& block, bool bypass, int gamma,
                 const std::string& ckpt, const std::string& out, int calib_n) {
    auto g = model::build_model(arch_from(block, bypass, gamma));
    auto params = nn::load_checkpoint(ckpt);
    auto ranges = quant::calibrate_activations(g, params, load_split(manifest, "train"), calib_n);
    auto qg = quant::quantize_model(g, params, ranges);
    quant::save_quantized(qg, out);
    auto rep = quant::compare_fp32_int8(g, params, qg, load_split(manifest, "test"));
    std::printf("int8 model: %zu weight bytes + %zu metadata bytes -> %s\n",
                qg.weight_payload_bytes(), qg.metadata_bytes(), out.c_str());
    std::printf("float rmse %.4f acc %.4f | int8 rmse %.4f acc %.4f\n", rep.float_rmse,
                rep.float_acc, rep.int8_rmse, rep.int8_acc);
    return 0;
}

int cmd_plan(const std::string& qmodel, const std::string& cycle_cfg) {
    auto qg = quant::load_quantized(qmodel);
    deploy::HardwareModel hw;
    deploy::CycleModel cm =
        cycle_cfg.empty() ? deploy::default_cycle_model() : deploy::load_cycle_model(cycle_cfg);
    auto report = deploy::generate_report(qg, hw, cm);
    std::fputs(deploy::report_table(report).c_str(), stdout);
    return 0;
}

int cmd_simulate(const std::string& policy_name, const std::string& qmodel,
                 const std::string& ckpt, const std::string& block, bool bypass, int gamma,
                 double speed, int episodes, uint64_t seed, bool dynamic, double rate,
                 const std::string& out_dir) {
    sim::UPathConfig ucfg;
    ucfg.dynamic_obstacle = dynamic;
    sim::World world = sim::build_upath_world(ucfg);

    std::unique_ptr<sim::Policy> policy;
    if (policy_name == "oracle") {
        policy = std::make_unique<sim::OraclePolicy>(world);
    } else if (policy_name == "cnn") {
        if (!qmodel.empty()) {
            policy = std::make_unique<pipeline::QuantCnnPolicy>(quant::load_quantized(qmodel));
        } else if (!ckpt.empty()) {
            auto g = model::build_model(arch_from(block, bypass, gamma));
            policy = std::make_unique<pipeline::FloatCnnPolicy>(g, nn::load_checkpoint(ckpt));
        } else {
            std::fprintf(stderr, "cnn policy needs --qmodel or --ckpt\n");
            return 2;
        }
    } else {
        std::fprintf(stderr, "unknown policy: %s\n", policy_name.c_str());
        return 2;
    }

    if (!out_dir.empty()) fs::create_directories(out_dir);
    int successes = 0;
    for (int ep = 0; ep < episodes; ++ep) {
        sim::EpisodeConfig ec;
        ec.control.v_target = speed;
        ec.control.cnn_rate_hz = rate;
        auto log = sim::run_episode(world, *policy, ec, seed + ep);
        successes += log.outcome == sim::Outcome::success;
        std::printf("episode %d: %s  s1=%s s2=%s s3=%s  v_avg=", ep, sim::to_string(log.outcome),
                    sim::to_string(log.segments[0]), sim::to_string(log.segments[1]),
                    sim::to_string(log.segments[2]));
        if (log.has_v_avg())
            std::printf("%.3f\n", log.v_avg);
        else
            std::printf("N/A\n");
        if (!out_dir.empty()) {
            char name[64];
            std::snprintf(name, sizeof(name), "episode_%d", ep);
            sim::save_episode_log(log, (fs::path(out_dir) / (std::string(name) + ".txt")).string());
            sim::plot_episode(log, world, (fs::path(out_dir) / (std::string(name) + ".ppm")).string());
        }
    }
    std::printf("success %d/%d at v_target %.2f m/s\n", successes, episodes, speed);
    return 0;
}

int cmd_sweep_gamma(const std::string& cycle_cfg) {
    deploy::HardwareModel hw;
    deploy::CycleModel cm =
        cycle_cfg.empty() ? deploy::default_cycle_model() : deploy::load_cycle_model(cycle_cfg);
    std::printf("%-6s %10s %10s %12s %10s %8s %8s %8s\n", "gamma", "params", "macs", "cycles",
                "mac/cyc", "fps", "E_mpmJ", "E_eemJ");
    for (int gamma : {1, 2, 4, 8}) {
        model::ArchConfig cfg;
        cfg.block_kind = model::BlockKind::DP;
        cfg.gamma = gamma;
        auto g = model::build_model(cfg);
        auto qg = quant::synthesize_for_shapes(g);
        auto rep = deploy::generate_report(qg, hw, cm);
        std::printf("/%-5d %10lld %10lld %12.0f %10.2f %8.1f %8.2f %8.2f\n", gamma,
                    static_cast<long long>(model::count_params(g)),
                    static_cast<long long>(model::count_macs(g)), rep.total_cycles,
                    rep.mac_per_cycle, rep.fps_mp, rep.energy_mp_mj, rep.energy_ee_mj);
    }
    std::printf("\nblock/bypass grid (params, macs):\n");
    for (auto kind : {model::BlockKind::RB, model::BlockKind::DP, model::BlockKind::IRLB}) {
        for (bool bypass : {true, false}) {
            model::ArchConfig cfg;
            cfg.block_kind = kind;
            cfg.use_bypass = bypass;
            auto g = model::build_model(cfg);
            std::printf("%-5s bypass=%d  params %7lld  macs %9lld\n", model::to_string(kind),
                        bypass ? 1 : 0, static_cast<long long>(model::count_params(g)),
                        static_cast<long long>(model::count_macs(g)));
        }
    }
    return 0;
}

int cmd_baselines(const std::string& manifest, const std::string& split) {
    auto m = load_split(manifest, split);
    auto b = train::trivial_baselines(m);
    std::printf("frames %zu\n", m.frame_count());
    std::printf("rmse_always_zero_yaw %.4f\n", b.rmse_always_zero_yaw);
    std::printf("acc_always_collision %.4f\n", b.acc_always_collision);
    std::printf("acc_never_collision %.4f\n", b.acc_never_collision);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pulp-dronet style tinyML navigation stack"};
    app.require_subcommand(1);

    std::string manifest, out, ckpt = "", qmodel = "", split = "test", block = "DP";
    std::string cycle_cfg = "", config_path = "", policy = "oracle", out_dir = "";
    bool bypass = false, dynamic = false;
    int gamma = 8, worlds = 18, frames = 450, every = 5, epochs = 30, batch = 64, calib = 256;
    int episodes = 5;
    double lr = 1e-3, speed = 0.5, rate = 100.0;
    uint64_t seed = 1;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--out", out)->required();
    gen->add_option("--worlds", worlds);
    gen->add_option("--frames-per-run", frames);
    gen->add_option("--capture-every", every);
    gen->add_option("--seed", seed);

    auto* tr = app.add_subcommand("train", "train a model on a dataset manifest");
    tr->add_option("--manifest", manifest)->required();
    tr->add_option("--out", out)->required();
    tr->add_option("--block", block);
    tr->add_flag("--bypass", bypass);
    tr->add_option("--gamma", gamma);
    tr->add_option("--epochs", epochs);
    tr->add_option("--lr", lr);
    tr->add_option("--batch", batch);
    tr->add_option("--seed", seed);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--manifest", manifest)->required();
    ev->add_option("--ckpt", ckpt)->required();
    ev->add_option("--split", split);
    ev->add_option("--block", block);
    ev->add_flag("--bypass", bypass);
    ev->add_option("--gamma", gamma);

    auto* qz = app.add_subcommand("quantize", "post-training int8 quantization");
    qz->add_option("--manifest", manifest)->required();
    qz->add_option("--ckpt", ckpt)->required();
    qz->add_option("--out", out)->required();
    qz->add_option("--block", block);
    qz->add_flag("--bypass", bypass);
    qz->add_option("--gamma", gamma);
    qz->add_option("--calib", calib);

    auto* pl = app.add_subcommand("plan", "tiling plan and cycle/energy estimates");
    pl->add_option("--qmodel", qmodel)->required();
    pl->add_option("--cycle-model", cycle_cfg);

    auto* si = app.add_subcommand("simulate", "closed-loop episodes on the u-path");
    si->add_option("--policy", policy)->check(CLI::IsMember({"oracle", "cnn"}));
    si->add_option("--qmodel", qmodel);
    si->add_option("--ckpt", ckpt);
    si->add_option("--block", block);
    si->add_flag("--bypass", bypass);
    si->add_option("--gamma", gamma);
    si->add_option("--speed", speed);
    si->add_option("--episodes", episodes);
    si->add_option("--seed", seed);
    si->add_flag("--dynamic", dynamic);
    si->add_option("--rate", rate, "CNN inference rate, Hz");
    si->add_option("--out", out_dir);

    auto* sw = app.add_subcommand("sweep-gamma", "params/macs/fps/energy across the family");
    sw->add_option("--cycle-model", cycle_cfg);

    auto* bl = app.add_subcommand("baselines", "trivial predictor metrics for a split");
    bl->add_option("--manifest", manifest)->required();
    bl->add_option("--split", split);

    auto* pp = app.add_subcommand("pipeline", "run the full chain from a config file");
    pp->add_option("--config", config_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // --help and friends exit 0; genuine usage errors exit 2
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(out, worlds, frames, every, seed);
        if (tr->parsed()) return cmd_train(manifest, block, bypass, gamma, epochs, lr, batch, seed, out);
        if (ev->parsed()) return cmd_eval(manifest, split, block, bypass, gamma, ckpt);
        if (qz->parsed()) return cmd_quantize(manifest, block, bypass, gamma, ckpt, out, calib);
        if (pl->parsed()) return cmd_plan(qmodel, cycle_cfg);
        if (si->parsed())
            return cmd_simulate(policy, qmodel, ckpt, block, bypass, gamma, speed, episodes, seed,
                                dynamic, rate, out_dir);
        if (sw->parsed()) return cmd_sweep_gamma(cycle_cfg);
        if (bl->parsed()) return cmd_baselines(manifest, split);
        if (pp->parsed()) {
            auto cfg = pipeline::load_config(config_path);
            std::printf("artifacts: %s\n", pipeline::run_pipeline(cfg).c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
