#pragma once
#include <map>
#include <string>

#include "dronet/deploy.hpp"
#include "dronet/sim.hpp"
#include "dronet/train.hpp"

namespace dronet::pipeline {

struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Single plain-text key=value configuration driving the whole chain. All
// randomness descends from `seed`. DRONET_ARTIFACT_ROOT overrides
// artifact_root when set.
struct PipelineConfig {
    uint64_t seed = 1;
    std::string artifact_root = "artifacts";

    model::ArchConfig arch; // block/bypass/gamma

    int data_worlds = 18;
    int data_frames_per_run = 450;
    int data_capture_every = 5;

    train::LossConfig loss;
    train::OptimConfig optim;

    double balance_cap = 0.3;
    double balance_tol = 1e-3;

    std::vector<double> sim_speeds = {0.5, 1.0, 1.5};
    int sim_episodes = 5;
    sim::ControlConfig control; // v_target filled per run

    std::string resolved_root() const;
};

void save_config(const PipelineConfig& c, const std::string& path);
PipelineConfig load_config(const std::string& path);
// canonical serialization used by the round-trip invariant
std::string config_text(const PipelineConfig& c);

// float32 checkpoint policy
struct FloatCnnPolicy : sim::Policy {
    FloatCnnPolicy(const model::ModelGraph& g, nn::Params params)
        : graph(g), params(std::move(params)) {}
    std::pair<double, double> predict(const sim::World&, const sim::DroneState&,
                                      const Image& frame) override;
    model::ModelGraph graph;
    nn::Params params;
};

// int8 pipeline policy
struct QuantCnnPolicy : sim::Policy {
    explicit QuantCnnPolicy(quant::QuantizedGraph qg) : qg(std::move(qg)) {}
    std::pair<double, double> predict(const sim::World&, const sim::DroneState&,
                                      const Image& frame) override;
    quant::QuantizedGraph qg;
};

// gen-data -> train -> eval -> quantize -> plan -> simulate -> report, all
// under one seed-stamped directory; returns that directory
std::string run_pipeline(const PipelineConfig& cfg);

} // namespace dronet::pipeline
