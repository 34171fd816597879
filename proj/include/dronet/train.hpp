#pragma once
#include <string>
#include <vector>

#include "dronet/data.hpp"
#include "dronet/nn.hpp"

namespace dronet::train {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LossConfig {
    double beta_max = 1.0;
    int beta_start_epoch = 10;
    int total_epochs = 30;
    double hardmining_start_fraction = 1.0;
    double hardmining_end_fraction = 0.25;

    void validate() const;
};

struct OptimConfig {
    double lr = 1e-3;
    int batch = 64;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    bool augment = true;
};

struct Metrics {
    double rmse = 0.0;     // yaw regression
    double accuracy = 0.0; // collision classification, in [0,1]
};

struct TrivialBaselines {
    double rmse_always_zero_yaw = 0.0;
    double acc_always_collision = 0.0;
    double acc_never_collision = 0.0;
};

struct EpochLog {
    int epoch = 0;
    double loss = 0.0; // mean training loss under the epoch's beta and mining
    double val_rmse = 0.0;
    double val_acc = 0.0;
    double beta = 0.0;
    double k_fraction = 0.0;
};

// 0 before beta_start_epoch, then logarithmic rise to beta_max at the final
// epoch
double beta_schedule(int epoch, const LossConfig& cfg);

struct LossResult {
    double total = 0.0;               // mean over the batch
    std::vector<double> per_sample;   // mse_i + beta * bce_i
};

// Loss = MSE(yaw) + beta * BCE(collision); p clamped to [1e-7, 1-1e-7]
LossResult compute_loss(const std::vector<float>& yaw_pred, const std::vector<float>& yaw_true,
                        const std::vector<float>& p_pred, const std::vector<int>& coll_true,
                        double beta);

// keeps the k highest-loss samples, k = round(batch * f(epoch)) with f
// interpolating linearly from the start to the end fraction; ties keep the
// lower index
std::vector<int> hard_mining_select(const std::vector<double>& per_sample_losses, int epoch,
                                    const LossConfig& cfg);

struct TrainResult {
    nn::Params best_params;       // lowest validation rmse + (1 - acc)
    std::vector<EpochLog> log;
    int best_epoch = -1;
};

// deterministic under seed; saves best checkpoint + metrics log when
// out_dir is nonempty
TrainResult train(const model::ModelGraph& g, const data::DatasetManifest& train_split,
                  const data::DatasetManifest& val_split, const LossConfig& loss_cfg,
                  const OptimConfig& opt, uint64_t seed, const std::string& out_dir = "");

Metrics evaluate_metrics(const model::ModelGraph& g, nn::Params& params,
                         const data::DatasetManifest& manifest, double threshold = 0.5);

TrivialBaselines trivial_baselines(const data::DatasetManifest& manifest);

void save_metrics_log(const std::vector<EpochLog>& log, const std::string& path);

// float [0,1] batch tensor from dataset frames
nn::Tensor frames_to_tensor(const std::vector<data::Sample>& samples);

} // namespace dronet::train
