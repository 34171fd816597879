#include "dronet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace dronet::train {

void LossConfig::validate() const {
    if (hardmining_start_fraction <= 0.0 || hardmining_start_fraction > 1.0 ||
        hardmining_end_fraction <= 0.0 || hardmining_end_fraction > 1.0)
        throw TrainError("hard-mining fractions must be in (0,1]");
    if (beta_start_epoch >= total_epochs) throw TrainError("beta_start_epoch must precede the end");
    if (total_epochs <= 0) throw TrainError("total_epochs must be positive");
}

double beta_schedule(int epoch, const LossConfig& cfg) {
    if (epoch < cfg.beta_start_epoch) return 0.0;
    const double num = std::log(1.0 + (epoch - cfg.beta_start_epoch) + 1.0);
    const double den = std::log(1.0 + (cfg.total_epochs - cfg.beta_start_epoch));
    return cfg.beta_max * num / den;
}

LossResult compute_loss(const std::vector<float>& yaw_pred, const std::vector<float>& yaw_true,
                        const std::vector<float>& p_pred, const std::vector<int>& coll_true,
                        double beta) {
    const size_t n = yaw_pred.size();
    if (yaw_true.size() != n || p_pred.size() != n || coll_true.size() != n)
        throw TrainError("loss: batch size mismatch");
    LossResult r;
    r.per_sample.resize(n);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double dy = static_cast<double>(yaw_pred[i]) - yaw_true[i];
        const double mse = dy * dy;
        double p = std::clamp(static_cast<double>(p_pred[i]), 1e-7, 1.0 - 1e-7);
        const double bce = coll_true[i] ? -std::log(p) : -std::log(1.0 - p);
        r.per_sample[i] = mse + beta * bce;
        sum += r.per_sample[i];
    }
    r.total = n ? sum / static_cast<double>(n) : 0.0;
    return r;
}

std::vector<int> hard_mining_select(const std::vector<double>& per_sample_losses, int epoch,
                                    const LossConfig& cfg) {
    const int n = static_cast<int>(per_sample_losses.size());
    if (n == 0) throw TrainError("hard mining: empty batch");
    double f = cfg.hardmining_start_fraction;
    if (cfg.total_epochs > 1) {
        const double t = std::clamp(static_cast<double>(epoch) / (cfg.total_epochs - 1), 0.0, 1.0);
        f = cfg.hardmining_start_fraction +
            (cfg.hardmining_end_fraction - cfg.hardmining_start_fraction) * t;
    }
    int k = static_cast<int>(std::lround(f * n));
    k = std::clamp(k, 1, n);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return per_sample_losses[a] > per_sample_losses[b]; // stable: ties keep lower index
    });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// ---- metrics -------------------------------------------------------------

namespace {

struct FlatFrames {
    std::vector<const data::Sequence*> seq;
    std::vector<const data::FrameRecord*> frame;
    size_t size() const { return frame.size(); }
};

FlatFrames flatten(const data::DatasetManifest& m) {
    FlatFrames f;
    for (const auto& s : m.sequences)
        for (const auto& fr : s.frames) {
            f.seq.push_back(&s);
            f.frame.push_back(&fr);
        }
    return f;
}

} // namespace

nn::Tensor frames_to_tensor(const std::vector<data::Sample>& samples) {
    if (samples.empty()) throw TrainError("empty batch");
    const int h = samples[0].image.h, w = samples[0].image.w;
    nn::Tensor x(static_cast<int>(samples.size()), 1, h, w);
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& px = samples[i].image.px;
        float* dst = x.plane(static_cast<int>(i), 0);
        for (size_t j = 0; j < px.size(); ++j) dst[j] = px[j] * (1.0f / 255.0f);
    }
    return x;
}

Metrics evaluate_metrics(const model::ModelGraph& g, nn::Params& params,
                         const data::DatasetManifest& manifest, double threshold) {
    FlatFrames f = flatten(manifest);
    if (f.size() == 0) throw TrainError("evaluate_metrics: empty manifest");
    double se = 0.0;
    size_t correct = 0;
    const size_t batch = 32;
    for (size_t at = 0; at < f.size(); at += batch) {
        const size_t take = std::min(batch, f.size() - at);
        std::vector<data::Sample> samples(take);
        for (size_t i = 0; i < take; ++i)
            samples[i].image = data::load_frame(manifest, *f.seq[at + i], *f.frame[at + i]);
        nn::Tensor x = frames_to_tensor(samples);
        auto r = nn::model_forward(g, params, x, nn::Mode::infer);
        for (size_t i = 0; i < take; ++i) {
            const double dy = r.yaw[i] - f.frame[at + i]->yaw_rate;
            se += dy * dy;
            const int pred = r.p_coll[i] >= threshold ? 1 : 0;
            if (pred == f.frame[at + i]->collision) ++correct;
        }
    }
    Metrics m;
    m.rmse = std::sqrt(se / static_cast<double>(f.size()));
    m.accuracy = static_cast<double>(correct) / static_cast<double>(f.size());
    return m;
}

TrivialBaselines trivial_baselines(const data::DatasetManifest& manifest) {
    FlatFrames f = flatten(manifest);
    if (f.size() == 0) throw TrainError("trivial_baselines: empty manifest");
    double se = 0.0;
    size_t pos = 0;
    for (size_t i = 0; i < f.size(); ++i) {
        se += static_cast<double>(f.frame[i]->yaw_rate) * f.frame[i]->yaw_rate;
        pos += f.frame[i]->collision;
    }
    TrivialBaselines b;
    b.rmse_always_zero_yaw = std::sqrt(se / static_cast<double>(f.size()));
    b.acc_always_collision = static_cast<double>(pos) / static_cast<double>(f.size());
    b.acc_never_collision = 1.0 - b.acc_always_collision;
    return b;
}

// ---- adam ------------------------------------------------------------------

namespace {

struct Adam {
    nn::Params m, v;
    long step = 0;

    void update(nn::Params& p, const nn::Params& g, const OptimConfig& cfg,
                const std::vector<std::string>& keys) {
        ++step;
        const double bc1 = 1.0 - std::pow(cfg.beta1, step);
        const double bc2 = 1.0 - std::pow(cfg.beta2, step);
        for (const auto& key : keys) {
            auto it = g.t.find(key);
            if (it == g.t.end()) continue;
            const nn::Tensor& grad = it->second;
            nn::Tensor& theta = p.at(key);
            nn::Tensor& m1 = m.get_or_zero(key, theta);
            nn::Tensor& m2 = v.get_or_zero(key, theta);
            for (size_t i = 0; i < theta.size(); ++i) {
                const double gi = grad.v[i];
                m1.v[i] = static_cast<float>(cfg.beta1 * m1.v[i] + (1.0 - cfg.beta1) * gi);
                m2.v[i] = static_cast<float>(cfg.beta2 * m2.v[i] + (1.0 - cfg.beta2) * gi * gi);
                const double mhat = m1.v[i] / bc1;
                const double vhat = m2.v[i] / bc2;
                theta.v[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
            }
        }
    }
};

} // namespace

// ---- training loop -----------------------------------------------------------

TrainResult train(const model::ModelGraph& g, const data::DatasetManifest& train_split,
                  const data::DatasetManifest& val_split, const LossConfig& loss_cfg,
                  const OptimConfig& opt, uint64_t seed, const std::string& out_dir) {
    loss_cfg.validate();
    FlatFrames tf = flatten(train_split);
    if (tf.size() == 0 || val_split.frame_count() == 0)
        throw TrainError("train: empty train or val manifest");

    Rng rng(seed);
    Rng init_rng = rng.fork(1);
    Rng aug_rng = rng.fork(2);
    Rng shuffle_rng = rng.fork(3);

    nn::Params params = nn::init_params(g, init_rng);
    const auto keys = nn::trainable_keys(params);
    Adam adam;

    // preload all training frames (desk-scale datasets fit in memory)
    std::vector<data::Sample> pool(tf.size());
    for (size_t i = 0; i < tf.size(); ++i) {
        pool[i].image = data::load_frame(train_split, *tf.seq[i], *tf.frame[i]);
        pool[i].yaw_rate = tf.frame[i]->yaw_rate;
        pool[i].collision = tf.frame[i]->collision;
    }

    data::AugmentConfig aug_cfg;

    TrainResult result;
    double best_score = 1e30;
    std::vector<size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < loss_cfg.total_epochs; ++epoch) {
        const double beta = beta_schedule(epoch, loss_cfg);
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t batches = 0;

        for (size_t at = 0; at < order.size(); at += opt.batch) {
            const size_t take = std::min<size_t>(opt.batch, order.size() - at);
            std::vector<data::Sample> batch(take);
            std::vector<float> yaw_true(take);
            std::vector<int> coll_true(take);
            for (size_t i = 0; i < take; ++i) {
                const data::Sample& s = pool[order[at + i]];
                batch[i] = opt.augment ? data::augment_sample(s, aug_cfg, aug_rng) : s;
                yaw_true[i] = batch[i].yaw_rate;
                coll_true[i] = batch[i].collision;
            }
            nn::Tensor x = frames_to_tensor(batch);
            nn::ForwardTrace trace;
            auto fwd = nn::model_forward(g, params, x, nn::Mode::train, &trace);
            LossResult loss = compute_loss(fwd.yaw, yaw_true, fwd.p_coll, coll_true, beta);
            if (!std::isfinite(loss.total))
                throw TrainError("training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));

            const auto selected = hard_mining_select(loss.per_sample, epoch, loss_cfg);
            std::vector<char> keep(take, 0);
            for (int i : selected) keep[i] = 1;
            const double inv_k = 1.0 / static_cast<double>(selected.size());

            // dLoss/dyaw = 2(yaw - y)/k, dLoss/dp = beta * (p - c)/(p(1-p))/k
            // restricted to the mined subset
            std::vector<float> dyaw(take, 0.0f), dp(take, 0.0f);
            double mined_loss = 0.0;
            for (int i : selected) mined_loss += loss.per_sample[i];
            mined_loss *= inv_k;
            for (size_t i = 0; i < take; ++i) {
                if (!keep[i]) continue;
                dyaw[i] = static_cast<float>(2.0 * (fwd.yaw[i] - yaw_true[i]) * inv_k);
                const double p = std::clamp(static_cast<double>(fwd.p_coll[i]), 1e-7, 1.0 - 1e-7);
                // d(BCE)/dp for the clamped probability
                const double dbce = coll_true[i] ? -1.0 / p : 1.0 / (1.0 - p);
                dp[i] = static_cast<float>(beta * dbce * inv_k);
            }
            nn::Params grads = nn::model_backward(g, params, trace, dyaw, dp);
            adam.update(params, grads, opt, keys);

            // the logged loss is the full-batch mean (comparable across
            // epochs); mining only restricts the gradient
            (void)mined_loss;
            epoch_loss += loss.total;
            ++batches;
        }

        Metrics val = evaluate_metrics(g, params, val_split);
        EpochLog log;
        log.epoch = epoch;
        log.loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
        log.val_rmse = val.rmse;
        log.val_acc = val.accuracy;
        log.beta = beta;
        log.k_fraction = loss_cfg.hardmining_start_fraction +
                         (loss_cfg.hardmining_end_fraction - loss_cfg.hardmining_start_fraction) *
                             (loss_cfg.total_epochs > 1
                                  ? static_cast<double>(epoch) / (loss_cfg.total_epochs - 1)
                                  : 0.0);
        result.log.push_back(log);

        const double score = val.rmse + (1.0 - val.accuracy);
        if (score < best_score) {
            best_score = score;
            result.best_params = params;
            result.best_epoch = epoch;
        }
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        nn::save_checkpoint(result.best_params,
                            (std::filesystem::path(out_dir) / "best.ckpt").string());
        save_metrics_log(result.log, (std::filesystem::path(out_dir) / "metrics.log").string());
    }
    return result;
}

void save_metrics_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw TrainError("cannot write " + path);
    char buf[160];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf),
                      "epoch=%d loss=%.6f val_rmse=%.6f val_acc=%.6f beta=%.6f kfrac=%.6f\n",
                      e.epoch, e.loss, e.val_rmse, e.val_acc, e.beta, e.k_fraction);
        f << buf;
    }
}

} // namespace dronet::train
