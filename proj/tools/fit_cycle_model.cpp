// Fits the per-kind efficiency curves of the cycle model against the four
// published per-network cycle totals, then prints the config file content.
#include <cmath>
#include <cstdio>
#include <vector>

#include "dronet/deploy.hpp"
#include "dronet/rng.hpp"

using namespace dronet;

namespace {

struct OpShape {
    quant::QOp::Kind kind;
    int out_ch;
    int64_t macs;
};

double predict(const std::vector<OpShape>& ops, const deploy::CycleModel& m) {
    double cycles = 0.0;
    for (const auto& o : ops)
        if (o.macs > 0) cycles += o.macs / m.eta(o.kind, o.out_ch);
    return cycles;
}

} // namespace

int main() {
    const double targets[4] = {5.1e6, 2.9e6, 1.7e6, 1.3e6};
    const int gammas[4] = {1, 2, 4, 8};
    std::vector<std::vector<OpShape>> nets;
    for (int gi = 0; gi < 4; ++gi) {
        model::ArchConfig cfg;
        cfg.block_kind = model::BlockKind::DP;
        cfg.gamma = gammas[gi];
        auto qg = quant::synthesize_for_shapes(model::build_model(cfg));
        std::vector<OpShape> ops;
        for (const auto& op : qg.ops)
            ops.push_back({op.kind, op.spec.out_ch, model::layer_macs(op.spec)});
        nets.push_back(std::move(ops));
    }

    auto loss = [&](const deploy::CycleModel& m) {
        double s = 0.0;
        for (int i = 0; i < 4; ++i) {
            const double r = std::log(predict(nets[i], m) / targets[i]);
            s += r * r;
        }
        return s;
    };

    deploy::CycleModel best = deploy::default_cycle_model();
    double best_loss = loss(best);
    Rng rng(1234);
    // random restarts around sensible priors, then shrinking local search
    for (int restart = 0; restart < 40; ++restart) {
        deploy::CycleModel m;
        m.conv = {rng.uniform(2.0, 8.0), rng.uniform(2.0, 40.0)};
        m.depthwise = {rng.uniform(0.5, 3.0), rng.uniform(1.0, 30.0)};
        m.pointwise = {rng.uniform(2.0, 9.0), rng.uniform(2.0, 40.0)};
        m.fc = {1.0, 0.0};
        double cur = loss(m);
        double step = 0.5;
        for (int iter = 0; iter < 4000; ++iter) {
            deploy::CycleModel cand = m;
            double* fields[6] = {&cand.conv.eta_peak,      &cand.conv.c0,
                                 &cand.depthwise.eta_peak, &cand.depthwise.c0,
                                 &cand.pointwise.eta_peak, &cand.pointwise.c0};
            for (double* f : fields) *f = std::max(0.05, *f * std::exp(rng.uniform(-step, step)));
            if (cand.depthwise.eta_peak >= cand.pointwise.eta_peak) continue;
            const double l = loss(cand);
            if (l < cur) {
                cur = l;
                m = cand;
            }
            step *= 0.999;
        }
        if (cur < best_loss && m.depthwise.eta_peak < m.pointwise.eta_peak) {
            best_loss = cur;
            best = m;
        }
    }

    std::printf("# fitted cycle model, objective %.6g\n", best_loss);
    for (int i = 0; i < 4; ++i) {
        const double p = predict(nets[i], best);
        std::printf("# gamma=%d predicted=%.3fM target=%.1fM error=%+.1f%%\n", gammas[i], p / 1e6,
                    targets[i] / 1e6, 100.0 * (p - targets[i]) / targets[i]);
    }
    std::printf(
        "version=1\n"
        "conv.eta_peak=%.6f\nconv.c0=%.6f\n"
        "depthwise.eta_peak=%.6f\ndepthwise.c0=%.6f\n"
        "pointwise.eta_peak=%.6f\npointwise.c0=%.6f\n"
        "fc.eta_peak=%.6f\nfc.c0=%.6f\n",
        best.conv.eta_peak, best.conv.c0, best.depthwise.eta_peak, best.depthwise.c0,
        best.pointwise.eta_peak, best.pointwise.c0, best.fc.eta_peak, best.fc.c0);
    return 0;
}
