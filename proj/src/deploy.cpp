#include "dronet/deploy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dronet::deploy {

using quant::QOp;
using quant::QuantizedGraph;

double CycleModel::eta(QOp::Kind kind, int out_ch) const {
    const Curve* c = nullptr;
    switch (kind) {
        case QOp::Kind::conv: c = &conv; break;
        case QOp::Kind::depthwise: c = &depthwise; break;
        case QOp::Kind::pointwise: c = &pointwise; break;
        case QOp::Kind::fc: c = &fc; break;
        default: return 1.0;
    }
    return c->eta_peak * out_ch / (out_ch + c->c0);
}

CycleModel default_cycle_model() {
    // constants fitted against the four published per-network cycle totals;
    // regenerate with the fit_cycle_model tool
    CycleModel m;
    m.conv = {2.373875, 7.459704};
    m.depthwise = {2.722749, 4.309975};
    m.pointwise = {5.327315, 5.849369};
    m.fc = {1.0, 0.0};
    return m;
}

CycleModel load_cycle_model(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DeployError("cannot read cycle model: " + path);
    CycleModel m;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw DeployError("bad cycle model line: " + line);
        const std::string k = line.substr(0, eq);
        const double v = std::stod(line.substr(eq + 1));
        if (k == "version") m.version = static_cast<int>(v);
        else if (k == "conv.eta_peak") m.conv.eta_peak = v;
        else if (k == "conv.c0") m.conv.c0 = v;
        else if (k == "depthwise.eta_peak") m.depthwise.eta_peak = v;
        else if (k == "depthwise.c0") m.depthwise.c0 = v;
        else if (k == "pointwise.eta_peak") m.pointwise.eta_peak = v;
        else if (k == "pointwise.c0") m.pointwise.c0 = v;
        else if (k == "fc.eta_peak") m.fc.eta_peak = v;
        else if (k == "fc.c0") m.fc.c0 = v;
        else throw DeployError("unknown cycle model key: " + k);
    }
    return m;
}

void save_cycle_model(const CycleModel& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DeployError("cannot write cycle model: " + path);
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "version=%d\n"
                  "conv.eta_peak=%.6f\nconv.c0=%.6f\n"
                  "depthwise.eta_peak=%.6f\ndepthwise.c0=%.6f\n"
                  "pointwise.eta_peak=%.6f\npointwise.c0=%.6f\n"
                  "fc.eta_peak=%.6f\nfc.c0=%.6f\n",
                  m.version, m.conv.eta_peak, m.conv.c0, m.depthwise.eta_peak, m.depthwise.c0,
                  m.pointwise.eta_peak, m.pointwise.c0, m.fc.eta_peak, m.fc.c0);
    f << buf;
}

// ---- byte footprints --------------------------------------------------------

namespace {

bool channel_local(QOp::Kind k) {
    // ops whose input channels split together with output channels
    return k == QOp::Kind::depthwise || k == QOp::Kind::maxpool || k == QOp::Kind::add;
}

long op_weight_bytes(const QOp& op) {
    long n = static_cast<long>(op.weights.size());
    n += 12L * static_cast<long>(op.bias.size()); // int32 bias + mult + shift
    if (op.kind == QOp::Kind::add) n += 16;       // two rescale pairs
    return n;
}

// weight bytes for a tile covering ocs output channels
long tile_weight_bytes(const QOp& op, int ocs) {
    const auto& s = op.spec;
    switch (op.kind) {
        case QOp::Kind::conv:
            return static_cast<long>(s.kernel) * s.kernel * s.in_ch * ocs + 12L * ocs;
        case QOp::Kind::depthwise:
            return static_cast<long>(s.kernel) * s.kernel * ocs + 12L * ocs;
        case QOp::Kind::pointwise:
            return static_cast<long>(s.in_ch) * ocs + 12L * ocs;
        case QOp::Kind::fc:
            return static_cast<long>(s.in_ch) * ocs + 4L * ocs;
        case QOp::Kind::maxpool:
            return 0;
        case QOp::Kind::add:
            return 16;
    }
    return 0;
}

// input rows feeding output rows [row0, row0+rows)
long input_rows_for(const QOp& op, int row0, int rows) {
    const auto& s = op.spec;
    const int k = op.kind == QOp::Kind::maxpool ? 2 : s.kernel;
    const int stride = op.kind == QOp::Kind::maxpool ? 2 : s.stride;
    const int pad = op.kind == QOp::Kind::maxpool ? 0 : s.pad;
    if (op.kind == QOp::Kind::add || op.kind == QOp::Kind::fc) return rows;
    long lo = static_cast<long>(row0) * stride - pad;
    long hi = static_cast<long>(row0 + rows - 1) * stride - pad + k; // exclusive
    lo = std::max(lo, 0L);
    hi = std::min(hi, static_cast<long>(s.in_h));
    return std::max(0L, hi - lo);
}

long tile_in_bytes(const QOp& op, int row0, int rows, int ocs) {
    const auto& s = op.spec;
    if (op.kind == QOp::Kind::fc) return s.in_ch; // flattened vector
    const long in_rows = input_rows_for(op, row0, rows);
    const long ch = channel_local(op.kind) ? ocs : s.in_ch;
    long bytes = in_rows * s.in_w * ch;
    if (op.kind == QOp::Kind::add) bytes *= 2; // two operand planes
    return bytes;
}

long tile_out_bytes(const QOp& op, int rows, int ocs) {
    if (op.kind == QOp::Kind::fc) return op.spec.out_ch;
    return static_cast<long>(rows) * op.spec.out_w * ocs;
}

long full_out_bytes(const QOp& op) {
    return static_cast<long>(op.spec.out_ch) * op.spec.out_h * op.spec.out_w;
}

long full_in_bytes(const QOp& op, const QuantizedGraph& qg) {
    if (op.input < 0)
        return static_cast<long>(qg.graph.config.in_ch) * qg.graph.config.in_h *
               qg.graph.config.in_w;
    return full_out_bytes(qg.ops[op.input]);
}

long constraint_lhs(const HardwareModel& hw, long in_b, long out_b, long w_b) {
    return static_cast<long>(hw.buffering_factor) * (in_b + out_b) + w_b;
}

} // namespace

// ---- tiling ------------------------------------------------------------------

TilingPlan plan_tiling(const QuantizedGraph& qg, const HardwareModel& hw) {
    TilingPlan plan;
    long total_weights = 0;
    long max_pair = 0;
    for (const auto& op : qg.ops) {
        if (op.dequant_output) {
            // heads stream the flattened features; account like fc ops
        }
        total_weights += op_weight_bytes(op);
        max_pair = std::max(max_pair, full_in_bytes(op, qg) + full_out_bytes(op));
    }
    plan.l2_resident_bytes = total_weights + max_pair;
    if (plan.l2_resident_bytes > hw.l2_bytes)
        throw DeployError("model exceeds L2: " + std::to_string(plan.l2_resident_bytes) + " > " +
                          std::to_string(hw.l2_bytes));

    for (const auto& op : qg.ops) {
        OpPlan p;
        p.name = op.name;
        p.kind = op.kind;
        p.spec = op.spec;
        p.weight_bytes_total = op_weight_bytes(op);
        const int out_h = op.kind == QOp::Kind::fc ? 1 : op.spec.out_h;
        const int out_ch = op.spec.out_ch;

        auto feasible = [&](int row0, int rows, int ocs) {
            return constraint_lhs(hw, tile_in_bytes(op, row0, rows, ocs),
                                  tile_out_bytes(op, rows, ocs),
                                  tile_weight_bytes(op, ocs)) <= hw.l1_bytes;
        };
        // worst-case interior placement decides the feasible tile shape
        auto feasible_shape = [&](int rows, int ocs) {
            bool ok = true;
            for (int r0 = 0; r0 < out_h && ok; r0 += rows) {
                const int take = std::min(rows, out_h - r0);
                ok = feasible(r0, take, ocs);
            }
            return ok;
        };

        int rows = out_h, ocs = out_ch;
        if (!feasible_shape(rows, ocs)) {
            // rows first: largest row count that fits with full channels
            int lo = 1, hi = out_h, best = 0;
            while (lo <= hi) {
                const int mid = (lo + hi) / 2;
                if (feasible_shape(mid, out_ch)) {
                    best = mid;
                    lo = mid + 1;
                } else {
                    hi = mid - 1;
                }
            }
            if (best >= 1) {
                rows = best;
            } else {
                // then output channels at single-row granularity
                rows = 1;
                lo = 1;
                hi = out_ch;
                best = 0;
                while (lo <= hi) {
                    const int mid = (lo + hi) / 2;
                    if (feasible_shape(1, mid)) {
                        best = mid;
                        lo = mid + 1;
                    } else {
                        hi = mid - 1;
                    }
                }
                if (best < 1)
                    throw DeployError("infeasible layer: minimal tile of " + op.name +
                                      " exceeds L1");
                ocs = best;
            }
        }

        for (int c0 = 0; c0 < out_ch; c0 += ocs) {
            const int ctake = std::min(ocs, out_ch - c0);
            for (int r0 = 0; r0 < out_h; r0 += rows) {
                const int rtake = std::min(rows, out_h - r0);
                Tile t;
                t.row0 = r0;
                t.rows = rtake;
                t.oc0 = c0;
                t.ocs = ctake;
                t.in_bytes = tile_in_bytes(op, r0, rtake, ctake);
                t.out_bytes = tile_out_bytes(op, rtake, ctake);
                t.weight_bytes = tile_weight_bytes(op, ctake);
                p.tiles.push_back(t);
                p.l1_peak = std::max(p.l1_peak,
                                     constraint_lhs(hw, t.in_bytes, t.out_bytes, t.weight_bytes));
                p.dma_bytes += t.in_bytes + t.out_bytes + t.weight_bytes;
            }
        }
        plan.l1_peak = std::max(plan.l1_peak, p.l1_peak);
        plan.ops.push_back(std::move(p));
    }
    return plan;
}

void verify_plan(const QuantizedGraph& qg, const TilingPlan& plan, const HardwareModel& hw) {
    if (plan.ops.size() != qg.ops.size()) throw DeployError("verify: op count mismatch");
    for (size_t i = 0; i < plan.ops.size(); ++i) {
        const OpPlan& p = plan.ops[i];
        const QOp& op = qg.ops[i];
        const int out_h = op.kind == QOp::Kind::fc ? 1 : op.spec.out_h;
        std::vector<int> cover(static_cast<size_t>(out_h) * op.spec.out_ch, 0);
        for (const Tile& t : p.tiles) {
            const long lhs = constraint_lhs(hw, tile_in_bytes(op, t.row0, t.rows, t.ocs),
                                            tile_out_bytes(op, t.rows, t.ocs),
                                            tile_weight_bytes(op, t.ocs));
            if (lhs > hw.l1_bytes) throw DeployError("verify: tile violates L1 at " + p.name);
            for (int c = t.oc0; c < t.oc0 + t.ocs; ++c)
                for (int r = t.row0; r < t.row0 + t.rows; ++r)
                    cover[static_cast<size_t>(c) * out_h + r]++;
        }
        for (int v : cover)
            if (v != 1) throw DeployError("verify: cover not exact at " + p.name);
    }
}

// ---- estimators ------------------------------------------------------------------

std::vector<LayerCycles> estimate_cycles(const QuantizedGraph& qg, const TilingPlan& plan,
                                         const CycleModel& cm) {
    (void)plan; // transfer time is assumed hidden behind compute
    std::vector<LayerCycles> out;
    for (const auto& op : qg.ops) {
        LayerCycles lc;
        lc.name = op.name;
        lc.macs = model::layer_macs(op.spec);
        if (op.kind == QOp::Kind::maxpool || op.kind == QOp::Kind::add) lc.macs = 0;
        lc.cycles = lc.macs > 0 ? lc.macs / cm.eta(op.kind, op.spec.out_ch) : 0.0;
        out.push_back(std::move(lc));
    }
    return out;
}

double estimate_throughput(double total_cycles, const HardwareModel& hw, SocConfig cfg) {
    if (total_cycles <= 0.0) throw DeployError("throughput needs positive cycles");
    return hw.cluster_hz(cfg) / total_cycles;
}

double estimate_energy(double total_cycles, const HardwareModel& hw, SocConfig cfg, int gamma) {
    if (total_cycles <= 0.0) throw DeployError("energy needs positive cycles");
    const double watts = hw.power_mw(cfg, gamma) * 1e-3;
    const double seconds = total_cycles / hw.cluster_hz(cfg);
    return watts * seconds * 1e3; // millijoules
}

DeployReport generate_report(const QuantizedGraph& qg, const HardwareModel& hw,
                             const CycleModel& cm) {
    DeployReport r;
    r.plan = plan_tiling(qg, hw);
    r.layers = estimate_cycles(qg, r.plan, cm);
    for (const auto& l : r.layers) {
        r.total_cycles += l.cycles;
        r.total_macs += l.macs;
    }
    for (const auto& p : r.plan.ops) r.dma_bytes += p.dma_bytes;
    r.mac_per_cycle = r.total_cycles > 0 ? r.total_macs / r.total_cycles : 0.0;
    const int gamma = qg.graph.config.gamma;
    r.fps_mp = estimate_throughput(r.total_cycles, hw, SocConfig::mp);
    r.fps_ee = estimate_throughput(r.total_cycles, hw, SocConfig::ee);
    r.energy_mp_mj = estimate_energy(r.total_cycles, hw, SocConfig::mp, gamma);
    r.energy_ee_mj = estimate_energy(r.total_cycles, hw, SocConfig::ee, gamma);
    return r;
}

std::string report_table(const DeployReport& r) {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-12s %10s %12s %8s %10s %10s\n", "layer", "macs", "cycles",
                  "tiles", "l1_peak", "dma_bytes");
    os << buf;
    for (size_t i = 0; i < r.layers.size(); ++i) {
        const auto& l = r.layers[i];
        const auto& p = r.plan.ops[i];
        std::snprintf(buf, sizeof(buf), "%-12s %10lld %12.0f %8zu %10ld %10ld\n", l.name.c_str(),
                      static_cast<long long>(l.macs), l.cycles, p.tiles.size(), p.l1_peak,
                      p.dma_bytes);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "total macs %lld  cycles %.0f  mac/cycle %.2f\n"
                  "fps mp %.1f  ee %.1f\n"
                  "energy mp %.2f mJ  ee %.2f mJ\n"
                  "l1 peak %ld B  l2 resident %ld B  dma %ld B\n",
                  static_cast<long long>(r.total_macs), r.total_cycles, r.mac_per_cycle, r.fps_mp,
                  r.fps_ee, r.energy_mp_mj, r.energy_ee_mj, r.plan.l1_peak,
                  r.plan.l2_resident_bytes, r.dma_bytes);
    os << buf;
    return os.str();
}

void save_report_records(const DeployReport& r, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DeployError("cannot write " + path);
    char buf[256];
    for (size_t i = 0; i < r.layers.size(); ++i) {
        const auto& l = r.layers[i];
        const auto& p = r.plan.ops[i];
        std::snprintf(buf, sizeof(buf), "layer=%s macs=%lld cycles=%.0f tiles=%zu l1_peak=%ld dma=%ld\n",
                      l.name.c_str(), static_cast<long long>(l.macs), l.cycles, p.tiles.size(),
                      p.l1_peak, p.dma_bytes);
        f << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "total cycles=%.0f macs=%lld mac_per_cycle=%.3f fps_mp=%.2f fps_ee=%.2f "
                  "e_mp_mj=%.3f e_ee_mj=%.3f l1_peak=%ld l2_resident=%ld dma=%ld\n",
                  r.total_cycles, static_cast<long long>(r.total_macs), r.mac_per_cycle, r.fps_mp,
                  r.fps_ee, r.energy_mp_mj, r.energy_ee_mj, r.plan.l1_peak,
                  r.plan.l2_resident_bytes, r.dma_bytes);
    f << buf;
}

} // namespace dronet::deploy
