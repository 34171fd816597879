#pragma once
#include <string>
#include <vector>

#include "dronet/quant.hpp"

namespace dronet::deploy {

struct DeployError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class SocConfig { mp, ee }; // max-performance / energy-efficient

struct HardwareModel {
    long l1_bytes = 65536;
    long l2_bytes = 524288;
    int cores = 8;
    double fc_mhz_mp = 250.0, cl_mhz_mp = 175.0, vdd_mp = 1.2;
    double fc_mhz_ee = 50.0, cl_mhz_ee = 100.0, vdd_ee = 1.0;
    double power_mw_mp = 100.0;
    double power_mw_ee_wide = 38.0;   // gamma in {1,2}
    double power_mw_ee_narrow = 34.0; // gamma in {4,8}
    int buffering_factor = 2;         // double buffering in L1

    double cluster_hz(SocConfig c) const {
        return (c == SocConfig::mp ? cl_mhz_mp : cl_mhz_ee) * 1e6;
    }
    double power_mw(SocConfig c, int gamma) const {
        if (c == SocConfig::mp) return power_mw_mp;
        return gamma <= 2 ? power_mw_ee_wide : power_mw_ee_narrow;
    }
};

// per-kind efficiency curve eta(out_ch) = peak * out_ch / (out_ch + c0),
// fitted once against the published per-network cycle totals
struct CycleModel {
    struct Curve {
        double eta_peak = 1.0;
        double c0 = 0.0;
    };
    Curve conv, depthwise, pointwise, fc;
    int version = 1;

    double eta(quant::QOp::Kind kind, int out_ch) const;
};

CycleModel default_cycle_model();
CycleModel load_cycle_model(const std::string& path);
void save_cycle_model(const CycleModel& m, const std::string& path);

struct Tile {
    int row0 = 0, rows = 0;   // output rows covered
    int oc0 = 0, ocs = 0;     // output channels covered
    long in_bytes = 0, out_bytes = 0, weight_bytes = 0;
};

struct OpPlan {
    std::string name;
    quant::QOp::Kind kind = quant::QOp::Kind::conv;
    model::LayerSpec spec;
    std::vector<Tile> tiles;
    long weight_bytes_total = 0; // int8 weights + per-channel metadata
    long l1_peak = 0;            // max over tiles of the constraint lhs
    long dma_bytes = 0;          // sum of tile traffic
};

struct TilingPlan {
    std::vector<OpPlan> ops;
    long l1_peak = 0;
    long l2_resident_bytes = 0; // weights + largest inter-op activation pair
};

struct LayerCycles {
    std::string name;
    int64_t macs = 0;
    double cycles = 0.0;
};

struct DeployReport {
    TilingPlan plan;
    std::vector<LayerCycles> layers;
    double total_cycles = 0.0;
    int64_t total_macs = 0;
    double mac_per_cycle = 0.0;
    double fps_mp = 0.0, fps_ee = 0.0;
    double energy_mp_mj = 0.0, energy_ee_mj = 0.0;
    long dma_bytes = 0;
};

// greedy largest-feasible tile search, rows first then output channels,
// under buffering_factor*(in+out) + weights <= l1
TilingPlan plan_tiling(const quant::QuantizedGraph& qg, const HardwareModel& hw);

std::vector<LayerCycles> estimate_cycles(const quant::QuantizedGraph& qg, const TilingPlan& plan,
                                         const CycleModel& cm);
double estimate_throughput(double total_cycles, const HardwareModel& hw, SocConfig cfg);
// millijoules per inference
double estimate_energy(double total_cycles, const HardwareModel& hw, SocConfig cfg, int gamma);

DeployReport generate_report(const quant::QuantizedGraph& qg, const HardwareModel& hw,
                             const CycleModel& cm);

std::string report_table(const DeployReport& r);
void save_report_records(const DeployReport& r, const std::string& path);

// independent checker used by the feasibility property tests: recomputes
// every tile's byte counts from shapes and verifies the constraint and the
// exact disjoint cover
void verify_plan(const quant::QuantizedGraph& qg, const TilingPlan& plan, const HardwareModel& hw);

} // namespace dronet::deploy
