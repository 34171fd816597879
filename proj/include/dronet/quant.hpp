#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dronet/data.hpp"
#include "dronet/nn.hpp"

namespace dronet::quant {

struct QuantError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// uniform asymmetric affine uint8 quantizer: q = round(x/scale) + zero_point
struct QParams {
    float scale = 1.0f;
    int zero_point = 0;
};

struct ActRange {
    float lo = 0.0f, hi = 0.0f;
};

using ActRanges = std::map<std::string, ActRange>;

// degenerate ranges widen to a minimum span so the scale never collapses
QParams qparams_from_range(float lo, float hi);

uint8_t quantize_value(float x, const QParams& q);
float dequantize_value(uint8_t v, const QParams& q);

// round-half-away-from-zero fixed-point requantization: y ~= x * mult / 2^rshift
int64_t rounding_rshift(int64_t x, int rshift);
// normalized fixed-point representation of a real multiplier (31-bit mantissa)
void normalize_multiplier(double m_real, int32_t& mult, int32_t& rshift);

// one executable unit of the integer pipeline; convolutions are fused with
// the batchnorm (per-channel int32 bias + multiplier + shift on the 32-bit
// accumulator) and the relu6 (clamp built into the output quantization)
struct QOp {
    enum class Kind { conv, depthwise, pointwise, fc, maxpool, add };
    Kind kind = Kind::conv;
    std::string name;           // producing layer name
    model::LayerSpec spec;
    int input = -1;             // producer op index, -1 = model input
    int add_rhs = -1;           // second producer for add joins
    std::vector<uint8_t> weights;
    QParams w_q;
    std::vector<int32_t> bias;   // per out channel, added to the accumulator
    std::vector<int32_t> mult;   // per out channel requant multiplier
    std::vector<int32_t> rshift; // per out channel shift
    std::vector<int32_t> mult2, rshift2; // rhs rescale for adds
    int rhs_zero_point = 0;              // zero point of the rhs producer
    QParams in_q, out_q;
    bool dequant_output = false; // heads emit floats
    float dequant_scale = 1.0f;  // s_w * s_in for heads

    size_t out_elems() const {
        return static_cast<size_t>(spec.out_ch) * spec.out_h * spec.out_w;
    }
};

struct QuantizedGraph {
    model::ModelGraph graph;
    std::vector<QOp> ops; // topological order, heads last
    QParams input_q;      // image pixels: scale 1/255, zero_point 0

    // int8 weight payload: one byte per conv/fc weight parameter
    size_t weight_payload_bytes() const;
    // per-channel bias/multiplier/shift plus head scales
    size_t metadata_bytes() const;
};

// per-quant-point (min,max) observed over up to n calibration frames;
// relu6-bounded outputs are clamped to [0,6]
ActRanges calibrate_activations(const model::ModelGraph& g, nn::Params& params,
                                const data::DatasetManifest& calib, int n = 512);

QuantizedGraph quantize_model(const model::ModelGraph& g, const nn::Params& params,
                              const ActRanges& ranges);

// shape-faithful quantized graph with placeholder weights and canonical
// relu6 ranges; deployment planning and what-if sweeps need only shapes
QuantizedGraph synthesize_for_shapes(const model::ModelGraph& g);

struct QuantForwardResult {
    float yaw = 0.0f;
    float p_coll = 0.0f;
};

QuantForwardResult quantized_forward(const QuantizedGraph& qg, const Image& img);

// executes one op on explicit input buffers (budget tests drive this)
std::vector<uint8_t> run_qop(const QOp& op, const std::vector<uint8_t>& input,
                             const std::vector<uint8_t>& rhs = {});
// float accumulator value for head ops
float run_qop_head(const QOp& op, const std::vector<uint8_t>& input);

struct CompareReport {
    double float_rmse = 0, float_acc = 0;
    double int8_rmse = 0, int8_acc = 0;
    double mean_abs_dyaw = 0, max_abs_dyaw = 0;
    double mean_abs_dp = 0, max_abs_dp = 0;
    int rmse_delta_sign = 0; // sign of (int8_rmse - float_rmse)
};

CompareReport compare_fp32_int8(const model::ModelGraph& g, nn::Params& params,
                                const QuantizedGraph& qg, const data::DatasetManifest& manifest,
                                double threshold = 0.5);

void save_quantized(const QuantizedGraph& qg, const std::string& path);
QuantizedGraph load_quantized(const std::string& path);

} // namespace dronet::quant
