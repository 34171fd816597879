#include "dronet/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dronet/train.hpp"

namespace dronet::quant {

using model::LayerKind;
using model::LayerNode;
using model::LayerSpec;
using nn::Tensor;

QParams qparams_from_range(float lo, float hi) {
    if (hi < lo) std::swap(lo, hi);
    // an affine uint8 representation must contain zero for the zero point
    // to land inside [0,255]
    lo = std::min(lo, 0.0f);
    hi = std::max(hi, 0.0f);
    if (hi - lo < 1e-3f) { // widen degenerate ranges
        const float mid = 0.5f * (lo + hi);
        lo = mid - 5e-4f;
        hi = mid + 5e-4f;
    }
    QParams q;
    q.scale = (hi - lo) / 255.0f;
    q.zero_point = static_cast<int>(std::lround(-lo / q.scale));
    q.zero_point = std::clamp(q.zero_point, 0, 255);
    return q;
}

uint8_t quantize_value(float x, const QParams& q) {
    const long v = std::lround(static_cast<double>(x) / q.scale) + q.zero_point;
    return static_cast<uint8_t>(std::clamp(v, 0L, 255L));
}

float dequantize_value(uint8_t v, const QParams& q) {
    return q.scale * (static_cast<int>(v) - q.zero_point);
}

int64_t rounding_rshift(int64_t x, int rshift) {
    if (rshift <= 0) return x << (-rshift);
    const int64_t half = 1LL << (rshift - 1);
    return x >= 0 ? (x + half) >> rshift : -((-x + half) >> rshift);
}

void normalize_multiplier(double m_real, int32_t& mult, int32_t& rshift) {
    if (m_real == 0.0) {
        mult = 0;
        rshift = 0;
        return;
    }
    const double sign = m_real < 0 ? -1.0 : 1.0;
    int exp = 0;
    const double frac = std::frexp(std::fabs(m_real), &exp); // frac in [0.5, 1)
    int64_t m = static_cast<int64_t>(std::llround(frac * (1LL << 31)));
    if (m == (1LL << 31)) {
        m >>= 1;
        ++exp;
    }
    mult = static_cast<int32_t>(sign * m);
    rshift = 31 - exp;
    if (rshift > 62) { // multiplier too small to matter
        mult = 0;
        rshift = 0;
    }
}

// ---- fused-op construction ------------------------------------------------

namespace {

struct FoldedBn {
    std::vector<double> a, b; // y = a*x + b per channel
};

FoldedBn fold_bn(const nn::Params& p, const std::string& bn_name, int channels) {
    FoldedBn f;
    f.a.resize(channels);
    f.b.resize(channels);
    const Tensor& scale = p.at(bn_name + ".scale");
    const Tensor& shift = p.at(bn_name + ".shift");
    const Tensor& mean = p.at(bn_name + ".mean");
    const Tensor& var = p.at(bn_name + ".var");
    for (int c = 0; c < channels; ++c) {
        double a = scale.v[c] / std::sqrt(static_cast<double>(var.v[c]) + nn::kBnEps);
        if (std::fabs(a) < 1e-12) a = a < 0 ? -1e-12 : 1e-12;
        f.a[c] = a;
        f.b[c] = shift.v[c] - mean.v[c] * a;
    }
    return f;
}

QParams quantize_weights(const Tensor& w, std::vector<uint8_t>& out) {
    float lo = 0.0f, hi = 0.0f; // zero is always representable
    for (float v : w.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    QParams q = qparams_from_range(lo, hi);
    out.resize(w.size());
    for (size_t i = 0; i < w.size(); ++i) out[i] = quantize_value(w.v[i], q);
    return q;
}

QOp::Kind op_kind(LayerKind k) {
    switch (k) {
        case LayerKind::conv2d: return QOp::Kind::conv;
        case LayerKind::depthwise: return QOp::Kind::depthwise;
        case LayerKind::pointwise: return QOp::Kind::pointwise;
        case LayerKind::fully_connected: return QOp::Kind::fc;
        case LayerKind::maxpool: return QOp::Kind::maxpool;
        default: throw QuantError("not an executable op kind");
    }
}

// builds the fused op chain for one layer sequence; returns the index of the
// last op
int build_chain(std::vector<QOp>& ops, const std::vector<LayerNode>& seq, const nn::Params& p,
                const ActRanges& ranges, int input_op, const QParams& input_q) {
    int cur = input_op;
    QParams cur_q = input_q;
    for (size_t i = 0; i < seq.size(); ++i) {
        const LayerNode& l = seq[i];
        switch (l.spec.kind) {
            case LayerKind::conv2d:
            case LayerKind::depthwise:
            case LayerKind::pointwise: {
                if (i + 2 >= seq.size() || seq[i + 1].spec.kind != LayerKind::batchnorm ||
                    seq[i + 2].spec.kind != LayerKind::relu6)
                    throw QuantError("expected conv-bn-relu6 pattern at " + l.name);
                auto rit = ranges.find(l.name);
                if (rit == ranges.end()) throw QuantError("uncalibrated layer: " + l.name);

                QOp op;
                op.kind = op_kind(l.spec.kind);
                op.name = l.name;
                op.spec = l.spec;
                op.input = cur;
                op.in_q = cur_q;
                op.w_q = quantize_weights(p.at(l.name + ".w"), op.weights);
                op.out_q = qparams_from_range(rit->second.lo, rit->second.hi);

                const FoldedBn bn = fold_bn(p, seq[i + 1].name, l.spec.out_ch);
                op.bias.resize(l.spec.out_ch);
                op.mult.resize(l.spec.out_ch);
                op.rshift.resize(l.spec.out_ch);
                const double sw_sx = static_cast<double>(op.w_q.scale) * op.in_q.scale;
                for (int c = 0; c < l.spec.out_ch; ++c) {
                    const double m_real = bn.a[c] * sw_sx / op.out_q.scale;
                    normalize_multiplier(m_real, op.mult[c], op.rshift[c]);
                    op.bias[c] =
                        static_cast<int32_t>(std::llround(bn.b[c] / (bn.a[c] * sw_sx)));
                }
                cur_q = op.out_q;
                ops.push_back(std::move(op));
                cur = static_cast<int>(ops.size()) - 1;
                i += 2; // bn and relu6 consumed
                break;
            }
            case LayerKind::maxpool: {
                QOp op;
                op.kind = QOp::Kind::maxpool;
                op.name = l.name;
                op.spec = l.spec;
                op.input = cur;
                op.in_q = cur_q;
                op.out_q = cur_q; // pooling preserves the representation
                ops.push_back(std::move(op));
                cur = static_cast<int>(ops.size()) - 1;
                break;
            }
            default:
                throw QuantError("unexpected layer in sequence: " + l.name);
        }
    }
    return cur;
}

} // namespace

size_t QuantizedGraph::weight_payload_bytes() const {
    size_t n = 0;
    for (const auto& op : ops) n += op.weights.size();
    return n;
}

size_t QuantizedGraph::metadata_bytes() const {
    size_t n = 0;
    for (const auto& op : ops) {
        n += 4 * (op.bias.size() + op.mult.size() + op.rshift.size() + op.mult2.size() +
                  op.rshift2.size());
        n += 2 * (4 + 4); // in/out scale + zero point
        if (op.dequant_output) n += 4;
    }
    return n;
}

// ---- calibration -------------------------------------------------------------

ActRanges calibrate_activations(const model::ModelGraph& g, nn::Params& params,
                                const data::DatasetManifest& calib, int n) {
    if (calib.frame_count() == 0) throw QuantError("empty calibration set");
    ActRanges ranges;
    auto observe = [&](const std::string& name, const Tensor& t, bool relu_bounded) {
        auto& r = ranges[name];
        auto it = ranges.find(name);
        bool fresh = it->second.lo == 0.0f && it->second.hi == 0.0f;
        float lo = r.lo, hi = r.hi;
        if (fresh) {
            lo = t.v.empty() ? 0.0f : t.v[0];
            hi = lo;
        }
        for (float v : t.v) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (relu_bounded) {
            lo = std::max(lo, 0.0f);
            hi = std::min(hi, 6.0f);
        }
        r.lo = lo;
        r.hi = hi;
    };

    auto run_seq = [&](const std::vector<LayerNode>& seq, Tensor x) {
        for (size_t i = 0; i < seq.size(); ++i) {
            const LayerNode& l = seq[i];
            switch (l.spec.kind) {
                case LayerKind::conv2d: x = nn::conv2d(x, params.at(l.name + ".w"), l.spec); break;
                case LayerKind::depthwise:
                    x = nn::depthwise_conv2d(x, params.at(l.name + ".w"), l.spec);
                    break;
                case LayerKind::pointwise:
                    x = nn::pointwise_conv2d(x, params.at(l.name + ".w"), l.spec);
                    break;
                case LayerKind::batchnorm:
                    x = nn::batchnorm(x, params.at(l.name + ".scale"), params.at(l.name + ".shift"),
                                      params.at(l.name + ".mean"), params.at(l.name + ".var"),
                                      nn::Mode::infer);
                    break;
                case LayerKind::relu6: {
                    x = nn::relu6(x);
                    // the producing conv is two layers back by construction
                    observe(seq[i - 2].name, x, true);
                    break;
                }
                case LayerKind::maxpool: {
                    x = nn::maxpool2x2(x);
                    observe(l.name, x, false);
                    break;
                }
                default: break;
            }
        }
        return x;
    };

    int used = 0;
    for (const auto& seq : calib.sequences) {
        for (const auto& fr : seq.frames) {
            if (used >= n) break;
            data::Sample s;
            s.image = data::load_frame(calib, seq, fr);
            Tensor x = train::frames_to_tensor({s});
            Tensor cur = run_seq(g.stem, std::move(x));
            for (int b = 0; b < 3; ++b) {
                Tensor block_in = cur;
                Tensor main_out = run_seq(g.blocks[b].main, std::move(cur));
                if (g.blocks[b].has_bypass) {
                    Tensor byp = run_seq(g.blocks[b].bypass, std::move(block_in));
                    for (size_t i = 0; i < main_out.size(); ++i) main_out.v[i] += byp.v[i];
                    observe("b" + std::to_string(b + 1) + ".add", main_out, false);
                }
                cur = std::move(main_out);
            }
            ++used;
        }
        if (used >= n) break;
    }
    return ranges;
}

// ---- model quantization --------------------------------------------------------

QuantizedGraph quantize_model(const model::ModelGraph& g, const nn::Params& params,
                              const ActRanges& ranges) {
    QuantizedGraph qg;
    qg.graph = g;
    qg.input_q.scale = 1.0f / 255.0f;
    qg.input_q.zero_point = 0;

    int cur = build_chain(qg.ops, g.stem, params, ranges, -1, qg.input_q);
    for (int b = 0; b < 3; ++b) {
        const int block_in = cur;
        const QParams block_in_q = block_in < 0 ? qg.input_q : qg.ops[block_in].out_q;
        int main_out = build_chain(qg.ops, g.blocks[b].main, params, ranges, block_in, block_in_q);
        if (g.blocks[b].has_bypass) {
            int byp_out =
                build_chain(qg.ops, g.blocks[b].bypass, params, ranges, block_in, block_in_q);
            const std::string add_name = "b" + std::to_string(b + 1) + ".add";
            auto rit = ranges.find(add_name);
            if (rit == ranges.end()) throw QuantError("uncalibrated layer: " + add_name);
            QOp op;
            op.kind = QOp::Kind::add;
            op.name = add_name;
            op.spec = qg.ops[main_out].spec; // same output geometry
            op.spec.kind = LayerKind::relu6; // placeholder non-conv kind
            op.input = main_out;
            op.add_rhs = byp_out;
            op.in_q = qg.ops[main_out].out_q;
            op.out_q = qparams_from_range(rit->second.lo, rit->second.hi);
            op.mult.resize(1);
            op.rshift.resize(1);
            op.mult2.resize(1);
            op.rshift2.resize(1);
            normalize_multiplier(qg.ops[main_out].out_q.scale / op.out_q.scale, op.mult[0],
                                 op.rshift[0]);
            normalize_multiplier(qg.ops[byp_out].out_q.scale / op.out_q.scale, op.mult2[0],
                                 op.rshift2[0]);
            op.rhs_zero_point = qg.ops[byp_out].out_q.zero_point;
            qg.ops.push_back(std::move(op));
            cur = static_cast<int>(qg.ops.size()) - 1;
        } else {
            cur = main_out;
        }
    }

    // heads: int8 weights, int32 bias, float dequantized output
    for (const LayerNode* head : {&g.head_yaw, &g.head_coll}) {
        QOp op;
        op.kind = QOp::Kind::fc;
        op.name = head->name;
        op.spec = head->spec;
        op.input = cur;
        op.in_q = qg.ops[cur].out_q;
        op.w_q = quantize_weights(params.at(head->name + ".w"), op.weights);
        const Tensor& b = params.at(head->name + ".b");
        op.dequant_output = true;
        op.dequant_scale = op.w_q.scale * op.in_q.scale;
        op.bias.resize(head->spec.out_ch);
        for (int c = 0; c < head->spec.out_ch; ++c)
            op.bias[c] = static_cast<int32_t>(std::llround(b.v[c] / op.dequant_scale));
        qg.ops.push_back(std::move(op));
    }
    return qg;
}

QuantizedGraph synthesize_for_shapes(const model::ModelGraph& g) {
    Rng rng(0);
    nn::Params params = nn::init_params(g, rng);
    ActRanges ranges;
    for (const auto* l : g.all_layers()) {
        const auto k = l->spec.kind;
        if (k == LayerKind::conv2d || k == LayerKind::depthwise || k == LayerKind::pointwise)
            ranges[l->name] = {0.0f, 6.0f};
    }
    for (int b = 0; b < 3; ++b)
        if (g.blocks[b].has_bypass) ranges["b" + std::to_string(b + 1) + ".add"] = {0.0f, 12.0f};
    return quantize_model(g, params, ranges);
}

// ---- integer execution -----------------------------------------------------------

namespace {

int32_t conv_accumulate(const QOp& op, const std::vector<uint8_t>& x, int oc, int oy, int ox) {
    const LayerSpec& s = op.spec;
    const int zw = op.w_q.zero_point, zx = op.in_q.zero_point;
    int32_t acc = 0;
    const int iy0 = oy * s.stride - s.pad, ix0 = ox * s.stride - s.pad;
    if (op.kind == QOp::Kind::depthwise) {
        const uint8_t* wp = op.weights.data() + static_cast<size_t>(oc) * s.kernel * s.kernel;
        const uint8_t* xp = x.data() + static_cast<size_t>(oc) * s.in_h * s.in_w;
        for (int ky = 0; ky < s.kernel; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= s.in_h) {
                // zero-valued real padding enters as the zero point, which
                // cancels: (zx - zx) * w = 0; skip entirely
                continue;
            }
            for (int kx = 0; kx < s.kernel; ++kx) {
                const int ix = ix0 + kx;
                if (ix < 0 || ix >= s.in_w) continue;
                acc += (static_cast<int>(wp[ky * s.kernel + kx]) - zw) *
                       (static_cast<int>(xp[iy * s.in_w + ix]) - zx);
            }
        }
        return acc;
    }
    for (int ic = 0; ic < s.in_ch; ++ic) {
        const uint8_t* wp =
            op.weights.data() + (static_cast<size_t>(oc) * s.in_ch + ic) * s.kernel * s.kernel;
        const uint8_t* xp = x.data() + static_cast<size_t>(ic) * s.in_h * s.in_w;
        for (int ky = 0; ky < s.kernel; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= s.in_h) continue;
            for (int kx = 0; kx < s.kernel; ++kx) {
                const int ix = ix0 + kx;
                if (ix < 0 || ix >= s.in_w) continue;
                acc += (static_cast<int>(wp[ky * s.kernel + kx]) - zw) *
                       (static_cast<int>(xp[iy * s.in_w + ix]) - zx);
            }
        }
    }
    return acc;
}

uint8_t requantize(int64_t acc_with_bias, int32_t mult, int32_t rshift, int zp) {
    const int64_t scaled = rounding_rshift(acc_with_bias * mult, rshift);
    return static_cast<uint8_t>(std::clamp(scaled + zp, int64_t{0}, int64_t{255}));
}

} // namespace

std::vector<uint8_t> run_qop(const QOp& op, const std::vector<uint8_t>& input,
                             const std::vector<uint8_t>& rhs) {
    const LayerSpec& s = op.spec;
    switch (op.kind) {
        case QOp::Kind::conv:
        case QOp::Kind::depthwise:
        case QOp::Kind::pointwise: {
            std::vector<uint8_t> out(op.out_elems());
            for (int oc = 0; oc < s.out_ch; ++oc) {
                uint8_t* op_out = out.data() + static_cast<size_t>(oc) * s.out_h * s.out_w;
                for (int oy = 0; oy < s.out_h; ++oy)
                    for (int ox = 0; ox < s.out_w; ++ox) {
                        const int64_t acc = conv_accumulate(op, input, oc, oy, ox) + op.bias[oc];
                        op_out[oy * s.out_w + ox] =
                            requantize(acc, op.mult[oc], op.rshift[oc], op.out_q.zero_point);
                    }
            }
            return out;
        }
        case QOp::Kind::maxpool: {
            std::vector<uint8_t> out(op.out_elems());
            for (int c = 0; c < s.out_ch; ++c) {
                const uint8_t* xp = input.data() + static_cast<size_t>(c) * s.in_h * s.in_w;
                uint8_t* yp = out.data() + static_cast<size_t>(c) * s.out_h * s.out_w;
                for (int oy = 0; oy < s.out_h; ++oy)
                    for (int ox = 0; ox < s.out_w; ++ox) {
                        uint8_t m = xp[(2 * oy) * s.in_w + 2 * ox];
                        m = std::max(m, xp[(2 * oy) * s.in_w + 2 * ox + 1]);
                        m = std::max(m, xp[(2 * oy + 1) * s.in_w + 2 * ox]);
                        m = std::max(m, xp[(2 * oy + 1) * s.in_w + 2 * ox + 1]);
                        yp[oy * s.out_w + ox] = m;
                    }
            }
            return out;
        }
        case QOp::Kind::add: {
            std::vector<uint8_t> out(input.size());
            const int za = op.in_q.zero_point;
            // rhs zero point rides in via its own rescale pair
            for (size_t i = 0; i < input.size(); ++i) {
                const int64_t a = rounding_rshift(
                    (static_cast<int64_t>(input[i]) - za) * op.mult[0], op.rshift[0]);
                // zero-point of the rhs producer is recovered from out_q of
                // that op; callers pass raw uint8 buffers
                const int64_t b = rounding_rshift(
                    (static_cast<int64_t>(rhs[i]) - op.rhs_zero_point) * op.mult2[0],
                    op.rshift2[0]);
                out[i] = static_cast<uint8_t>(
                    std::clamp(a + b + op.out_q.zero_point, int64_t{0}, int64_t{255}));
            }
            return out;
        }
        default:
            throw QuantError("run_qop: head ops produce floats");
    }
}

float run_qop_head(const QOp& op, const std::vector<uint8_t>& input) {
    const LayerSpec& s = op.spec;
    const int zw = op.w_q.zero_point, zx = op.in_q.zero_point;
    int64_t acc = 0;
    for (int i = 0; i < s.in_ch; ++i)
        acc += (static_cast<int>(op.weights[i]) - zw) * (static_cast<int>(input[i]) - zx);
    acc += op.bias[0];
    return static_cast<float>(acc) * op.dequant_scale;
}

QuantForwardResult quantized_forward(const QuantizedGraph& qg, const Image& img) {
    if (img.h != qg.graph.config.in_h || img.w != qg.graph.config.in_w)
        throw QuantError("quantized_forward: image size mismatch");
    std::vector<std::vector<uint8_t>> outs(qg.ops.size());
    std::vector<uint8_t> input(img.px); // pixels are already the quantized input
    QuantForwardResult r;
    float yaw_acc = 0, coll_acc = 0;
    int head_idx = 0;
    for (size_t i = 0; i < qg.ops.size(); ++i) {
        const QOp& op = qg.ops[i];
        const std::vector<uint8_t>& in = op.input < 0 ? input : outs[op.input];
        if (op.dequant_output) {
            const float v = run_qop_head(op, in);
            if (head_idx++ == 0)
                yaw_acc = v;
            else
                coll_acc = v;
            continue;
        }
        const std::vector<uint8_t> empty;
        outs[i] = run_qop(op, in, op.add_rhs >= 0 ? outs[op.add_rhs] : empty);
    }
    r.yaw = yaw_acc;
    r.p_coll = nn::sigmoid(coll_acc);
    return r;
}

// ---- comparison -----------------------------------------------------------------

CompareReport compare_fp32_int8(const model::ModelGraph& g, nn::Params& params,
                                const QuantizedGraph& qg, const data::DatasetManifest& manifest,
                                double threshold) {
    if (model::serialize(g) != model::serialize(qg.graph))
        throw QuantError("compare: architecture mismatch");
    CompareReport rep;
    double se_f = 0, se_q = 0, sum_dy = 0, sum_dp = 0;
    size_t correct_f = 0, correct_q = 0, n = 0;
    for (const auto& seq : manifest.sequences) {
        for (const auto& fr : seq.frames) {
            data::Sample s;
            s.image = data::load_frame(manifest, seq, fr);
            Tensor x = train::frames_to_tensor({s});
            auto rf = nn::model_forward(g, params, x, nn::Mode::infer);
            auto rq = quantized_forward(qg, s.image);
            const double dyf = rf.yaw[0] - fr.yaw_rate, dyq = rq.yaw - fr.yaw_rate;
            se_f += dyf * dyf;
            se_q += dyq * dyq;
            correct_f += ((rf.p_coll[0] >= threshold ? 1 : 0) == fr.collision);
            correct_q += ((rq.p_coll >= threshold ? 1 : 0) == fr.collision);
            const double ady = std::fabs(rf.yaw[0] - rq.yaw);
            const double adp = std::fabs(rf.p_coll[0] - rq.p_coll);
            sum_dy += ady;
            sum_dp += adp;
            rep.max_abs_dyaw = std::max(rep.max_abs_dyaw, ady);
            rep.max_abs_dp = std::max(rep.max_abs_dp, adp);
            ++n;
        }
    }
    if (n == 0) throw QuantError("compare: empty manifest");
    rep.float_rmse = std::sqrt(se_f / n);
    rep.int8_rmse = std::sqrt(se_q / n);
    rep.float_acc = static_cast<double>(correct_f) / n;
    rep.int8_acc = static_cast<double>(correct_q) / n;
    rep.mean_abs_dyaw = sum_dy / n;
    rep.mean_abs_dp = sum_dp / n;
    rep.rmse_delta_sign = rep.int8_rmse > rep.float_rmse ? 1 : (rep.int8_rmse < rep.float_rmse ? -1 : 0);
    return rep;
}

// ---- file io -----------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'D', 'R', 'N', 'Q', 'N', 'T', '1', '\0'};

template <typename T>
void wr(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T rd(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw QuantError("quantized model: truncated file");
    return v;
}
void wr_vec32(std::ofstream& f, const std::vector<int32_t>& v) {
    wr<uint32_t>(f, static_cast<uint32_t>(v.size()));
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
}
std::vector<int32_t> rd_vec32(std::ifstream& f) {
    const uint32_t n = rd<uint32_t>(f);
    std::vector<int32_t> v(n);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 4));
    if (!f) throw QuantError("quantized model: truncated file");
    return v;
}
} // namespace

void save_quantized(const QuantizedGraph& qg, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw QuantError("cannot write " + path);
    f.write(kMagic, 8);
    wr<uint32_t>(f, 1);
    const std::string gtext = model::serialize(qg.graph);
    wr<uint32_t>(f, static_cast<uint32_t>(gtext.size()));
    f.write(gtext.data(), static_cast<std::streamsize>(gtext.size()));
    wr<float>(f, qg.input_q.scale);
    wr<int32_t>(f, qg.input_q.zero_point);

    // header with every per-op description first, weight blob last
    wr<uint32_t>(f, static_cast<uint32_t>(qg.ops.size()));
    for (const auto& op : qg.ops) {
        wr<uint8_t>(f, static_cast<uint8_t>(op.kind));
        wr<uint16_t>(f, static_cast<uint16_t>(op.name.size()));
        f.write(op.name.data(), static_cast<std::streamsize>(op.name.size()));
        const int32_t spec[10] = {static_cast<int32_t>(op.spec.kind), op.spec.kernel,
                                  op.spec.stride,  op.spec.pad,    op.spec.in_ch, op.spec.out_ch,
                                  op.spec.in_h,    op.spec.in_w,   op.spec.out_h, op.spec.out_w};
        f.write(reinterpret_cast<const char*>(spec), sizeof(spec));
        wr<int32_t>(f, op.input);
        wr<int32_t>(f, op.add_rhs);
        wr<float>(f, op.w_q.scale);
        wr<int32_t>(f, op.w_q.zero_point);
        wr<float>(f, op.in_q.scale);
        wr<int32_t>(f, op.in_q.zero_point);
        wr<float>(f, op.out_q.scale);
        wr<int32_t>(f, op.out_q.zero_point);
        wr<uint8_t>(f, op.dequant_output ? 1 : 0);
        wr<float>(f, op.dequant_scale);
        wr_vec32(f, op.bias);
        wr_vec32(f, op.mult);
        wr_vec32(f, op.rshift);
        wr_vec32(f, op.mult2);
        wr_vec32(f, op.rshift2);
        wr<int32_t>(f, op.rhs_zero_point);
        wr<uint32_t>(f, static_cast<uint32_t>(op.weights.size()));
    }
    for (const auto& op : qg.ops)
        f.write(reinterpret_cast<const char*>(op.weights.data()),
                static_cast<std::streamsize>(op.weights.size()));
}

QuantizedGraph load_quantized(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw QuantError("cannot read " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) throw QuantError("bad quantized model magic");
    if (rd<uint32_t>(f) != 1) throw QuantError("unsupported quantized model version");
    const uint32_t glen = rd<uint32_t>(f);
    std::string gtext(glen, '\0');
    f.read(gtext.data(), glen);
    QuantizedGraph qg;
    qg.graph = model::parse_graph(gtext);
    qg.input_q.scale = rd<float>(f);
    qg.input_q.zero_point = rd<int32_t>(f);
    const uint32_t nops = rd<uint32_t>(f);
    std::vector<uint32_t> wlens(nops);
    for (uint32_t i = 0; i < nops; ++i) {
        QOp op;
        op.kind = static_cast<QOp::Kind>(rd<uint8_t>(f));
        const uint16_t len = rd<uint16_t>(f);
        op.name.resize(len);
        f.read(op.name.data(), len);
        int32_t spec[10];
        f.read(reinterpret_cast<char*>(spec), sizeof(spec));
        op.spec.kind = static_cast<LayerKind>(spec[0]);
        op.spec.kernel = spec[1];
        op.spec.stride = spec[2];
        op.spec.pad = spec[3];
        op.spec.in_ch = spec[4];
        op.spec.out_ch = spec[5];
        op.spec.in_h = spec[6];
        op.spec.in_w = spec[7];
        op.spec.out_h = spec[8];
        op.spec.out_w = spec[9];
        op.input = rd<int32_t>(f);
        op.add_rhs = rd<int32_t>(f);
        op.w_q.scale = rd<float>(f);
        op.w_q.zero_point = rd<int32_t>(f);
        op.in_q.scale = rd<float>(f);
        op.in_q.zero_point = rd<int32_t>(f);
        op.out_q.scale = rd<float>(f);
        op.out_q.zero_point = rd<int32_t>(f);
        op.dequant_output = rd<uint8_t>(f) != 0;
        op.dequant_scale = rd<float>(f);
        op.bias = rd_vec32(f);
        op.mult = rd_vec32(f);
        op.rshift = rd_vec32(f);
        op.mult2 = rd_vec32(f);
        op.rshift2 = rd_vec32(f);
        op.rhs_zero_point = rd<int32_t>(f);
        wlens[i] = rd<uint32_t>(f);
        qg.ops.push_back(std::move(op));
    }
    for (uint32_t i = 0; i < nops; ++i) {
        qg.ops[i].weights.resize(wlens[i]);
        f.read(reinterpret_cast<char*>(qg.ops[i].weights.data()), wlens[i]);
        if (!f) throw QuantError("quantized model: truncated weights");
    }
    return qg;
}

} // namespace dronet::quant
