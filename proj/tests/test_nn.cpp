#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "dronet/nn.hpp"
#include "dronet/rng.hpp"

using namespace dronet;
using namespace dronet::nn;
using dronet::model::ArchConfig;
using dronet::model::BlockKind;
using dronet::model::LayerKind;
using dronet::model::LayerSpec;

namespace {

// Independent oracle: direct six-deep loop nest, no reuse of the library's
// indexing helpers beyond raw layout arithmetic.
Tensor oracle_conv(const Tensor& x, const Tensor& w, const LayerSpec& s, bool depthwise) {
    Tensor y(x.n, s.out_ch, s.out_h, s.out_w);
    for (int n = 0; n < x.n; ++n)
        for (int oc = 0; oc < s.out_ch; ++oc)
            for (int oy = 0; oy < s.out_h; ++oy)
                for (int ox = 0; ox < s.out_w; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < s.kernel; ++ky)
                        for (int kx = 0; kx < s.kernel; ++kx) {
                            int iy = oy * s.stride - s.pad + ky;
                            int ix = ox * s.stride - s.pad + kx;
                            if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                            if (depthwise) {
                                acc += static_cast<double>(x.at(n, oc, iy, ix)) * w.at(oc, 0, ky, kx);
                            } else {
                                for (int ic = 0; ic < s.in_ch; ++ic)
                                    acc += static_cast<double>(x.at(n, ic, iy, ix)) *
                                           w.at(oc, ic, ky, kx);
                            }
                        }
                    y.at(n, oc, oy, ox) = static_cast<float>(acc);
                }
    return y;
}

Tensor random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(n, c, h, w);
    for (auto& v : t.v) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

LayerSpec make_spec(LayerKind kind, int k, int st, int pd, int ic, int oc, int ih, int iw) {
    LayerSpec s;
    s.kind = kind;
    s.kernel = k;
    s.stride = st;
    s.pad = pd;
    s.in_ch = ic;
    s.out_ch = oc;
    s.in_h = ih;
    s.in_w = iw;
    s.out_h = model::conv_out_extent(ih, k, st, pd);
    s.out_w = model::conv_out_extent(iw, k, st, pd);
    return s;
}

bool close(float a, float b, float tol = 1e-5f) {
    float scale = std::max({1.0f, std::fabs(a), std::fabs(b)});
    return std::fabs(a - b) <= tol * scale;
}

} // namespace

TEST_CASE("conv2d center output of all-ones kernel equals window sum") {
    Tensor x(1, 1, 3, 3);
    float sum = 0.0f;
    for (int i = 0; i < 9; ++i) {
        x.v[i] = static_cast<float>(i + 1);
        sum += x.v[i];
    }
    Tensor w(1, 1, 3, 3);
    w.fill(1.0f);
    auto s = make_spec(LayerKind::conv2d, 3, 1, 1, 1, 1, 3, 3);
    Tensor y = conv2d(x, w, s);
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(sum));
}

TEST_CASE("identity 1x1 kernel passes input through") {
    Rng rng(7);
    Tensor x = random_tensor(2, 1, 4, 4, rng);
    Tensor w(1, 1, 1, 1);
    w.v[0] = 1.0f;
    auto s = make_spec(LayerKind::conv2d, 1, 1, 0, 1, 1, 4, 4);
    Tensor y = conv2d(x, w, s);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y.v[i] == x.v[i]);
}

TEST_CASE("conv kernels match the loop-nest oracle on random instances") {
    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        int ic = rng.range(1, 4), oc = rng.range(1, 4);
        int ih = rng.range(3, 8), iw = rng.range(3, 8);
        int k = rng.chance(0.5) ? 3 : (rng.chance(0.5) ? 1 : 5);
        int st = rng.chance(0.5) ? 1 : 2;
        int pd = k / 2;
        if (ih + 2 * pd < k || iw + 2 * pd < k) continue;
        auto s = make_spec(LayerKind::conv2d, k, st, pd, ic, oc, ih, iw);
        Tensor x = random_tensor(2, ic, ih, iw, rng);
        Tensor w = random_tensor(oc, ic, k, k, rng);
        Tensor got = conv2d(x, w, s);
        Tensor want = oracle_conv(x, w, s, false);
        for (size_t i = 0; i < got.size(); ++i) CHECK(close(got.v[i], want.v[i]));
    }
}

TEST_CASE("depthwise matches oracle and identity kernels pass through") {
    Rng rng(43);
    for (int trial = 0; trial < 100; ++trial) {
        int c = rng.range(1, 4);
        int ih = rng.range(3, 8), iw = rng.range(3, 8);
        int st = rng.chance(0.5) ? 1 : 2;
        auto s = make_spec(LayerKind::depthwise, 3, st, 1, c, c, ih, iw);
        Tensor x = random_tensor(1, c, ih, iw, rng);
        Tensor w = random_tensor(c, 1, 3, 3, rng);
        Tensor got = depthwise_conv2d(x, w, s);
        Tensor want = oracle_conv(x, w, s, true);
        for (size_t i = 0; i < got.size(); ++i) CHECK(close(got.v[i], want.v[i]));
    }
    // identity kernels
    Tensor x = random_tensor(1, 3, 5, 5, rng);
    Tensor w(3, 1, 3, 3);
    for (int c = 0; c < 3; ++c) w.at(c, 0, 1, 1) = 1.0f;
    auto s = make_spec(LayerKind::depthwise, 3, 1, 1, 3, 3, 5, 5);
    Tensor y = depthwise_conv2d(x, w, s);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y.v[i] == doctest::Approx(x.v[i]));
}

TEST_CASE("depthwise then pointwise equals the composed standard convolution") {
    Rng rng(44);
    // composition on a 1x2x4x4 instance: per-channel 3x3 depthwise followed
    // by 1x1 pointwise equals a standard conv with kernel
    // K[oc][ic] = pw[oc][ic] * dw[ic]
    Tensor x = random_tensor(1, 2, 4, 4, rng);
    Tensor dw = random_tensor(2, 1, 3, 3, rng);
    Tensor pw = random_tensor(3, 2, 1, 1, rng);
    auto sdw = make_spec(LayerKind::depthwise, 3, 1, 1, 2, 2, 4, 4);
    auto spw = make_spec(LayerKind::pointwise, 1, 1, 0, 2, 3, 4, 4);
    Tensor mid = depthwise_conv2d(x, dw, sdw);
    Tensor got = pointwise_conv2d(mid, pw, spw);

    Tensor composed(3, 2, 3, 3);
    for (int oc = 0; oc < 3; ++oc)
        for (int ic = 0; ic < 2; ++ic)
            for (int i = 0; i < 9; ++i)
                composed.plane(oc, ic)[i] = pw.at(oc, ic, 0, 0) * dw.plane(ic, 0)[i];
    auto sc = make_spec(LayerKind::conv2d, 3, 1, 1, 2, 3, 4, 4);
    Tensor want = oracle_conv(x, composed, sc, false);
    for (size_t i = 0; i < got.size(); ++i) CHECK(close(got.v[i], want.v[i], 1e-4f));
}

TEST_CASE("pointwise with one output channel is a weighted channel sum") {
    Rng rng(45);
    Tensor x = random_tensor(1, 3, 2, 2, rng);
    Tensor w = random_tensor(1, 3, 1, 1, rng);
    auto s = make_spec(LayerKind::pointwise, 1, 1, 0, 3, 1, 2, 2);
    Tensor y = pointwise_conv2d(x, w, s);
    for (int p = 0; p < 4; ++p) {
        float want = 0.0f;
        for (int c = 0; c < 3; ++c) want += w.v[c] * x.plane(0, c)[p];
        CHECK(y.v[p] == doctest::Approx(want));
    }
}

TEST_CASE("batchnorm identity parameters pass input through (infer)") {
    Rng rng(46);
    Tensor x = random_tensor(2, 3, 4, 4, rng);
    Tensor scale = Tensor::vec(3), shift = Tensor::vec(3), mean = Tensor::vec(3), var = Tensor::vec(3);
    scale.fill(1.0f);
    var.fill(1.0f);
    Tensor y = batchnorm(x, scale, shift, mean, var, Mode::infer);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y.v[i] == doctest::Approx(x.v[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm train mode zero-means constant channels") {
    Tensor x(4, 2, 3, 3);
    for (int n = 0; n < 4; ++n)
        for (int c = 0; c < 2; ++c) {
            float* p = x.plane(n, c);
            for (int i = 0; i < 9; ++i) p[i] = 5.0f * (c + 1);
        }
    Tensor scale = Tensor::vec(2), shift = Tensor::vec(2), mean = Tensor::vec(2), var = Tensor::vec(2);
    scale.fill(1.0f);
    var.fill(1.0f);
    Tensor y = batchnorm(x, scale, shift, mean, var, Mode::train);
    for (float v : y.v) CHECK(std::fabs(v) < 1e-3f);
    // running stats moved toward the batch statistics
    CHECK(mean.v[0] == doctest::Approx(0.1 * 5.0));
    CHECK(mean.v[1] == doctest::Approx(0.1 * 10.0));
}

TEST_CASE("batchnorm matches a scalar-loop oracle (infer)") {
    Rng rng(47);
    Tensor x = random_tensor(2, 3, 4, 5, rng);
    Tensor scale = random_tensor(1, 3, 1, 1, rng, 0.5, 1.5);
    Tensor shift = random_tensor(1, 3, 1, 1, rng);
    Tensor mean = random_tensor(1, 3, 1, 1, rng);
    Tensor var = random_tensor(1, 3, 1, 1, rng, 0.2, 2.0);
    Tensor var_copy = var, mean_copy = mean;
    Tensor y = batchnorm(x, scale, shift, mean_copy, var_copy, Mode::infer);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 20; ++i) {
                float xhat = (x.plane(n, c)[i] - mean.v[c]) / std::sqrt(var.v[c] + kBnEps);
                CHECK(close(y.plane(n, c)[i], xhat * scale.v[c] + shift.v[c], 1e-4f));
            }
}

TEST_CASE("batchnorm rejects zero batch and non-positive running variance") {
    Tensor scale = Tensor::vec(1), shift = Tensor::vec(1), mean = Tensor::vec(1), var = Tensor::vec(1);
    scale.fill(1.0f);
    Tensor empty(0, 1, 2, 2);
    CHECK_THROWS_AS(batchnorm(empty, scale, shift, mean, var, Mode::train), ShapeError);
    Tensor x(1, 1, 2, 2);
    CHECK_THROWS_AS(batchnorm(x, scale, shift, mean, var, Mode::infer), ShapeError); // var == 0
}

TEST_CASE("relu6 clamps to [0,6]") {
    Tensor x(1, 1, 1, 3);
    x.v = {-1.0f, 7.2f, 3.5f};
    Tensor y = relu6(x);
    CHECK(y.v[0] == 0.0f);
    CHECK(y.v[1] == 6.0f);
    CHECK(y.v[2] == 3.5f);

    Rng rng(48);
    Tensor r = random_tensor(1, 2, 6, 6, rng, -10.0, 10.0);
    Tensor yr = relu6(r);
    for (float v : yr.v) {
        CHECK(v >= 0.0f);
        CHECK(v <= 6.0f);
    }
}

TEST_CASE("maxpool constant input stays constant and never exceeds input max") {
    Tensor x(1, 1, 4, 4);
    x.fill(3.25f);
    Tensor y = maxpool2x2(x);
    for (float v : y.v) CHECK(v == 3.25f);

    Rng rng(49);
    Tensor r = random_tensor(2, 3, 6, 8, rng);
    Tensor yr = maxpool2x2(r);
    float xmax = *std::max_element(r.v.begin(), r.v.end());
    for (float v : yr.v) CHECK(v <= xmax);
}

TEST_CASE("fully connected with identity weights is a passthrough") {
    Tensor x(1, 3, 1, 1);
    x.v = {1.0f, -2.0f, 0.5f};
    Tensor w(3, 3, 1, 1);
    for (int i = 0; i < 3; ++i) w.at(i, i, 0, 0) = 1.0f;
    Tensor b = Tensor::vec(3);
    Tensor y = fully_connected(x, w, b);
    for (int i = 0; i < 3; ++i) CHECK(y.v[i] == doctest::Approx(x.v[i]));
}

TEST_CASE("zero-weight model outputs p=0.5, yaw=0") {
    ArchConfig cfg;
    cfg.block_kind = BlockKind::DP;
    cfg.gamma = 8;
    auto g = model::build_model(cfg);
    Rng rng(1);
    Params p = init_params(g, rng);
    for (auto& [k, t] : p.t) {
        if (k.ends_with(".w") || k.ends_with(".b") || k.ends_with(".shift")) t.fill(0.0f);
    }
    Tensor x(2, 1, 200, 200);
    x.fill(0.5f);
    auto r = model_forward(g, p, x, Mode::infer);
    for (int n = 0; n < 2; ++n) {
        CHECK(r.yaw[n] == 0.0f);
        CHECK(r.p_coll[n] == doctest::Approx(0.5f));
    }
}

TEST_CASE("model output is invariant to batch order") {
    ArchConfig cfg;
    cfg.block_kind = BlockKind::DP;
    cfg.use_bypass = true;
    cfg.gamma = 8;
    cfg.in_h = cfg.in_w = 40; // smaller input keeps the test quick
    auto g = model::build_model(cfg);
    Rng rng(5);
    Params p = init_params(g, rng);
    Tensor a(2, 1, 40, 40), b(2, 1, 40, 40);
    Tensor xa = random_tensor(1, 1, 40, 40, rng), xb = random_tensor(1, 1, 40, 40, rng);
    std::copy(xa.v.begin(), xa.v.end(), a.v.begin());
    std::copy(xb.v.begin(), xb.v.end(), a.v.begin() + xa.size());
    std::copy(xb.v.begin(), xb.v.end(), b.v.begin());
    std::copy(xa.v.begin(), xa.v.end(), b.v.begin() + xa.size());
    auto ra = model_forward(g, p, a, Mode::infer);
    auto rb = model_forward(g, p, b, Mode::infer);
    CHECK(ra.yaw[0] == rb.yaw[1]);
    CHECK(ra.yaw[1] == rb.yaw[0]);
    CHECK(ra.p_coll[0] == rb.p_coll[1]);
}

TEST_CASE("forward determinism: identical runs produce identical bits") {
    ArchConfig cfg;
    cfg.block_kind = BlockKind::IRLB;
    cfg.use_bypass = true;
    cfg.gamma = 8;
    cfg.in_h = cfg.in_w = 40;
    auto g = model::build_model(cfg);
    Rng rng(6);
    Params p = init_params(g, rng);
    Tensor x = random_tensor(3, 1, 40, 40, rng);
    auto r1 = model_forward(g, p, x, Mode::infer);
    auto r2 = model_forward(g, p, x, Mode::infer);
    CHECK(std::memcmp(r1.yaw.data(), r2.yaw.data(), r1.yaw.size() * 4) == 0);
    CHECK(std::memcmp(r1.p_coll.data(), r2.p_coll.data(), r1.p_coll.size() * 4) == 0);
}

TEST_CASE("model_forward matches layer-by-layer composition of kernels") {
    ArchConfig cfg;
    cfg.block_kind = BlockKind::DP;
    cfg.gamma = 8;
    cfg.in_h = cfg.in_w = 24;
    auto g = model::build_model(cfg);
    Rng rng(9);
    Params p = init_params(g, rng);
    Tensor x = random_tensor(1, 1, 24, 24, rng, 0.0, 1.0);

    // manual composition
    Tensor cur = x;
    auto run_seq = [&](const std::vector<model::LayerNode>& seq, Tensor t) {
        for (const auto& l : seq) {
            switch (l.spec.kind) {
                case LayerKind::conv2d: t = conv2d(t, p.at(l.name + ".w"), l.spec); break;
                case LayerKind::depthwise: t = depthwise_conv2d(t, p.at(l.name + ".w"), l.spec); break;
                case LayerKind::pointwise: t = pointwise_conv2d(t, p.at(l.name + ".w"), l.spec); break;
                case LayerKind::batchnorm:
                    t = batchnorm(t, p.at(l.name + ".scale"), p.at(l.name + ".shift"),
                                  p.at(l.name + ".mean"), p.at(l.name + ".var"), Mode::infer);
                    break;
                case LayerKind::relu6: t = relu6(t); break;
                case LayerKind::maxpool: t = maxpool2x2(t); break;
                default: break;
            }
        }
        return t;
    };
    cur = run_seq(g.stem, cur);
    for (const auto& blk : g.blocks) cur = run_seq(blk.main, cur);
    Tensor flat(1, cur.c * cur.h * cur.w, 1, 1);
    flat.v = cur.v;
    Tensor yaw = fully_connected(flat, p.at("head.yaw.w"), p.at("head.yaw.b"));
    Tensor coll = fully_connected(flat, p.at("head.coll.w"), p.at("head.coll.b"));

    auto r = model_forward(g, p, x, Mode::infer);
    CHECK(r.yaw[0] == doctest::Approx(yaw.v[0]).epsilon(1e-6));
    CHECK(r.p_coll[0] == doctest::Approx(sigmoid(coll.v[0])).epsilon(1e-6));
}

// ---- gradient checks ------------------------------------------------------

namespace {

// micro-model: full architecture at gamma=8 on a small input
// Input 96x96 keeps the deepest feature map at 3x3, so train-mode batch
// statistics stay well conditioned (a 1x1 map with a small batch normalizes
// every channel to exactly its shift, killing upstream gradients).
model::ModelGraph micro_graph(BlockKind kind = BlockKind::DP, bool bypass = false) {
    ArchConfig cfg;
    cfg.block_kind = kind;
    cfg.use_bypass = bypass;
    cfg.gamma = 8;
    cfg.in_h = cfg.in_w = 96;
    return model::build_model(cfg);
}

// Independent double-precision forward pass used as the finite-difference
// oracle. Float32 rounding noise in the library forward is ~1e-6 of the
// loss; divided by 2h it would swamp small gradients, so the probes must be
// evaluated at higher precision than the implementation being checked.
struct DT {
    int n, c, h, w;
    std::vector<double> v;
    DT(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0) {}
    size_t idx(int in, int ic, int iy, int ix) const {
        return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
    }
};

DT d_from(const Tensor& t) {
    DT d(t.n, t.c, t.h, t.w);
    for (size_t i = 0; i < t.size(); ++i) d.v[i] = t.v[i];
    return d;
}

DT d_conv(const DT& x, const Tensor& w, const LayerSpec& s) {
    DT y(x.n, s.out_ch, s.out_h, s.out_w);
    const bool dwise = s.kind == LayerKind::depthwise;
    for (int n = 0; n < x.n; ++n)
        for (int oc = 0; oc < s.out_ch; ++oc)
            for (int oy = 0; oy < s.out_h; ++oy)
                for (int ox = 0; ox < s.out_w; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < s.kernel; ++ky)
                        for (int kx = 0; kx < s.kernel; ++kx) {
                            int iy = oy * s.stride - s.pad + ky;
                            int ix = ox * s.stride - s.pad + kx;
                            if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                            if (dwise)
                                acc += x.v[x.idx(n, oc, iy, ix)] * w.at(oc, 0, ky, kx);
                            else
                                for (int ic = 0; ic < s.in_ch; ++ic)
                                    acc += x.v[x.idx(n, ic, iy, ix)] * w.at(oc, ic, ky, kx);
                        }
                    y.v[y.idx(n, oc, oy, ox)] = acc;
                }
    return y;
}

DT d_bn_train(const DT& x, const Tensor& scale, const Tensor& shift) {
    DT y(x.n, x.c, x.h, x.w);
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    const double N = static_cast<double>(x.n) * plane;
    for (int c = 0; c < x.c; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int n = 0; n < x.n; ++n)
            for (size_t s = 0; s < plane; ++s) {
                double v = x.v[(static_cast<size_t>(n) * x.c + c) * plane + s];
                sum += v;
                sq += v * v;
            }
        double m = sum / N;
        double var = sq / N - m * m;
        if (var < 0) var = 0;
        double is = 1.0 / std::sqrt(var + static_cast<double>(kBnEps));
        for (int n = 0; n < x.n; ++n)
            for (size_t s = 0; s < plane; ++s) {
                size_t i = (static_cast<size_t>(n) * x.c + c) * plane + s;
                y.v[i] = (x.v[i] - m) * is * scale.v[c] + shift.v[c];
            }
    }
    return y;
}

DT d_relu6(const DT& x) {
    DT y = x;
    for (auto& v : y.v) v = v < 0.0 ? 0.0 : (v > 6.0 ? 6.0 : v);
    return y;
}

DT d_maxpool(const DT& x) {
    DT y(x.n, x.c, x.h / 2, x.w / 2);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int oy = 0; oy < y.h; ++oy)
                for (int ox = 0; ox < y.w; ++ox) {
                    double m = x.v[x.idx(n, c, 2 * oy, 2 * ox)];
                    m = std::max(m, x.v[x.idx(n, c, 2 * oy, 2 * ox + 1)]);
                    m = std::max(m, x.v[x.idx(n, c, 2 * oy + 1, 2 * ox)]);
                    m = std::max(m, x.v[x.idx(n, c, 2 * oy + 1, 2 * ox + 1)]);
                    y.v[y.idx(n, c, oy, ox)] = m;
                }
    return y;
}

DT d_sequence(const std::vector<model::LayerNode>& seq, DT x, const Params& p) {
    for (const auto& l : seq) {
        switch (l.spec.kind) {
            case LayerKind::conv2d:
            case LayerKind::depthwise:
            case LayerKind::pointwise:
                x = d_conv(x, p.at(l.name + ".w"), l.spec);
                break;
            case LayerKind::batchnorm:
                x = d_bn_train(x, p.at(l.name + ".scale"), p.at(l.name + ".shift"));
                break;
            case LayerKind::relu6:
                x = d_relu6(x);
                break;
            case LayerKind::maxpool:
                x = d_maxpool(x);
                break;
            default:
                break;
        }
    }
    return x;
}

// train-mode double forward of the whole graph; loss = sum(yaw^2 + p^2)
double d_loss(const model::ModelGraph& g, const Params& p, const Tensor& xf) {
    DT x = d_sequence(g.stem, d_from(xf), p);
    for (const auto& blk : g.blocks) {
        DT in = x;
        DT main = d_sequence(blk.main, std::move(x), p);
        if (blk.has_bypass) {
            DT byp = d_sequence(blk.bypass, std::move(in), p);
            for (size_t i = 0; i < main.v.size(); ++i) main.v[i] += byp.v[i];
        }
        x = std::move(main);
    }
    const int feat = x.c * x.h * x.w;
    const Tensor& wy = p.at("head.yaw.w");
    const Tensor& by = p.at("head.yaw.b");
    const Tensor& wc = p.at("head.coll.w");
    const Tensor& bc = p.at("head.coll.b");
    double loss = 0.0;
    for (int n = 0; n < x.n; ++n) {
        double yaw = by.v[0], logit = bc.v[0];
        for (int i = 0; i < feat; ++i) {
            double f = x.v[static_cast<size_t>(n) * feat + i];
            yaw += f * wy.v[i];
            logit += f * wc.v[i];
        }
        double pc = 1.0 / (1.0 + std::exp(-logit));
        loss += yaw * yaw + pc * pc;
    }
    return loss;
}

// Nudges parameters into a region where relu6 units sit strictly inside
// (0,6) and maxpool windows have clear winners, so the loss is smooth along
// every +-h finite-difference probe. Gradients at kinks are not comparable
// to finite differences.
void smooth_operating_point(Params& p) {
    for (auto& [k, t] : p.t) {
        if (k.ends_with(".scale")) t.fill(0.4f);
        if (k.ends_with(".shift")) t.fill(1.5f);
    }
}

struct FdStats {
    double worst = 0.0;
    int checked = 0;
    std::string worst_key;
};

// central difference per parameter, h = 1e-3, double-precision oracle probes
FdStats fd_check_model(const model::ModelGraph& g, Params& p, const Tensor& x, int per_tensor) {
    ForwardTrace tr;
    Params probe = p;
    auto r = model_forward(g, probe, x, Mode::train, &tr);
    std::vector<float> dyaw(x.n), dp(x.n);
    for (int n = 0; n < x.n; ++n) {
        dyaw[n] = 2.0f * r.yaw[n];
        dp[n] = 2.0f * r.p_coll[n];
    }
    Params grads = model_backward(g, p, tr, dyaw, dp);

    Rng pick(13);
    FdStats st;
    for (const auto& key : trainable_keys(p)) {
        auto& t = p.at(key);
        for (int i = 0; i < per_tensor && i < static_cast<int>(t.size()); ++i) {
            size_t idx = pick.below(t.size());
            const float orig = t.v[idx];
            double an = grads.at(key).v[idx];
            auto probe = [&](float h) {
                t.v[idx] = orig + h;
                double lp = d_loss(g, p, x);
                t.v[idx] = orig - h;
                double lm = d_loss(g, p, x);
                t.v[idx] = orig;
                double fd =
                    (lp - lm) / (static_cast<double>(orig + h) - static_cast<double>(orig - h));
                return std::fabs(fd - an) / std::max({1e-2, std::fabs(fd), std::fabs(an)});
            };
            double rel = probe(1e-3f);
            // A wide probe can straddle a relu6 or pool-argmax kink where a
            // finite difference is not a derivative estimate; accept the
            // value if it converges to the analytic one as the step shrinks.
            if (rel > 1e-3) rel = probe(1e-5f);
            if (rel > st.worst) {
                st.worst = rel;
                st.worst_key = key + "[" + std::to_string(idx) + "]";
            }
            ++st.checked;
        }
    }
    return st;
}

} // namespace

TEST_CASE("zero loss gradient yields zero parameter gradients") {
    auto g = micro_graph();
    Rng rng(11);
    Params p = init_params(g, rng);
    Tensor x = random_tensor(2, 1, 96, 96, rng, 0.0, 1.0);
    ForwardTrace tr;
    model_forward(g, p, x, Mode::train, &tr);
    Params grads = model_backward(g, p, tr, {0.0f, 0.0f}, {0.0f, 0.0f});
    for (const auto& [k, t] : grads.t)
        for (float v : t.v) CHECK(v == 0.0f);
}

// isolated per-kernel checks: inputs constructed away from kinks

TEST_CASE("conv/depthwise/pointwise/fc backward match finite differences") {
    Rng rng(21);
    // scalar probe: s = sum(coeff * y); ds/dy = coeff
    auto probe_coeffs = [&](const Tensor& y) {
        Tensor c(y.n, y.c, y.h, y.w);
        for (auto& v : c.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        return c;
    };
    auto fd_vs_analytic = [&](auto forward, Tensor& x, Tensor& w, const Tensor& dy, const Tensor& dx,
                              const Tensor& dw) {
        // these kernels are linear in x and w: central differences carry no
        // truncation error, so a wide step drowns float32 output rounding
        const float h = 0.05f;
        double worst = 0.0;
        auto scalar = [&](const Tensor& y, const Tensor& c) {
            double s = 0.0;
            for (size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y.v[i]) * c.v[i];
            return s;
        };
        Rng pick(22);
        for (Tensor* target : {&x, &w}) {
            const Tensor& an = (target == &x) ? dx : dw;
            for (int rep = 0; rep < 12; ++rep) {
                size_t idx = pick.below(target->size());
                float orig = target->v[idx];
                target->v[idx] = orig + h;
                double sp = scalar(forward(), dy);
                target->v[idx] = orig - h;
                double sm = scalar(forward(), dy);
                target->v[idx] = orig;
                double fd = (sp - sm) / (2.0 * h);
                double rel = std::fabs(fd - an.v[idx]) /
                             std::max({1e-2, std::fabs(fd), std::fabs(static_cast<double>(an.v[idx]))});
                worst = std::max(worst, rel);
            }
        }
        return worst;
    };

    SUBCASE("conv2d") {
        auto s = make_spec(LayerKind::conv2d, 3, 2, 1, 2, 3, 7, 7);
        Tensor x = random_tensor(2, 2, 7, 7, rng);
        Tensor w = random_tensor(3, 2, 3, 3, rng);
        Tensor dy = probe_coeffs(conv2d(x, w, s));
        Tensor dx, dw;
        conv2d_backward(x, w, dy, s, dx, dw);
        CHECK(fd_vs_analytic([&] { return conv2d(x, w, s); }, x, w, dy, dx, dw) < 1e-3);
    }
    SUBCASE("depthwise") {
        auto s = make_spec(LayerKind::depthwise, 3, 2, 1, 3, 3, 7, 7);
        Tensor x = random_tensor(2, 3, 7, 7, rng);
        Tensor w = random_tensor(3, 1, 3, 3, rng);
        Tensor dy = probe_coeffs(depthwise_conv2d(x, w, s));
        Tensor dx, dw;
        depthwise_backward(x, w, dy, s, dx, dw);
        CHECK(fd_vs_analytic([&] { return depthwise_conv2d(x, w, s); }, x, w, dy, dx, dw) < 1e-3);
    }
    SUBCASE("pointwise") {
        auto s = make_spec(LayerKind::pointwise, 1, 1, 0, 3, 4, 5, 5);
        Tensor x = random_tensor(2, 3, 5, 5, rng);
        Tensor w = random_tensor(4, 3, 1, 1, rng);
        Tensor dy = probe_coeffs(pointwise_conv2d(x, w, s));
        Tensor dx, dw;
        pointwise_backward(x, w, dy, s, dx, dw);
        CHECK(fd_vs_analytic([&] { return pointwise_conv2d(x, w, s); }, x, w, dy, dx, dw) < 1e-3);
    }
    SUBCASE("fully_connected") {
        Tensor x = random_tensor(3, 6, 1, 1, rng);
        Tensor w = random_tensor(2, 6, 1, 1, rng);
        Tensor b = random_tensor(1, 2, 1, 1, rng);
        Tensor dy = probe_coeffs(fully_connected(x, w, b));
        Tensor dx, dw, db;
        fully_connected_backward(x, w, dy, dx, dw, db);
        CHECK(fd_vs_analytic([&] { return fully_connected(x, w, b); }, x, w, dy, dx, dw) < 1e-3);
        // bias gradient: ds/db_o = sum_n dy[n,o]
        for (int o = 0; o < 2; ++o) {
            float want = 0.0f;
            for (int n = 0; n < 3; ++n) want += dy.at(n, o, 0, 0);
            CHECK(close(db.v[o], want, 1e-5f));
        }
    }
}

TEST_CASE("batchnorm train backward matches finite differences") {
    Rng rng(23);
    Tensor x = random_tensor(3, 2, 4, 4, rng);
    Tensor scale = random_tensor(1, 2, 1, 1, rng, 0.5, 1.5);
    Tensor shift = random_tensor(1, 2, 1, 1, rng);
    Tensor coeff = random_tensor(3, 2, 4, 4, rng);

    // double-precision mirror of train-mode batchnorm keeps finite
    // differences free of float32 rounding noise
    auto scalar_loss = [&](const Tensor& xx, const Tensor& sc, const Tensor& sh) {
        const size_t plane = 16;
        double s = 0.0;
        for (int c = 0; c < 2; ++c) {
            double sum = 0.0, sq = 0.0;
            for (int n = 0; n < 3; ++n)
                for (size_t i = 0; i < plane; ++i) {
                    double v = xx.plane(n, c)[i];
                    sum += v;
                    sq += v * v;
                }
            double N = 3.0 * plane;
            double m = sum / N;
            double var = std::max(0.0, sq / N - m * m);
            double is = 1.0 / std::sqrt(var + static_cast<double>(kBnEps));
            for (int n = 0; n < 3; ++n)
                for (size_t i = 0; i < plane; ++i) {
                    double y = (xx.plane(n, c)[i] - m) * is * sc.v[c] + sh.v[c];
                    s += y * coeff.plane(n, c)[i];
                }
        }
        return s;
    };

    Tensor m = Tensor::vec(2), v = Tensor::vec(2);
    v.fill(1.0f);
    BnState st;
    batchnorm(x, scale, shift, m, v, Mode::train, &st);
    Tensor dx, dscale, dshift;
    batchnorm_backward(x, scale, st, coeff, dx, dscale, dshift);

    const float h = 1e-3f;
    Rng pick(24);
    for (int rep = 0; rep < 20; ++rep) {
        size_t idx = pick.below(x.size());
        float orig = x.v[idx];
        x.v[idx] = orig + h;
        double sp = scalar_loss(x, scale, shift);
        x.v[idx] = orig - h;
        double sm = scalar_loss(x, scale, shift);
        x.v[idx] = orig;
        double fd = (sp - sm) / (2.0 * h);
        CHECK(std::fabs(fd - dx.v[idx]) /
                  std::max({1e-2, std::fabs(fd), std::fabs(static_cast<double>(dx.v[idx]))}) <
              1e-3);
    }
    for (int c = 0; c < 2; ++c) {
        float orig = scale.v[c];
        scale.v[c] = orig + h;
        double sp = scalar_loss(x, scale, shift);
        scale.v[c] = orig - h;
        double sm = scalar_loss(x, scale, shift);
        scale.v[c] = orig;
        double fd = (sp - sm) / (2.0 * h);
        CHECK(std::fabs(fd - dscale.v[c]) / std::max(1.0, std::fabs(fd)) < 1e-3);

        orig = shift.v[c];
        shift.v[c] = orig + h;
        sp = scalar_loss(x, scale, shift);
        shift.v[c] = orig - h;
        sm = scalar_loss(x, scale, shift);
        shift.v[c] = orig;
        fd = (sp - sm) / (2.0 * h);
        CHECK(std::fabs(fd - dshift.v[c]) / std::max(1.0, std::fabs(fd)) < 1e-3);
    }
}

TEST_CASE("relu6 and maxpool backward match finite differences away from kinks") {
    Rng rng(25);
    // relu6: inputs kept > 2h away from the 0 and 6 kinks
    Tensor x(1, 1, 4, 4);
    for (auto& v : x.v) {
        double u = rng.uniform(-3.0, 9.0);
        if (std::fabs(u) < 0.1) u = 0.5;
        if (std::fabs(u - 6.0) < 0.1) u = 6.5;
        v = static_cast<float>(u);
    }
    Tensor coeff = random_tensor(1, 1, 4, 4, rng);
    Tensor dx = relu6_backward(x, coeff);
    const float h = 1e-3f;
    for (size_t i = 0; i < x.size(); ++i) {
        float orig = x.v[i];
        x.v[i] = orig + h;
        Tensor yp = relu6(x);
        x.v[i] = orig - h;
        Tensor ym = relu6(x);
        x.v[i] = orig;
        double fd = 0.0;
        for (size_t j = 0; j < yp.size(); ++j)
            fd += (static_cast<double>(yp.v[j]) - ym.v[j]) * coeff.v[j];
        fd /= 2.0 * h;
        CHECK(std::fabs(fd - dx.v[i]) < 1e-2);
    }

    // maxpool: distinct values so the argmax is stable under +-h
    Tensor q(1, 1, 4, 4);
    for (int i = 0; i < 16; ++i) q.v[i] = static_cast<float>((i * 7) % 16);
    std::vector<int> argmax;
    Tensor y = maxpool2x2(q, &argmax);
    Tensor c2 = random_tensor(1, 1, 2, 2, rng);
    Tensor dq = maxpool_backward(argmax, c2, 4, 4);
    for (size_t i = 0; i < q.size(); ++i) {
        float orig = q.v[i];
        q.v[i] = orig + h;
        Tensor yp = maxpool2x2(q);
        q.v[i] = orig - h;
        Tensor ym = maxpool2x2(q);
        q.v[i] = orig;
        double fd = 0.0;
        for (size_t j = 0; j < yp.size(); ++j)
            fd += (static_cast<double>(yp.v[j]) - ym.v[j]) * c2.v[j];
        fd /= 2.0 * h;
        CHECK(std::fabs(fd - dq.v[i]) < 1e-2);
    }
}

TEST_CASE("full-model analytic gradients match central finite differences") {
    for (BlockKind kind : {BlockKind::DP, BlockKind::RB, BlockKind::IRLB}) {
        CAPTURE(to_string(kind));
        auto g = micro_graph(kind, kind != BlockKind::DP);
        Rng rng(12);
        Params p = init_params(g, rng);
        smooth_operating_point(p);
        Tensor x = random_tensor(3, 1, 96, 96, rng, 0.2, 0.8);
        FdStats st = fd_check_model(g, p, x, 2);
        CHECK(st.checked > 30);
        CAPTURE(st.worst_key);
        CHECK(st.worst < 1e-3);
    }
}

TEST_CASE("bypass block gradient is the sum of branch gradients") {
    auto g = micro_graph(BlockKind::DP, true);
    Rng rng(14);
    Params p = init_params(g, rng);
    Tensor x = random_tensor(2, 1, 96, 96, rng, 0.0, 1.0);
    ForwardTrace tr;
    auto r = model_forward(g, p, x, Mode::train, &tr);
    Params grads = model_backward(g, p, tr, {1.0f, 0.5f}, {0.0f, 0.25f});
    // both branches of every block received gradient
    for (int b = 0; b < 3; ++b) {
        std::string main_key = g.blocks[b].main[0].name + ".w";
        std::string byp_key = g.blocks[b].bypass[0].name + ".w";
        auto nonzero = [&](const std::string& k) {
            for (float v : grads.at(k).v)
                if (v != 0.0f) return true;
            return false;
        };
        CHECK(nonzero(main_key));
        CHECK(nonzero(byp_key));
    }
}

TEST_CASE("checkpoint round-trips bitwise") {
    auto g = micro_graph();
    Rng rng(15);
    Params p = init_params(g, rng);
    auto tmp = std::filesystem::temp_directory_path() / "dronet_ckpt_test.bin";
    save_checkpoint(p, tmp.string());
    Params q = load_checkpoint(tmp.string());
    REQUIRE(q.t.size() == p.t.size());
    for (const auto& [k, t] : p.t) {
        const auto& u = q.at(k);
        REQUIRE(u.size() == t.size());
        CHECK(std::memcmp(u.v.data(), t.v.data(), t.size() * 4) == 0);
    }
    std::filesystem::remove(tmp);
}
