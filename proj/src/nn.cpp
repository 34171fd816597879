#include "dronet/nn.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "dronet/parallel.hpp"

namespace dronet::nn {

Tensor& Params::at(const std::string& k) {
    auto it = t.find(k);
    if (it == t.end()) throw ShapeError("missing parameter: " + k);
    return it->second;
}

const Tensor& Params::at(const std::string& k) const {
    auto it = t.find(k);
    if (it == t.end()) throw ShapeError("missing parameter: " + k);
    return it->second;
}

Tensor& Params::get_or_zero(const std::string& k, const Tensor& like) {
    auto it = t.find(k);
    if (it == t.end()) {
        Tensor z(like.n, like.c, like.h, like.w);
        it = t.emplace(k, std::move(z)).first;
    }
    return it->second;
}

float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

namespace {

void check(bool ok, const char* msg) {
    if (!ok) throw ShapeError(msg);
}

Tensor he_uniform(int n, int c, int h, int w, int fan_in, Rng& rng) {
    Tensor t(n, c, h, w);
    float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (auto& v : t.v) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

} // namespace

Params init_params(const ModelGraph& g, Rng& rng) {
    Params p;
    for (const auto* l : g.all_layers()) {
        const auto& s = l->spec;
        switch (s.kind) {
            case LayerKind::conv2d:
                p.t[l->name + ".w"] =
                    he_uniform(s.out_ch, s.in_ch, s.kernel, s.kernel, s.kernel * s.kernel * s.in_ch, rng);
                break;
            case LayerKind::depthwise:
                p.t[l->name + ".w"] = he_uniform(s.out_ch, 1, s.kernel, s.kernel, s.kernel * s.kernel, rng);
                break;
            case LayerKind::pointwise:
                p.t[l->name + ".w"] = he_uniform(s.out_ch, s.in_ch, 1, 1, s.in_ch, rng);
                break;
            case LayerKind::fully_connected: {
                p.t[l->name + ".w"] = he_uniform(s.out_ch, s.in_ch, 1, 1, s.in_ch, rng);
                p.t[l->name + ".b"] = Tensor::vec(s.out_ch);
                break;
            }
            case LayerKind::batchnorm: {
                Tensor scale = Tensor::vec(s.out_ch);
                scale.fill(1.0f);
                Tensor var = Tensor::vec(s.out_ch);
                var.fill(1.0f);
                p.t[l->name + ".scale"] = scale;
                p.t[l->name + ".shift"] = Tensor::vec(s.out_ch);
                p.t[l->name + ".mean"] = Tensor::vec(s.out_ch);
                p.t[l->name + ".var"] = var;
                break;
            }
            default:
                break;
        }
    }
    return p;
}

std::vector<std::string> trainable_keys(const Params& p) {
    std::vector<std::string> keys;
    for (const auto& [k, v] : p.t) {
        if (k.size() > 5 && (k.ends_with(".mean") || k.ends_with(".var"))) continue;
        keys.push_back(k);
    }
    return keys;
}

// ---- kernels ------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const LayerSpec& spec) {
    check(x.c == spec.in_ch && x.h == spec.in_h && x.w == spec.in_w, "conv2d: input shape mismatch");
    check(w.n == spec.out_ch && w.c == spec.in_ch && w.h == spec.kernel && w.w == spec.kernel,
          "conv2d: weight shape mismatch");
    Tensor y(x.n, spec.out_ch, spec.out_h, spec.out_w);
    const int k = spec.kernel, st = spec.stride, pd = spec.pad;
    parallel_samples(x.n, [&](int n) {
        for (int oc = 0; oc < spec.out_ch; ++oc) {
            float* yp = y.plane(n, oc);
            for (int oy = 0; oy < spec.out_h; ++oy) {
                for (int ox = 0; ox < spec.out_w; ++ox) {
                    float acc = 0.0f;
                    const int iy0 = oy * st - pd, ix0 = ox * st - pd;
                    for (int ic = 0; ic < spec.in_ch; ++ic) {
                        const float* xp = x.plane(n, ic);
                        const float* wp = w.plane(oc, ic);
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= spec.in_h) continue;
                            const float* xrow = xp + static_cast<size_t>(iy) * spec.in_w;
                            const float* wrow = wp + static_cast<size_t>(ky) * k;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ix0 + kx;
                                if (ix < 0 || ix >= spec.in_w) continue;
                                acc += xrow[ix] * wrow[kx];
                            }
                        }
                    }
                    yp[static_cast<size_t>(oy) * spec.out_w + ox] = acc;
                }
            }
        }
    });
    return y;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const LayerSpec& spec) {
    check(spec.in_ch == spec.out_ch, "depthwise: in_ch != out_ch");
    check(x.c == spec.in_ch && x.h == spec.in_h && x.w == spec.in_w, "depthwise: input shape mismatch");
    check(w.n == spec.out_ch && w.c == 1 && w.h == spec.kernel, "depthwise: weight shape mismatch");
    Tensor y(x.n, spec.out_ch, spec.out_h, spec.out_w);
    const int k = spec.kernel, st = spec.stride, pd = spec.pad;
    parallel_samples(x.n, [&](int n) {
        for (int c = 0; c < spec.out_ch; ++c) {
            const float* xp = x.plane(n, c);
            const float* wp = w.plane(c, 0);
            float* yp = y.plane(n, c);
            for (int oy = 0; oy < spec.out_h; ++oy) {
                for (int ox = 0; ox < spec.out_w; ++ox) {
                    float acc = 0.0f;
                    const int iy0 = oy * st - pd, ix0 = ox * st - pd;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= spec.in_h) continue;
                        const float* xrow = xp + static_cast<size_t>(iy) * spec.in_w;
                        const float* wrow = wp + static_cast<size_t>(ky) * k;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= spec.in_w) continue;
                            acc += xrow[ix] * wrow[kx];
                        }
                    }
                    yp[static_cast<size_t>(oy) * spec.out_w + ox] = acc;
                }
            }
        }
    });
    return y;
}

Tensor pointwise_conv2d(const Tensor& x, const Tensor& w, const LayerSpec& spec) {
    check(x.c == spec.in_ch && x.h == spec.in_h && x.w == spec.in_w, "pointwise: input shape mismatch");
    check(w.n == spec.out_ch && w.c == spec.in_ch, "pointwise: weight shape mismatch");
    check(spec.stride == 1 && spec.kernel == 1, "pointwise: kernel/stride must be 1");
    Tensor y(x.n, spec.out_ch, spec.out_h, spec.out_w);
    const int plane = spec.in_h * spec.in_w;
    parallel_samples(x.n, [&](int n) {
        for (int oc = 0; oc < spec.out_ch; ++oc) {
            float* yp = y.plane(n, oc);
            const float* wrow = w.plane(oc, 0);
            for (int ic = 0; ic < spec.in_ch; ++ic) {
                const float wv = wrow[ic];
                const float* xp = x.plane(n, ic);
                for (int s = 0; s < plane; ++s) yp[s] += wv * xp[s];
            }
        }
    });
    return y;
}

Tensor batchnorm(const Tensor& x, const Tensor& scale, const Tensor& shift, Tensor& run_mean,
                 Tensor& run_var, Mode mode, BnState* state) {
    const int C = x.c;
    check(static_cast<int>(scale.size()) == C && static_cast<int>(shift.size()) == C,
          "batchnorm: affine size mismatch");
    Tensor y(x.n, x.c, x.h, x.w);
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    const size_t per_ch = static_cast<size_t>(x.n) * plane;

    std::vector<float> mean(C), inv_std(C);
    if (mode == Mode::infer) {
        for (int c = 0; c < C; ++c) {
            check(run_var.v[c] > 0.0f, "batchnorm: non-positive running variance");
            mean[c] = run_mean.v[c];
            inv_std[c] = 1.0f / std::sqrt(run_var.v[c] + kBnEps);
        }
    } else {
        check(x.n > 0, "batchnorm: zero-size batch in train mode");
        for (int c = 0; c < C; ++c) {
            double sum = 0.0, sq = 0.0;
            for (int n = 0; n < x.n; ++n) {
                const float* xp = x.plane(n, c);
                for (size_t s = 0; s < plane; ++s) {
                    sum += xp[s];
                    sq += static_cast<double>(xp[s]) * xp[s];
                }
            }
            const double m = sum / static_cast<double>(per_ch);
            double var = sq / static_cast<double>(per_ch) - m * m;
            if (var < 0.0) var = 0.0;
            mean[c] = static_cast<float>(m);
            inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + kBnEps));
            // running stats keep the unbiased variance, as is conventional
            double unbiased = per_ch > 1 ? var * static_cast<double>(per_ch) / (per_ch - 1.0) : var;
            run_mean.v[c] = (1.0f - kBnMomentum) * run_mean.v[c] + kBnMomentum * static_cast<float>(m);
            run_var.v[c] =
                (1.0f - kBnMomentum) * run_var.v[c] + kBnMomentum * static_cast<float>(unbiased);
        }
    }
    if (state) {
        state->batch_mean = mean;
        state->batch_inv_std = inv_std;
    }
    parallel_samples(x.n, [&](int n) {
        for (int c = 0; c < C; ++c) {
            const float* xp = x.plane(n, c);
            float* yp = y.plane(n, c);
            const float m = mean[c], is = inv_std[c], sc = scale.v[c], sh = shift.v[c];
            for (size_t s = 0; s < plane; ++s) yp[s] = (xp[s] - m) * is * sc + sh;
        }
    });
    return y;
}

Tensor relu6(const Tensor& x) {
    Tensor y(x.n, x.c, x.h, x.w);
    for (size_t i = 0; i < x.size(); ++i) {
        float v = x.v[i];
        y.v[i] = v < 0.0f ? 0.0f : (v > 6.0f ? 6.0f : v);
    }
    return y;
}

Tensor maxpool2x2(const Tensor& x, std::vector<int>* argmax) {
    const int oh = x.h / 2, ow = x.w / 2;
    check(oh > 0 && ow > 0, "maxpool: input too small");
    Tensor y(x.n, x.c, oh, ow);
    if (argmax) argmax->assign(y.size(), 0);
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < x.c; ++c) {
            const float* xp = x.plane(n, c);
            float* yp = y.plane(n, c);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    int best = (2 * oy) * x.w + 2 * ox;
                    float bv = xp[best];
                    const int cands[3] = {(2 * oy) * x.w + 2 * ox + 1, (2 * oy + 1) * x.w + 2 * ox,
                                          (2 * oy + 1) * x.w + 2 * ox + 1};
                    for (int cand : cands) {
                        if (xp[cand] > bv) {
                            bv = xp[cand];
                            best = cand;
                        }
                    }
                    yp[static_cast<size_t>(oy) * ow + ox] = bv;
                    if (argmax)
                        (*argmax)[y.idx(n, c, oy, ox)] =
                            static_cast<int>((static_cast<size_t>(n) * x.c + c) * x.h * x.w + best);
                }
            }
        }
    }
    return y;
}

Tensor fully_connected(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.h == 1 && x.w == 1, "fc: input must be flattened");
    check(w.c == x.c, "fc: weight/input mismatch");
    check(static_cast<int>(b.size()) == w.n, "fc: bias size mismatch");
    Tensor y(x.n, w.n, 1, 1);
    for (int n = 0; n < x.n; ++n) {
        const float* xp = x.plane(n, 0);
        for (int o = 0; o < w.n; ++o) {
            const float* wp = w.plane(o, 0);
            double acc = b.v[o];
            for (int i = 0; i < x.c; ++i) acc += static_cast<double>(wp[i]) * xp[i];
            y.at(n, o, 0, 0) = static_cast<float>(acc);
        }
    }
    return y;
}

// ---- backward -----------------------------------------------------------

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const LayerSpec& spec,
                     Tensor& dx, Tensor& dw) {
    dx = Tensor(x.n, x.c, x.h, x.w);
    dw = Tensor(w.n, w.c, w.h, w.w);
    const int k = spec.kernel, st = spec.stride, pd = spec.pad;
    parallel_samples(x.n, [&](int n) {
        for (int oc = 0; oc < spec.out_ch; ++oc) {
            const float* dyp = dy.plane(n, oc);
            for (int oy = 0; oy < spec.out_h; ++oy) {
                for (int ox = 0; ox < spec.out_w; ++ox) {
                    const float g = dyp[static_cast<size_t>(oy) * spec.out_w + ox];
                    if (g == 0.0f) continue;
                    const int iy0 = oy * st - pd, ix0 = ox * st - pd;
                    for (int ic = 0; ic < spec.in_ch; ++ic) {
                        float* dxp = dx.plane(n, ic);
                        const float* wp = w.plane(oc, ic);
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= spec.in_h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ix0 + kx;
                                if (ix < 0 || ix >= spec.in_w) continue;
                                dxp[static_cast<size_t>(iy) * spec.in_w + ix] +=
                                    g * wp[static_cast<size_t>(ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    });
    // weight gradient accumulated serially over samples for determinism
    for (int n = 0; n < x.n; ++n) {
        for (int oc = 0; oc < spec.out_ch; ++oc) {
            const float* dyp = dy.plane(n, oc);
            for (int oy = 0; oy < spec.out_h; ++oy) {
                for (int ox = 0; ox < spec.out_w; ++ox) {
                    const float g = dyp[static_cast<size_t>(oy) * spec.out_w + ox];
                    if (g == 0.0f) continue;
                    const int iy0 = oy * st - pd, ix0 = ox * st - pd;
                    for (int ic = 0; ic < spec.in_ch; ++ic) {
                        const float* xp = x.plane(n, ic);
                        float* dwp = dw.plane(oc, ic);
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= spec.in_h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ix0 + kx;
                                if (ix < 0 || ix >= spec.in_w) continue;
                                dwp[static_cast<size_t>(ky) * k + kx] +=
                                    g * xp[static_cast<size_t>(iy) * spec.in_w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

void depthwise_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const LayerSpec& spec,
                        Tensor& dx, Tensor& dw) {
    dx = Tensor(x.n, x.c, x.h, x.w);
    dw = Tensor(w.n, w.c, w.h, w.w);
    const int k = spec.kernel, st = spec.stride, pd = spec.pad;
    parallel_samples(x.n, [&](int n) {
        for (int c = 0; c < spec.out_ch; ++c) {
            const float* dyp = dy.plane(n, c);
            const float* wp = w.plane(c, 0);
            float* dxp = dx.plane(n, c);
            for (int oy = 0; oy < spec.out_h; ++oy) {
                for (int ox = 0; ox < spec.out_w; ++ox) {
                    const float g = dyp[static_cast<size_t>(oy) * spec.out_w + ox];
                    if (g == 0.0f) continue;
                    const int iy0 = oy * st - pd, ix0 = ox * st - pd;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= spec.in_h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= spec.in_w) continue;
                            dxp[static_cast<size_t>(iy) * spec.in_w + ix] +=
                                g * wp[static_cast<size_t>(ky) * k + kx];
                        }
                    }
                }
            }
        }
    });
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < spec.out_ch; ++c) {
            const float* dyp = dy.plane(n, c);
            const float* xp = x.plane(n, c);
            float* dwp = dw.plane(c, 0);
            for (int oy = 0; oy < spec.out_h; ++oy) {
                for (int ox = 0; ox < spec.out_w; ++ox) {
                    const float g = dyp[static_cast<size_t>(oy) * spec.out_w + ox];
                    if (g == 0.0f) continue;
                    const int iy0 = oy * st - pd, ix0 = ox * st - pd;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= spec.in_h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= spec.in_w) continue;
                            dwp[static_cast<size_t>(ky) * k + kx] +=
                                g * xp[static_cast<size_t>(iy) * spec.in_w + ix];
                        }
                    }
                }
            }
        }
    }
}

void pointwise_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const LayerSpec& spec,
                        Tensor& dx, Tensor& dw) {
    dx = Tensor(x.n, x.c, x.h, x.w);
    dw = Tensor(w.n, w.c, 1, 1);
    const int plane = spec.in_h * spec.in_w;
    parallel_samples(x.n, [&](int n) {
        for (int oc = 0; oc < spec.out_ch; ++oc) {
            const float* dyp = dy.plane(n, oc);
            const float* wrow = w.plane(oc, 0);
            for (int ic = 0; ic < spec.in_ch; ++ic) {
                float* dxp = dx.plane(n, ic);
                const float wv = wrow[ic];
                for (int s = 0; s < plane; ++s) dxp[s] += wv * dyp[s];
            }
        }
    });
    for (int n = 0; n < x.n; ++n) {
        for (int oc = 0; oc < spec.out_ch; ++oc) {
            const float* dyp = dy.plane(n, oc);
            float* dwrow = dw.plane(oc, 0);
            for (int ic = 0; ic < spec.in_ch; ++ic) {
                const float* xp = x.plane(n, ic);
                float acc = 0.0f;
                for (int s = 0; s < plane; ++s) acc += dyp[s] * xp[s];
                dwrow[ic] += acc;
            }
        }
    }
}

void batchnorm_backward(const Tensor& x, const Tensor& scale, const BnState& st, const Tensor& dy,
                        Tensor& dx, Tensor& dscale, Tensor& dshift) {
    const int C = x.c;
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    const double N = static_cast<double>(x.n) * plane;
    dx = Tensor(x.n, x.c, x.h, x.w);
    dscale = Tensor::vec(C);
    dshift = Tensor::vec(C);
    for (int c = 0; c < C; ++c) {
        const float m = st.batch_mean[c], is = st.batch_inv_std[c], sc = scale.v[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const float* xp = x.plane(n, c);
            const float* dyp = dy.plane(n, c);
            for (size_t s = 0; s < plane; ++s) {
                const float xhat = (xp[s] - m) * is;
                sum_dy += dyp[s];
                sum_dy_xhat += static_cast<double>(dyp[s]) * xhat;
            }
        }
        dshift.v[c] = static_cast<float>(sum_dy);
        dscale.v[c] = static_cast<float>(sum_dy_xhat);
        const float k1 = static_cast<float>(sum_dy / N);
        const float k2 = static_cast<float>(sum_dy_xhat / N);
        for (int n = 0; n < x.n; ++n) {
            const float* xp = x.plane(n, c);
            const float* dyp = dy.plane(n, c);
            float* dxp = dx.plane(n, c);
            for (size_t s = 0; s < plane; ++s) {
                const float xhat = (xp[s] - m) * is;
                dxp[s] = sc * is * (dyp[s] - k1 - xhat * k2);
            }
        }
    }
}

Tensor relu6_backward(const Tensor& x, const Tensor& dy) {
    Tensor dx(x.n, x.c, x.h, x.w);
    for (size_t i = 0; i < x.size(); ++i)
        dx.v[i] = (x.v[i] > 0.0f && x.v[i] < 6.0f) ? dy.v[i] : 0.0f;
    return dx;
}

Tensor maxpool_backward(const std::vector<int>& argmax, const Tensor& dy, int in_h, int in_w) {
    Tensor dx(dy.n, dy.c, in_h, in_w);
    for (size_t i = 0; i < dy.size(); ++i) dx.v[argmax[i]] += dy.v[i];
    return dx;
}

void fully_connected_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx,
                              Tensor& dw, Tensor& db) {
    dx = Tensor(x.n, x.c, 1, 1);
    dw = Tensor(w.n, w.c, 1, 1);
    db = Tensor::vec(w.n);
    for (int n = 0; n < x.n; ++n) {
        const float* xp = x.plane(n, 0);
        float* dxp = dx.plane(n, 0);
        for (int o = 0; o < w.n; ++o) {
            const float g = dy.at(n, o, 0, 0);
            db.v[o] += g;
            const float* wp = w.plane(o, 0);
            float* dwp = dw.plane(o, 0);
            for (int i = 0; i < x.c; ++i) {
                dwp[i] += g * xp[i];
                dxp[i] += g * wp[i];
            }
        }
    }
}

// ---- whole model ---------------------------------------------------------

namespace {

Tensor eval_sequence(const std::vector<LayerNode>& seq, Tensor x, Params& p, Mode mode,
                     ForwardTrace* trace) {
    for (const auto& l : seq) {
        LayerTrace lt;
        const bool want_trace = trace != nullptr;
        switch (l.spec.kind) {
            case LayerKind::conv2d: {
                if (want_trace) lt.input = x;
                x = conv2d(x, p.at(l.name + ".w"), l.spec);
                break;
            }
            case LayerKind::depthwise: {
                if (want_trace) lt.input = x;
                x = depthwise_conv2d(x, p.at(l.name + ".w"), l.spec);
                break;
            }
            case LayerKind::pointwise: {
                if (want_trace) lt.input = x;
                x = pointwise_conv2d(x, p.at(l.name + ".w"), l.spec);
                break;
            }
            case LayerKind::batchnorm: {
                if (want_trace) lt.input = x;
                x = batchnorm(x, p.at(l.name + ".scale"), p.at(l.name + ".shift"),
                              p.at(l.name + ".mean"), p.at(l.name + ".var"), mode,
                              want_trace ? &lt.bn : nullptr);
                break;
            }
            case LayerKind::relu6: {
                if (want_trace) lt.input = x;
                x = relu6(x);
                break;
            }
            case LayerKind::maxpool: {
                x = maxpool2x2(x, want_trace ? &lt.argmax : nullptr);
                break;
            }
            default:
                throw ShapeError("unexpected layer in sequence: " + l.name);
        }
        if (want_trace) {
            trace->layer[l.name] = std::move(lt);
            trace->layer_count++;
        }
    }
    return x;
}

Tensor flatten(const Tensor& x) {
    Tensor f(x.n, x.c * x.h * x.w, 1, 1);
    f.v = x.v;
    return f;
}

Tensor backward_sequence(const std::vector<LayerNode>& seq, const Params& p,
                         const ForwardTrace& trace, Tensor dy, Params& grads) {
    for (auto it = seq.rbegin(); it != seq.rend(); ++it) {
        const auto& l = *it;
        const auto lt_it = trace.layer.find(l.name);
        if (lt_it == trace.layer.end()) throw ShapeError("missing trace for " + l.name);
        const LayerTrace& lt = lt_it->second;
        switch (l.spec.kind) {
            case LayerKind::conv2d: {
                Tensor dx, dw;
                conv2d_backward(lt.input, p.at(l.name + ".w"), dy, l.spec, dx, dw);
                auto& acc = grads.get_or_zero(l.name + ".w", dw);
                for (size_t i = 0; i < dw.size(); ++i) acc.v[i] += dw.v[i];
                dy = std::move(dx);
                break;
            }
            case LayerKind::depthwise: {
                Tensor dx, dw;
                depthwise_backward(lt.input, p.at(l.name + ".w"), dy, l.spec, dx, dw);
                auto& acc = grads.get_or_zero(l.name + ".w", dw);
                for (size_t i = 0; i < dw.size(); ++i) acc.v[i] += dw.v[i];
                dy = std::move(dx);
                break;
            }
            case LayerKind::pointwise: {
                Tensor dx, dw;
                pointwise_backward(lt.input, p.at(l.name + ".w"), dy, l.spec, dx, dw);
                auto& acc = grads.get_or_zero(l.name + ".w", dw);
                for (size_t i = 0; i < dw.size(); ++i) acc.v[i] += dw.v[i];
                dy = std::move(dx);
                break;
            }
            case LayerKind::batchnorm: {
                Tensor dx, dscale, dshift;
                batchnorm_backward(lt.input, p.at(l.name + ".scale"), lt.bn, dy, dx, dscale, dshift);
                auto& as = grads.get_or_zero(l.name + ".scale", dscale);
                for (size_t i = 0; i < dscale.size(); ++i) as.v[i] += dscale.v[i];
                auto& ash = grads.get_or_zero(l.name + ".shift", dshift);
                for (size_t i = 0; i < dshift.size(); ++i) ash.v[i] += dshift.v[i];
                dy = std::move(dx);
                break;
            }
            case LayerKind::relu6: {
                dy = relu6_backward(lt.input, dy);
                break;
            }
            case LayerKind::maxpool: {
                dy = maxpool_backward(lt.argmax, dy, l.spec.in_h, l.spec.in_w);
                break;
            }
            default:
                throw ShapeError("unexpected layer in sequence: " + l.name);
        }
    }
    return dy;
}

} // namespace

ForwardResult model_forward(const ModelGraph& g, Params& p, const Tensor& x, Mode mode,
                            ForwardTrace* trace) {
    check(x.c == g.config.in_ch && x.h == g.config.in_h && x.w == g.config.in_w,
          "model_forward: input shape mismatch");
    Tensor cur = eval_sequence(g.stem, x, p, mode, trace);
    for (const auto& blk : g.blocks) {
        Tensor block_in = cur;
        Tensor main_out = eval_sequence(blk.main, std::move(cur), p, mode, trace);
        if (blk.has_bypass) {
            Tensor byp_out = eval_sequence(blk.bypass, block_in, p, mode, trace);
            check(main_out.same_shape(byp_out), "bypass/main output shape mismatch");
            for (size_t i = 0; i < main_out.size(); ++i) main_out.v[i] += byp_out.v[i];
        }
        cur = std::move(main_out);
    }
    Tensor flat = flatten(cur);
    if (trace) trace->head_input = flat;
    Tensor yaw = fully_connected(flat, p.at("head.yaw.w"), p.at("head.yaw.b"));
    Tensor coll = fully_connected(flat, p.at("head.coll.w"), p.at("head.coll.b"));
    ForwardResult r;
    r.yaw.resize(x.n);
    r.p_coll.resize(x.n);
    for (int n = 0; n < x.n; ++n) {
        r.yaw[n] = yaw.at(n, 0, 0, 0);
        r.p_coll[n] = sigmoid(coll.at(n, 0, 0, 0));
    }
    if (trace) trace->p_coll = r.p_coll;
    return r;
}

Params model_backward(const ModelGraph& g, const Params& p, const ForwardTrace& trace,
                      const std::vector<float>& dyaw, const std::vector<float>& dp) {
    const Tensor& flat = trace.head_input;
    check(!flat.empty(), "model_backward: trace missing (run forward with trace)");
    const int N = flat.n;
    check(static_cast<int>(dyaw.size()) == N && static_cast<int>(dp.size()) == N,
          "model_backward: loss gradient size mismatch");

    Params grads;
    Tensor dy_yaw(N, 1, 1, 1), dy_coll(N, 1, 1, 1);
    for (int n = 0; n < N; ++n) {
        dy_yaw.at(n, 0, 0, 0) = dyaw[n];
        const float pc = trace.p_coll[n];
        dy_coll.at(n, 0, 0, 0) = dp[n] * pc * (1.0f - pc); // chain through sigmoid
    }
    Tensor dflat_yaw, dw, db, dflat_coll;
    fully_connected_backward(flat, p.at("head.yaw.w"), dy_yaw, dflat_yaw, dw, db);
    grads.t["head.yaw.w"] = dw;
    grads.t["head.yaw.b"] = db;
    fully_connected_backward(flat, p.at("head.coll.w"), dy_coll, dflat_coll, dw, db);
    grads.t["head.coll.w"] = dw;
    grads.t["head.coll.b"] = db;
    for (size_t i = 0; i < dflat_yaw.size(); ++i) dflat_yaw.v[i] += dflat_coll.v[i];

    // reshape to the last block's output shape
    const auto& last_main = g.blocks[2].main.back();
    Tensor dcur(N, last_main.spec.out_ch, last_main.spec.out_h, last_main.spec.out_w);
    dcur.v = dflat_yaw.v;

    for (int b = 2; b >= 0; --b) {
        const auto& blk = g.blocks[b];
        Tensor dmain = backward_sequence(blk.main, p, trace, dcur, grads);
        if (blk.has_bypass) {
            Tensor dbyp = backward_sequence(blk.bypass, p, trace, dcur, grads);
            for (size_t i = 0; i < dmain.size(); ++i) dmain.v[i] += dbyp.v[i];
        }
        dcur = std::move(dmain);
    }
    backward_sequence(g.stem, p, trace, dcur, grads);
    return grads;
}

// ---- checkpoint io --------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'D', 'R', 'N', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw ShapeError("checkpoint: truncated file");
    return v;
}
} // namespace

void save_checkpoint(const Params& p, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ShapeError("checkpoint: cannot write " + path);
    f.write(kCkptMagic, 8);
    write_pod<uint32_t>(f, 1); // version
    write_pod<uint32_t>(f, static_cast<uint32_t>(p.t.size()));
    for (const auto& [name, t] : p.t) {
        write_pod<uint16_t>(f, static_cast<uint16_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        const uint32_t dims[4] = {static_cast<uint32_t>(t.n), static_cast<uint32_t>(t.c),
                                  static_cast<uint32_t>(t.h), static_cast<uint32_t>(t.w)};
        f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
        f.write(reinterpret_cast<const char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    }
}

Params load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ShapeError("checkpoint: cannot read " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCkptMagic, 8) != 0) throw ShapeError("checkpoint: bad magic");
    const uint32_t version = read_pod<uint32_t>(f);
    if (version != 1) throw ShapeError("checkpoint: unsupported version");
    const uint32_t count = read_pod<uint32_t>(f);
    Params p;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t len = read_pod<uint16_t>(f);
        std::string name(len, '\0');
        f.read(name.data(), len);
        uint32_t dims[4];
        f.read(reinterpret_cast<char*>(dims), sizeof(dims));
        if (!f) throw ShapeError("checkpoint: truncated file");
        Tensor t(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                 static_cast<int>(dims[3]));
        f.read(reinterpret_cast<char*>(t.v.data()),
               static_cast<std::streamsize>(t.v.size() * sizeof(float)));
        if (!f) throw ShapeError("checkpoint: truncated tensor " + name);
        p.t[name] = std::move(t);
    }
    return p;
}

} // namespace dronet::nn
