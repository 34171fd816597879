#pragma once
#include <cassert>
#include <cstddef>
#include <vector>

namespace dronet::nn {

// Dense float32 tensor, fixed (batch, channel, row, col) layout.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0f) {}

    static Tensor vec(int len) { return Tensor(1, len, 1, 1); }

    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    size_t idx(int in, int ic, int iy, int ix) const {
        return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
    }
    float& at(int in, int ic, int iy, int ix) { return v[idx(in, ic, iy, ix)]; }
    float at(int in, int ic, int iy, int ix) const { return v[idx(in, ic, iy, ix)]; }

    float* plane(int in, int ic) { return v.data() + (static_cast<size_t>(in) * c + ic) * h * w; }
    const float* plane(int in, int ic) const {
        return v.data() + (static_cast<size_t>(in) * c + ic) * h * w;
    }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    void fill(float x) { std::fill(v.begin(), v.end(), x); }
};

} // namespace dronet::nn
