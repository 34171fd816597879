#pragma once
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dronet {

// 8-bit grayscale frame, row 0 at the top.
struct Image {
    int h = 0, w = 0;
    std::vector<uint8_t> px;

    Image() = default;
    Image(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), px(static_cast<size_t>(h_) * w_, fill) {}

    uint8_t& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }
};

struct ImageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// binary portable graymap (P5, maxval 255)
void save_pgm(const Image& img, const std::string& path);
Image load_pgm(const std::string& path);

} // namespace dronet
