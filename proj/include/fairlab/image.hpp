#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace fairlab {

// Square RGB image, channel-major (plane R, plane G, plane B), values in [0,1].
struct Image {
    int size = 0;  // height == width
    std::vector<float> px;

    Image() = default;
    explicit Image(int n) : size(n), px(static_cast<std::size_t>(3) * n * n, 0.0f) {}

    float& at(int c, int y, int x) { return px[(static_cast<std::size_t>(c) * size + y) * size + x]; }
    float at(int c, int y, int x) const {
        return px[(static_cast<std::size_t>(c) * size + y) * size + x];
    }
};

inline float luminance_bt601(float r, float g, float b) {
    return 0.299f * r + 0.587f * g + 0.114f * b;
}

// Hue angle in [0,1), saturation and value in [0,1] -> RGB.
inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    const float hh = h * 6.0f;
    const int sector = std::min(5, static_cast<int>(hh));
    const float f = hh - static_cast<float>(sector);
    const float p = v * (1.0f - s);
    const float q = v * (1.0f - s * f);
    const float t = v * (1.0f - s * (1.0f - f));
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

inline Image flip_horizontal(const Image& in) {
    Image out(in.size);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < in.size; ++y)
            for (int x = 0; x < in.size; ++x) out.at(c, y, x) = in.at(c, y, in.size - 1 - x);
    return out;
}

inline void clamp01(Image& img) {
    for (auto& v : img.px) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace fairlab
