#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mlsr/common.hpp"
#include "mlsr/tensor.hpp"

namespace mlsr {

// 3-channel RGB raster, CHW layout, values in [0, 1].
struct Image {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<float> data;  // 3 * height * width

    static Image sized(std::int64_t h, std::int64_t w) {
        Image img;
        img.height = h;
        img.width = w;
        img.data.assign(static_cast<std::size_t>(3 * h * w), 0.0f);
        return img;
    }

    float& at(std::int64_t c, std::int64_t y, std::int64_t x) {
        return data[static_cast<std::size_t>((c * height + y) * width + x)];
    }
    float at(std::int64_t c, std::int64_t y, std::int64_t x) const {
        return data[static_cast<std::size_t>((c * height + y) * width + x)];
    }

    Tensor<float> to_tensor() const { return Tensor<float>(Shape{3, height, width}, data); }

    static Image from_tensor(const Tensor<float>& t, bool clip = true);
};

Image crop(const Image& img, std::int64_t x0, std::int64_t y0, std::int64_t w, std::int64_t h);
Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
Image rotate90(const Image& img);  // one quarter turn, counterclockwise

// Separable bicubic resampling (Catmull-Rom, a = -0.5). When shrinking, the
// kernel widens by the scale ratio for antialiasing. Edges clamp; the result
// is clipped to [0, 1].
Image bicubic_resize(const Image& img, std::int64_t out_h, std::int64_t out_w);

// BT.601 studio-range luma on the 0..255 scale: Y = 16 + 65.481 R + 128.553 G + 24.966 B.
std::vector<float> rgb_to_y(const Image& img);

}  // namespace mlsr
