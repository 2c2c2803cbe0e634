#include "mlsr/image.hpp"

#include <algorithm>
#include <cmath>

namespace mlsr {

Image Image::from_tensor(const Tensor<float>& t, bool clip) {
    if (t.ndim() != 3 || t.dim(0) != 3) {
        throw DimError("Image::from_tensor: expected (3,h,w), got " + shape_str(t.shape()));
    }
    Image img = Image::sized(t.dim(1), t.dim(2));
    const auto src = t.data();
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = clip ? std::clamp(src[i], 0.0f, 1.0f) : src[i];
    }
    return img;
}

Image crop(const Image& img, std::int64_t x0, std::int64_t y0, std::int64_t w, std::int64_t h) {
    if (x0 < 0 || y0 < 0 || x0 + w > img.width || y0 + h > img.height) {
        throw UsageError("crop: window out of bounds");
    }
    Image out = Image::sized(h, w);
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < h; ++y) {
            const float* src = &img.data[((c * img.height) + y0 + y) * img.width + x0];
            float* dst = &out.data[(c * h + y) * w];
            std::copy(src, src + w, dst);
        }
    }
    return out;
}

Image flip_horizontal(const Image& img) {
    Image out = Image::sized(img.height, img.width);
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < img.height; ++y) {
            for (std::int64_t x = 0; x < img.width; ++x) {
                out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
            }
        }
    }
    return out;
}

Image flip_vertical(const Image& img) {
    Image out = Image::sized(img.height, img.width);
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < img.height; ++y) {
            for (std::int64_t x = 0; x < img.width; ++x) {
                out.at(c, y, x) = img.at(c, img.height - 1 - y, x);
            }
        }
    }
    return out;
}

Image rotate90(const Image& img) {
    Image out = Image::sized(img.width, img.height);
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < img.height; ++y) {
            for (std::int64_t x = 0; x < img.width; ++x) {
                out.at(c, img.width - 1 - x, y) = img.at(c, y, x);
            }
        }
    }
    return out;
}

namespace {

// Catmull-Rom family cubic, a = -0.5.
double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

struct Taps {
    std::int64_t start = 0;
    std::vector<double> weights;
};

// Per output coordinate: contributing source indices and normalized weights.
// Kernel support scales with the downscale ratio (antialias); indices clamp
// at the edges.
std::vector<Taps> make_taps(std::int64_t in_n, std::int64_t out_n) {
    const double ratio = static_cast<double>(in_n) / static_cast<double>(out_n);
    const double fscale = std::max(1.0, ratio);
    const double support = 2.0 * fscale;
    std::vector<Taps> taps(static_cast<std::size_t>(out_n));
    for (std::int64_t o = 0; o < out_n; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        const std::int64_t i0 = static_cast<std::int64_t>(std::ceil(src - support));
        const std::int64_t i1 = static_cast<std::int64_t>(std::floor(src + support));
        Taps t;
        t.start = i0;
        t.weights.reserve(static_cast<std::size_t>(i1 - i0 + 1));
        double sum = 0.0;
        for (std::int64_t i = i0; i <= i1; ++i) {
            const double w = cubic_kernel((src - static_cast<double>(i)) / fscale);
            t.weights.push_back(w);
            sum += w;
        }
        for (auto& w : t.weights) w /= sum;
        taps[static_cast<std::size_t>(o)] = std::move(t);
    }
    return taps;
}

inline std::int64_t clamp_index(std::int64_t i, std::int64_t n) {
    return std::clamp<std::int64_t>(i, 0, n - 1);
}

}  // namespace

Image bicubic_resize(const Image& img, std::int64_t out_h, std::int64_t out_w) {
    if (out_h < 1 || out_w < 1) throw UsageError("bicubic_resize: output dims must be >= 1");
    const auto xt = make_taps(img.width, out_w);
    const auto yt = make_taps(img.height, out_h);

    // Horizontal pass into a double buffer, then vertical; clip only at the end.
    std::vector<double> mid(static_cast<std::size_t>(3 * img.height * out_w));
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < img.height; ++y) {
            const float* row = &img.data[(c * img.height + y) * img.width];
            double* orow = &mid[(c * img.height + y) * out_w];
            for (std::int64_t x = 0; x < out_w; ++x) {
                const Taps& t = xt[static_cast<std::size_t>(x)];
                double acc = 0.0;
                for (std::size_t k = 0; k < t.weights.size(); ++k) {
                    acc += t.weights[k] *
                           row[clamp_index(t.start + static_cast<std::int64_t>(k), img.width)];
                }
                orow[x] = acc;
            }
        }
    }

    Image out = Image::sized(out_h, out_w);
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < out_h; ++y) {
            const Taps& t = yt[static_cast<std::size_t>(y)];
            float* orow = &out.data[(c * out_h + y) * out_w];
            for (std::int64_t x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < t.weights.size(); ++k) {
                    const std::int64_t sy =
                        clamp_index(t.start + static_cast<std::int64_t>(k), img.height);
                    acc += t.weights[k] * mid[(c * img.height + sy) * out_w + x];
                }
                orow[x] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
        }
    }
    return out;
}

std::vector<float> rgb_to_y(const Image& img) {
    const std::int64_t n = img.height * img.width;
    std::vector<float> y(static_cast<std::size_t>(n));
    const float* r = img.data.data();
    const float* g = r + n;
    const float* b = g + n;
    for (std::int64_t i = 0; i < n; ++i) {
        y[static_cast<std::size_t>(i)] =
            16.0f + 65.481f * r[i] + 128.553f * g[i] + 24.966f * b[i];
    }
    return y;
}

}  // namespace mlsr
