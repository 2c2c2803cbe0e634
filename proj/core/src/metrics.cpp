#include "mlsr/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mlsr {

namespace {

void check_pair(const Image& a, const Image& b, std::int64_t crop, const char* op) {
    if (a.height != b.height || a.width != b.width) {
        throw UsageError(std::string(op) + ": image dims differ, " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
    }
    if (crop < 0 || 2 * crop >= std::min(a.height, a.width)) {
        throw UsageError(std::string(op) + ": crop " + std::to_string(crop) +
                         " too large for image " + std::to_string(a.width) + "x" +
                         std::to_string(a.height));
    }
}

// Cropped Y plane, row-major, 0..255 scale. Double-precision conversion so
// the metric itself adds no rounding beyond the f32 inputs.
std::vector<double> cropped_y(const Image& img, std::int64_t crop, std::int64_t& h,
                              std::int64_t& w) {
    h = img.height - 2 * crop;
    w = img.width - 2 * crop;
    const std::int64_t plane = img.height * img.width;
    std::vector<double> out(static_cast<std::size_t>(h * w));
    for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < w; ++c) {
            const std::int64_t i = (r + crop) * img.width + (c + crop);
            out[r * w + c] = 16.0 + 65.481 * img.data[i] + 128.553 * img.data[plane + i] +
                             24.966 * img.data[2 * plane + i];
        }
    }
    return out;
}

}  // namespace

double psnr_y(const Image& a, const Image& b, std::int64_t crop) {
    check_pair(a, b, crop, "psnr");
    std::int64_t h = 0, w = 0;
    const auto ya = cropped_y(a, crop, h, w);
    const auto yb = cropped_y(b, crop, h, w);
    double mse = 0;
    for (std::size_t i = 0; i < ya.size(); ++i) {
        const double d = ya[i] - yb[i];
        mse += d * d;
    }
    mse /= static_cast<double>(ya.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim_y(const Image& a, const Image& b, std::int64_t crop) {
    check_pair(a, b, crop, "ssim");
    constexpr std::int64_t kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = (0.01 * 255) * (0.01 * 255);
    constexpr double kC2 = (0.03 * 255) * (0.03 * 255);

    std::int64_t h = 0, w = 0;
    const auto ya = cropped_y(a, crop, h, w);
    const auto yb = cropped_y(b, crop, h, w);
    if (h < kWin || w < kWin) {
        throw UsageError("ssim: cropped image " + std::to_string(w) + "x" + std::to_string(h) +
                         " smaller than the 11x11 window");
    }

    double window[kWin][kWin];
    double wsum = 0;
    for (std::int64_t i = 0; i < kWin; ++i) {
        for (std::int64_t j = 0; j < kWin; ++j) {
            const double dy = static_cast<double>(i) - (kWin - 1) / 2.0;
            const double dx = static_cast<double>(j) - (kWin - 1) / 2.0;
            window[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
            wsum += window[i][j];
        }
    }
    for (auto& row : window) {
        for (auto& v : row) v /= wsum;
    }

    double total = 0;
    std::int64_t count = 0;
    for (std::int64_t y = 0; y + kWin <= h; ++y) {
        for (std::int64_t x = 0; x + kWin <= w; ++x) {
            double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
            for (std::int64_t i = 0; i < kWin; ++i) {
                const double* ra = &ya[(y + i) * w + x];
                const double* rb = &yb[(y + i) * w + x];
                for (std::int64_t j = 0; j < kWin; ++j) {
                    const double wv = window[i][j];
                    mu_a += wv * ra[j];
                    mu_b += wv * rb[j];
                    aa += wv * ra[j] * ra[j];
                    bb += wv * rb[j] * rb[j];
                    ab += wv * ra[j] * rb[j];
                }
            }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            const double num = (2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2);
            const double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

void MetricReport::add(const std::string& name, double psnr, double ssim) {
    rows.push_back(Row{name, psnr, ssim});
}

void MetricReport::finalize() {
    mean_psnr = 0;
    mean_ssim = 0;
    if (rows.empty()) return;
    for (const auto& r : rows) {
        mean_psnr += r.psnr;
        mean_ssim += r.ssim;
    }
    mean_psnr /= static_cast<double>(rows.size());
    mean_ssim /= static_cast<double>(rows.size());
}

namespace {
std::string num_str(double v) {
    if (std::isinf(v)) return "inf";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}
}  // namespace

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os << "image,psnr,ssim\n";
    for (const auto& r : rows) {
        os << r.name << ',' << num_str(r.psnr) << ',' << num_str(r.ssim) << '\n';
    }
    return os.str();
}

std::string MetricReport::to_json() const {
    std::ostringstream os;
    os << "{\n  \"dataset\": \"" << dataset << "\",\n  \"mean_psnr\": " << num_str(mean_psnr)
       << ",\n  \"mean_ssim\": " << num_str(mean_ssim) << ",\n  \"crop\": " << crop << "\n}\n";
    return os.str();
}

}  // namespace mlsr
