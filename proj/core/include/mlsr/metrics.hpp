#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mlsr/image.hpp"

namespace mlsr {

// Y-channel PSNR in dB after cropping `crop` pixels from each border.
// Identical inputs return +infinity (flagged as "inf" in reports).
double psnr_y(const Image& a, const Image& b, std::int64_t crop);

// Single-scale SSIM on the Y channel: 11x11 Gaussian window, sigma 1.5,
// C1=(0.01*255)^2, C2=(0.03*255)^2, averaged over fully-interior windows.
double ssim_y(const Image& a, const Image& b, std::int64_t crop);

struct MetricReport {
    struct Row {
        std::string name;
        double psnr = 0;
        double ssim = 0;
    };
    std::string dataset;
    std::vector<Row> rows;
    double mean_psnr = 0;
    double mean_ssim = 0;
    std::int64_t crop = 0;

    void add(const std::string& name, double psnr, double ssim);
    void finalize();  // fills the means

    std::string to_csv() const;   // image,psnr,ssim
    std::string to_json() const;  // {dataset, mean_psnr, mean_ssim, crop}
};

}  // namespace mlsr
