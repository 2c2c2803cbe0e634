#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mlsr/metrics.hpp"
#include "mlsr/rng.hpp"

using namespace mlsr;

namespace {

Image random_image(std::int64_t h, std::int64_t w, Rng& rng, float lo = 0.0f, float hi = 1.0f) {
    Image img = Image::sized(h, w);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(lo, hi));
    return img;
}

// Direct-formula PSNR oracle with its own Y conversion.
double psnr_oracle(const Image& a, const Image& b, std::int64_t crop) {
    const std::int64_t plane = a.height * a.width;
    double mse = 0;
    std::int64_t count = 0;
    for (std::int64_t y = crop; y < a.height - crop; ++y) {
        for (std::int64_t x = crop; x < a.width - crop; ++x) {
            const std::int64_t i = y * a.width + x;
            const double ya = 16.0 + 65.481 * a.data[i] + 128.553 * a.data[plane + i] +
                              24.966 * a.data[2 * plane + i];
            const double yb = 16.0 + 65.481 * b.data[i] + 128.553 * b.data[plane + i] +
                              24.966 * b.data[2 * plane + i];
            mse += (ya - yb) * (ya - yb);
            ++count;
        }
    }
    mse /= static_cast<double>(count);
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

// Sliding-window SSIM oracle via separable Gaussian filtering (a different
// computation route than the library's direct 2-d windows).
double ssim_oracle(const Image& a, const Image& b, std::int64_t crop) {
    const std::int64_t h = a.height - 2 * crop;
    const std::int64_t w = a.width - 2 * crop;
    auto y_plane = [&](const Image& img) {
        const std::int64_t plane = img.height * img.width;
        std::vector<double> out(static_cast<std::size_t>(h * w));
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                const std::int64_t i = (y + crop) * img.width + (x + crop);
                out[y * w + x] = 16.0 + 65.481 * img.data[i] + 128.553 * img.data[plane + i] +
                                 24.966 * img.data[2 * plane + i];
            }
        }
        return out;
    };
    const auto ya = y_plane(a);
    const auto yb = y_plane(b);

    double g[11];
    double gsum = 0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5.0;
        g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        gsum += g[i];
    }
    for (auto& v : g) v /= gsum;

    const std::int64_t vw = w - 10;  // valid columns after horizontal pass
    const std::int64_t vh = h - 10;
    auto filter = [&](const std::vector<double>& src) {
        std::vector<double> horiz(static_cast<std::size_t>(h * vw));
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < vw; ++x) {
                double acc = 0;
                for (int k = 0; k < 11; ++k) acc += g[k] * src[y * w + x + k];
                horiz[y * vw + x] = acc;
            }
        }
        std::vector<double> out(static_cast<std::size_t>(vh * vw));
        for (std::int64_t y = 0; y < vh; ++y) {
            for (std::int64_t x = 0; x < vw; ++x) {
                double acc = 0;
                for (int k = 0; k < 11; ++k) acc += g[k] * horiz[(y + k) * vw + x];
                out[y * vw + x] = acc;
            }
        }
        return out;
    };

    auto mul_vec = [](const std::vector<double>& u, const std::vector<double>& v) {
        std::vector<double> out(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] * v[i];
        return out;
    };

    const auto mu_a = filter(ya);
    const auto mu_b = filter(yb);
    const auto s_aa = filter(mul_vec(ya, ya));
    const auto s_bb = filter(mul_vec(yb, yb));
    const auto s_ab = filter(mul_vec(ya, yb));

    const double c1 = 6.5025, c2 = 58.5225;
    double total = 0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = s_aa[i] - mu_a[i] * mu_a[i];
        const double vb = s_bb[i] - mu_b[i] * mu_b[i];
        const double cov = s_ab[i] - mu_a[i] * mu_b[i];
        total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

}  // namespace

TEST_CASE("psnr of identical images is the +inf sentinel") {
    Rng rng(1);
    Image a = random_image(20, 20, rng);
    CHECK(std::isinf(psnr_y(a, a, 0)));
    CHECK(psnr_y(a, a, 4) > 0);
}

TEST_CASE("uniform unit Y offset gives 20*log10(255) dB") {
    Image a = Image::sized(16, 16);
    Image b = Image::sized(16, 16);
    // delta chosen so the Y difference is exactly 1.0 on the 0-255 scale
    const float delta = 1.0f / (65.481f + 128.553f + 24.966f);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        a.data[i] = 0.4f;
        b.data[i] = 0.4f + delta;
    }
    const double expected = 20.0 * std::log10(255.0);
    CHECK(psnr_y(a, b, 0) == doctest::Approx(expected).epsilon(1e-5));
    CHECK(std::abs(psnr_y(a, b, 0) - 48.1308) < 1e-3);
}

TEST_CASE("psnr matches the direct-formula oracle within 1e-9 dB") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        Image a = random_image(18, 24, rng);
        Image b = random_image(18, 24, rng);
        const std::int64_t crop = trial % 2 == 0 ? 0 : 4;
        CHECK(std::abs(psnr_y(a, b, crop) - psnr_oracle(a, b, crop)) < 1e-9);
    }
}

TEST_CASE("psnr symmetry and monotone decay with offset") {
    Rng rng(3);
    Image a = random_image(16, 16, rng, 0.2f, 0.6f);
    Image b = random_image(16, 16, rng, 0.2f, 0.6f);
    CHECK(psnr_y(a, b, 0) == psnr_y(b, a, 0));

    double prev = std::numeric_limits<double>::infinity();
    for (const float off : {0.01f, 0.02f, 0.05f, 0.1f, 0.2f}) {
        Image shifted = a;
        for (auto& v : shifted.data) v += off;
        const double p = psnr_y(a, shifted, 0);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("psnr usage errors") {
    Image a = Image::sized(16, 16);
    Image b = Image::sized(16, 18);
    CHECK_THROWS_AS(psnr_y(a, b, 0), UsageError);
    Image c = Image::sized(16, 16);
    CHECK_THROWS_AS(psnr_y(a, c, 8), UsageError);
}

TEST_CASE("ssim of identical images is exactly 1") {
    Rng rng(4);
    Image a = random_image(24, 24, rng);
    CHECK(ssim_y(a, a, 0) == 1.0);
    CHECK(ssim_y(a, a, 4) == 1.0);
}

TEST_CASE("ssim of equal-mean constants is 1") {
    Image a = Image::sized(16, 16);
    Image b = Image::sized(16, 16);
    std::fill(a.data.begin(), a.data.end(), 0.5f);
    std::fill(b.data.begin(), b.data.end(), 0.5f);
    CHECK(ssim_y(a, b, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim matches the sliding-window oracle within 1e-6") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Image a = random_image(20, 26, rng);
        Image b = random_image(20, 26, rng);
        const std::int64_t crop = trial % 2 == 0 ? 0 : 2;
        CHECK(std::abs(ssim_y(a, b, crop) - ssim_oracle(a, b, crop)) < 1e-6);
    }
}

TEST_CASE("ssim symmetry, small-offset behavior, and size guard") {
    Rng rng(6);
    Image a = random_image(24, 24, rng, 0.3f, 0.7f);
    Image b = random_image(24, 24, rng, 0.3f, 0.7f);
    CHECK(ssim_y(a, b, 0) == doctest::Approx(ssim_y(b, a, 0)).epsilon(1e-12));

    double prev = 0.0;
    for (const float c : {0.05f, 0.01f, 0.001f}) {
        Image shifted = a;
        for (auto& v : shifted.data) v += c;
        const double s = ssim_y(a, shifted, 0);
        CHECK(s > 0.0);
        CHECK(s <= 1.0);
        CHECK(s > prev);
        prev = s;
    }
    CHECK(prev > 0.999);

    Image small = Image::sized(8, 8);
    CHECK_THROWS_AS(ssim_y(small, small, 0), UsageError);
}

TEST_CASE("metric report serialization") {
    MetricReport rep;
    rep.dataset = "set5";
    rep.crop = 4;
    rep.add("a.png", 30.25, 0.9);
    rep.add("b.png", std::numeric_limits<double>::infinity(), 1.0);
    rep.finalize();
    CHECK(rep.mean_ssim == doctest::Approx(0.95));
    const std::string csv = rep.to_csv();
    CHECK(csv.find("image,psnr,ssim") == 0);
    CHECK(csv.find("b.png,inf,1") != std::string::npos);
    const std::string json = rep.to_json();
    CHECK(json.find("\"dataset\": \"set5\"") != std::string::npos);
    CHECK(json.find("\"crop\": 4") != std::string::npos);
}
