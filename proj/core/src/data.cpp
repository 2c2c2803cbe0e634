#include "mlsr/data.hpp"

#include <algorithm>
#include <filesystem>

#include "mlsr/png_io.hpp"

namespace mlsr {

namespace {

Image transform(const Image& img, std::uint8_t code) {
    Image out = img;
    if (code & 1) out = flip_horizontal(out);
    if (code & 2) out = flip_vertical(out);
    const int k = (code >> 2) & 3;
    for (int i = 0; i < k; ++i) out = rotate90(out);
    return out;
}

}  // namespace

PatchPair apply_augment(PatchPair pair, std::uint8_t code) {
    if (pair.lr.height != pair.lr.width) {
        throw UsageError("augment: patches must be square, got " + std::to_string(pair.lr.height) +
                         "x" + std::to_string(pair.lr.width));
    }
    pair.lr = transform(pair.lr, code);
    pair.hr = transform(pair.hr, code);
    pair.aug_code = code;
    return pair;
}

PatchPair augment(PatchPair pair, Rng& rng) {
    const std::uint8_t hflip = rng.coin() ? 1 : 0;
    const std::uint8_t vflip = rng.coin() ? 1 : 0;
    const std::uint8_t k = static_cast<std::uint8_t>(rng.uniform_int(4));
    return apply_augment(std::move(pair), static_cast<std::uint8_t>(hflip | (vflip << 1) | (k << 2)));
}

std::vector<PatchPair> sample_patches(const Image& hr, const Image& lr, std::int64_t n,
                                      std::int64_t patch, std::int64_t scale, Rng& rng,
                                      bool strict, const std::string& source, bool with_augment) {
    if (hr.height != scale * lr.height || hr.width != scale * lr.width) {
        throw UsageError("sample_patches: hr dims " + std::to_string(hr.width) + "x" +
                         std::to_string(hr.height) + " are not " + std::to_string(scale) +
                         "x the lr dims");
    }
    if (lr.height < patch || lr.width < patch) {
        if (strict) {
            throw UsageError("sample_patches: image " + source + " smaller than patch size " +
                             std::to_string(patch));
        }
        return {};
    }
    std::vector<PatchPair> out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t x = rng.uniform_int(lr.width - patch + 1);
        const std::int64_t y = rng.uniform_int(lr.height - patch + 1);
        PatchPair pair;
        pair.lr = crop(lr, x, y, patch, patch);
        pair.hr = crop(hr, scale * x, scale * y, scale * patch, scale * patch);
        pair.source = source;
        pair.lr_x = x;
        pair.lr_y = y;
        out.push_back(with_augment ? augment(std::move(pair), rng) : std::move(pair));
    }
    return out;
}

Dataset Dataset::load(const std::string& hr_dir, const std::optional<std::string>& lr_dir,
                      std::int64_t scale) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(hr_dir)) {
        throw IoError("dataset: " + hr_dir + " is not a directory");
    }
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(hr_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            names.push_back(entry.path().filename().string());
        }
    }
    std::sort(names.begin(), names.end());

    Dataset ds;
    for (const auto& name : names) {
        Item item;
        item.name = name;
        Image hr = load_png((fs::path(hr_dir) / name).string());
        const std::int64_t ch = (hr.height / scale) * scale;
        const std::int64_t cw = (hr.width / scale) * scale;
        if (ch < scale || cw < scale) continue;
        item.hr = (ch == hr.height && cw == hr.width) ? std::move(hr) : crop(hr, 0, 0, cw, ch);
        bool have_lr = false;
        if (lr_dir) {
            const fs::path lp = fs::path(*lr_dir) / name;
            if (fs::exists(lp)) {
                item.lr = load_png(lp.string());
                if (item.lr.height == ch / scale && item.lr.width == cw / scale) {
                    have_lr = true;
                }
            }
        }
        if (!have_lr) item.lr = bicubic_resize(item.hr, ch / scale, cw / scale);
        ds.items_.push_back(std::move(item));
    }
    return ds;
}

}  // namespace mlsr
