#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mlsr/image.hpp"
#include "mlsr/rng.hpp"

namespace mlsr {

// Aligned LR/HR crop with its provenance. hr dims are scale x lr dims and the
// hr offset is scale x the lr offset.
struct PatchPair {
    Image lr;
    Image hr;
    std::string source;
    std::int64_t lr_x = 0;
    std::int64_t lr_y = 0;
    std::uint8_t aug_code = 0;  // bit0 hflip, bit1 vflip, bits 2-3 quarter turns
};

// Applies the transform encoded in `code` to both members of the pair.
PatchPair apply_augment(PatchPair pair, std::uint8_t code);

// Independent 50% horizontal flip, 50% vertical flip, and k*90 degree
// rotation (k uniform in 0..3). Patches are square, so rotations keep shape.
PatchPair augment(PatchPair pair, Rng& rng);

// Uniformly random aligned crops, each then augmented. Undersized images:
// lenient mode returns an empty list (caller may warn), strict mode throws.
// with_augment=false keeps the raw crops (fixed-pair overfit runs).
std::vector<PatchPair> sample_patches(const Image& hr, const Image& lr, std::int64_t n,
                                      std::int64_t patch, std::int64_t scale, Rng& rng,
                                      bool strict = false, const std::string& source = "",
                                      bool with_augment = true);

// In-memory HR/LR image collection. LR is the provided file when a parallel
// directory carries a matching name, otherwise synthesized by bicubic
// downscale; HR is pre-cropped to a multiple of the scale.
class Dataset {
public:
    struct Item {
        std::string name;
        Image hr;
        Image lr;
    };

    static Dataset load(const std::string& hr_dir, const std::optional<std::string>& lr_dir,
                        std::int64_t scale);

    const std::vector<Item>& items() const { return items_; }
    bool empty() const { return items_.empty(); }
    std::size_t size() const { return items_.size(); }

private:
    std::vector<Item> items_;
};

}  // namespace mlsr
