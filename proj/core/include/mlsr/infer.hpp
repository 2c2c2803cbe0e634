#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mlsr/image.hpp"
#include "mlsr/model.hpp"

namespace mlsr {

// Tiling plan over the LR image. Tiles cover the image exactly; the last tile
// along each axis clamps to the boundary (it may overlap its neighbor).
struct TileGrid {
    std::int64_t tile = 64;
    std::int64_t overlap = 0;

    static std::vector<std::int64_t> offsets(std::int64_t dim, std::int64_t tile,
                                             std::int64_t overlap);
};

// Patch-wise super-resolution: each LR tile runs through `upscale` and lands
// at scale x its offset; overlapping HR pixels are averaged with equal
// weights. Output is clipped to [0, 1].
Image super_resolve(const std::function<Image(const Image&)>& upscale, std::int64_t scale,
                    const Image& lr, const TileGrid& grid);

Image super_resolve(const SrModel<float>& model, const Image& lr, const TileGrid& grid);

}  // namespace mlsr
