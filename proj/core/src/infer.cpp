#include "mlsr/infer.hpp"

#include <algorithm>

namespace mlsr {

std::vector<std::int64_t> TileGrid::offsets(std::int64_t dim, std::int64_t tile,
                                            std::int64_t overlap) {
    if (tile < 1) throw ConfigError("tile grid: tile size must be positive");
    if (overlap < 0 || overlap >= tile) {
        throw ConfigError("tile grid: overlap " + std::to_string(overlap) +
                          " outside [0, tile)");
    }
    if (dim <= tile) return {0};
    const std::int64_t step = tile - overlap;
    std::vector<std::int64_t> out;
    for (std::int64_t x = 0;; x += step) {
        if (x + tile >= dim) {
            out.push_back(dim - tile);
            break;
        }
        out.push_back(x);
    }
    return out;
}

Image super_resolve(const std::function<Image(const Image&)>& upscale, std::int64_t scale,
                    const Image& lr, const TileGrid& grid) {
    const std::int64_t tile_h = std::min(grid.tile, lr.height);
    const std::int64_t tile_w = std::min(grid.tile, lr.width);
    const auto ys = TileGrid::offsets(lr.height, tile_h, std::min(grid.overlap, tile_h - 1));
    const auto xs = TileGrid::offsets(lr.width, tile_w, std::min(grid.overlap, tile_w - 1));

    const std::int64_t oh = scale * lr.height;
    const std::int64_t ow = scale * lr.width;
    std::vector<double> acc(static_cast<std::size_t>(3 * oh * ow), 0.0);
    std::vector<std::uint32_t> hits(static_cast<std::size_t>(oh * ow), 0);

    for (const auto y0 : ys) {
        for (const auto x0 : xs) {
            const Image tile = crop(lr, x0, y0, tile_w, tile_h);
            const Image sr = upscale(tile);
            if (sr.height != scale * tile_h || sr.width != scale * tile_w) {
                throw ConfigError("super_resolve: model produced " + std::to_string(sr.width) +
                                  "x" + std::to_string(sr.height) + " for a " +
                                  std::to_string(tile_w) + "x" + std::to_string(tile_h) +
                                  " tile; expected scale " + std::to_string(scale));
            }
            const std::int64_t hy = scale * y0, hx = scale * x0;
            for (std::int64_t c = 0; c < 3; ++c) {
                for (std::int64_t y = 0; y < sr.height; ++y) {
                    const float* src = &sr.data[(c * sr.height + y) * sr.width];
                    double* dst = &acc[(c * oh + hy + y) * ow + hx];
                    for (std::int64_t x = 0; x < sr.width; ++x) dst[x] += src[x];
                }
            }
            for (std::int64_t y = 0; y < sr.height; ++y) {
                std::uint32_t* row = &hits[(hy + y) * ow + hx];
                for (std::int64_t x = 0; x < sr.width; ++x) ++row[x];
            }
        }
    }

    Image out = Image::sized(oh, ow);
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t i = 0; i < oh * ow; ++i) {
            const double v = acc[c * oh * ow + i] / static_cast<double>(hits[i]);
            out.data[c * oh * ow + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

Image super_resolve(const SrModel<float>& model, const Image& lr, const TileGrid& grid) {
    return super_resolve(
        [&model](const Image& tile) {
            return Image::from_tensor(model.forward(tile.to_tensor()), /*clip=*/true);
        },
        model.config().scale, lr, grid);
}

}  // namespace mlsr
