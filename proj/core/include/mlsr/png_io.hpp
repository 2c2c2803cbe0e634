#pragma once

#include <string>

#include "mlsr/image.hpp"

namespace mlsr {

// Decodes an 8/16-bit PNG (grayscale, gray+alpha, RGB, RGBA, or palette;
// no interlacing). Grayscale replicates into 3 channels, alpha is dropped.
Image load_png(const std::string& path);

// Writes 8-bit RGB. Values are clamped to [0,1] and quantized with round(v*255).
void save_png(const Image& img, const std::string& path);

}  // namespace mlsr
