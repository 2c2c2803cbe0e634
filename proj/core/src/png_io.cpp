#include "mlsr/png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace mlsr {

namespace {

constexpr unsigned char kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::uint32_t read_be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

void write_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

int channels_for_color_type(int color_type, const std::string& path) {
    switch (color_type) {
        case 0: return 1;  // grayscale
        case 2: return 3;  // RGB
        case 3: return 1;  // palette indices
        case 4: return 2;  // gray + alpha
        case 6: return 4;  // RGBA
        default:
            throw IoError("load_png: " + path + ": unsupported color type " +
                          std::to_string(color_type));
    }
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

void unfilter(std::vector<unsigned char>& raw, std::int64_t rows, std::int64_t row_bytes,
              std::int64_t bpp, const std::string& path) {
    std::vector<unsigned char> prev(static_cast<std::size_t>(row_bytes), 0);
    for (std::int64_t y = 0; y < rows; ++y) {
        unsigned char* row = raw.data() + y * (row_bytes + 1);
        const int filter = row[0];
        unsigned char* cur = row + 1;
        switch (filter) {
            case 0:
                break;
            case 1:
                for (std::int64_t i = bpp; i < row_bytes; ++i) cur[i] += cur[i - bpp];
                break;
            case 2:
                for (std::int64_t i = 0; i < row_bytes; ++i) cur[i] += prev[i];
                break;
            case 3:
                for (std::int64_t i = 0; i < row_bytes; ++i) {
                    const int a = i >= bpp ? cur[i - bpp] : 0;
                    cur[i] += static_cast<unsigned char>((a + prev[i]) / 2);
                }
                break;
            case 4:
                for (std::int64_t i = 0; i < row_bytes; ++i) {
                    const int a = i >= bpp ? cur[i - bpp] : 0;
                    const int c = i >= bpp ? prev[i - bpp] : 0;
                    cur[i] += static_cast<unsigned char>(paeth(a, prev[i], c));
                }
                break;
            default:
                throw IoError("load_png: " + path + ": bad filter type " + std::to_string(filter));
        }
        std::memcpy(prev.data(), cur, static_cast<std::size_t>(row_bytes));
    }
}

// Reads one sample of `depth` bits at sample index `idx` within an unfiltered row.
unsigned read_sample(const unsigned char* row, std::int64_t idx, int depth) {
    switch (depth) {
        case 8: return row[idx];
        case 16: return (unsigned(row[2 * idx]) << 8) | row[2 * idx + 1];
        default: {
            const std::int64_t bit = idx * depth;
            const unsigned byte = row[bit >> 3];
            const int shift = 8 - depth - static_cast<int>(bit & 7);
            return (byte >> shift) & ((1u << depth) - 1u);
        }
    }
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const unsigned char* data, std::size_t len) {
    write_be32(out, static_cast<std::uint32_t>(len));
    const std::size_t type_pos = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + len);
    const auto crc = crc32(0L, out.data() + type_pos, static_cast<uInt>(4 + len));
    write_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

Image load_png(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_png: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
        throw IoError("load_png: " + path + " is not a PNG file");
    }

    std::int64_t width = 0, height = 0;
    int depth = 0, color_type = 0;
    std::vector<unsigned char> idat;
    std::vector<unsigned char> palette;
    bool saw_ihdr = false;

    std::size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = read_be32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) {
            throw IoError("load_png: " + path + ": truncated chunk");
        }
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const unsigned char* data = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            width = read_be32(data);
            height = read_be32(data + 4);
            depth = data[8];
            color_type = data[9];
            if (data[12] != 0) throw IoError("load_png: " + path + ": interlaced PNG unsupported");
            saw_ihdr = true;
        } else if (std::memcmp(type, "PLTE", 4) == 0) {
            palette.assign(data, data + len);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || width < 1 || height < 1) {
        throw IoError("load_png: " + path + ": missing or invalid IHDR");
    }
    const int ch = channels_for_color_type(color_type, path);
    if ((color_type == 2 || color_type == 4 || color_type == 6) && depth != 8 && depth != 16) {
        throw IoError("load_png: " + path + ": bit depth " + std::to_string(depth) +
                      " unsupported for color type " + std::to_string(color_type));
    }

    const std::int64_t row_bits = width * ch * depth;
    const std::int64_t row_bytes = (row_bits + 7) / 8;
    const std::int64_t bpp = std::max<std::int64_t>(1, (ch * depth + 7) / 8);
    std::vector<unsigned char> raw(static_cast<std::size_t>(height * (row_bytes + 1)));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size()) {
        throw IoError("load_png: " + path + ": corrupt image data");
    }
    unfilter(raw, height, row_bytes, bpp, path);

    Image img = Image::sized(height, width);
    const float max_v = static_cast<float>((depth >= 8 ? (depth == 16 ? 65535 : 255)
                                                       : (1 << depth) - 1));
    const std::int64_t plane = height * width;
    for (std::int64_t y = 0; y < height; ++y) {
        const unsigned char* row = raw.data() + y * (row_bytes + 1) + 1;
        for (std::int64_t x = 0; x < width; ++x) {
            float r, g, b;
            if (color_type == 2 || color_type == 6) {
                r = read_sample(row, x * ch + 0, depth) / max_v;
                g = read_sample(row, x * ch + 1, depth) / max_v;
                b = read_sample(row, x * ch + 2, depth) / max_v;
            } else if (color_type == 0 || color_type == 4) {
                r = g = b = read_sample(row, x * ch, depth) / max_v;
            } else {  // palette
                const unsigned idx = read_sample(row, x, depth);
                if ((idx + 1) * 3 > palette.size()) {
                    throw IoError("load_png: " + path + ": palette index out of range");
                }
                r = palette[idx * 3 + 0] / 255.0f;
                g = palette[idx * 3 + 1] / 255.0f;
                b = palette[idx * 3 + 2] / 255.0f;
            }
            img.data[0 * plane + y * width + x] = r;
            img.data[1 * plane + y * width + x] = g;
            img.data[2 * plane + y * width + x] = b;
        }
    }
    return img;
}

void save_png(const Image& img, const std::string& path) {
    const std::int64_t h = img.height, w = img.width;
    const std::int64_t plane = h * w;
    std::vector<unsigned char> raw(static_cast<std::size_t>(h * (3 * w + 1)));
    for (std::int64_t y = 0; y < h; ++y) {
        unsigned char* row = raw.data() + y * (3 * w + 1);
        row[0] = 0;  // filter: none
        for (std::int64_t x = 0; x < w; ++x) {
            for (std::int64_t c = 0; c < 3; ++c) {
                const float v = std::clamp(img.data[c * plane + y * w + x], 0.0f, 1.0f);
                row[1 + 3 * x + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
    }

    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()),
                  Z_DEFAULT_COMPRESSION) != Z_OK) {
        throw IoError("save_png: compression failed for " + path);
    }
    comp.resize(comp_len);

    std::vector<unsigned char> out(kSignature, kSignature + 8);
    unsigned char ihdr[13];
    ihdr[0] = static_cast<unsigned char>(w >> 24);
    ihdr[1] = static_cast<unsigned char>(w >> 16);
    ihdr[2] = static_cast<unsigned char>(w >> 8);
    ihdr[3] = static_cast<unsigned char>(w);
    ihdr[4] = static_cast<unsigned char>(h >> 24);
    ihdr[5] = static_cast<unsigned char>(h >> 16);
    ihdr[6] = static_cast<unsigned char>(h >> 8);
    ihdr[7] = static_cast<unsigned char>(h);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // RGB
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter
    ihdr[12] = 0;  // no interlace
    append_chunk(out, "IHDR", ihdr, sizeof(ihdr));
    append_chunk(out, "IDAT", comp.data(), comp.size());
    append_chunk(out, "IEND", nullptr, 0);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_png: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("save_png: write failed for " + path);
}

}  // namespace mlsr
