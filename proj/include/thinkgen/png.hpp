#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "thinkgen/error.hpp"
#include "thinkgen/world.hpp"

namespace thinkgen {

namespace detail {

inline uint32_t crc32_table_entry(uint32_t n) {
    for (int k = 0; k < 8; ++k) n = (n & 1) ? 0xEDB88320u ^ (n >> 1) : n >> 1;
    return n;
}

inline uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0xFFFFFFFFu) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) table[i] = crc32_table_entry(i);
        init = true;
    }
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc;
}

inline uint32_t adler32(const uint8_t* data, size_t n) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    put_u32(out, crc32(out.data() + start, out.size() - start) ^ 0xFFFFFFFFu);
}

} // namespace detail

// Minimal RGB8 PNG writer (zlib stream with stored deflate blocks).
inline void write_png(const std::string& path, int width, int height, const std::vector<uint8_t>& rgb) {
    if (static_cast<size_t>(width) * height * 3 != rgb.size()) throw ContractError("write_png: bad buffer size");
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (width * 3 + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0); // filter: none
        raw.insert(raw.end(), rgb.begin() + static_cast<size_t>(y) * width * 3,
                   rgb.begin() + static_cast<size_t>(y + 1) * width * 3);
    }

    std::vector<uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    size_t pos = 0;
    while (pos < raw.size()) {
        const size_t chunk = std::min<size_t>(65535, raw.size() - pos);
        z.push_back(pos + chunk >= raw.size() ? 1 : 0);
        z.push_back(static_cast<uint8_t>(chunk & 0xFF));
        z.push_back(static_cast<uint8_t>(chunk >> 8));
        z.push_back(static_cast<uint8_t>(~chunk & 0xFF));
        z.push_back(static_cast<uint8_t>((~chunk >> 8) & 0xFF));
        z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + chunk);
        pos += chunk;
    }
    detail::put_u32(z, detail::adler32(raw.data(), raw.size()));

    std::vector<uint8_t> png = {0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<uint8_t> ihdr;
    detail::put_u32(ihdr, static_cast<uint32_t>(width));
    detail::put_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(2); // color type: RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    detail::put_chunk(png, "IHDR", ihdr);
    detail::put_chunk(png, "IDAT", z);
    detail::put_chunk(png, "IEND", {});

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path);
    os.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    if (!os) throw IoError("failed writing " + path);
}

// Renders a grid latent as an upscaled PNG: the color channels map to RGB,
// the glyph channel overlays as white.
inline void write_grid_png(const std::string& path, const Array& grid, int scale = 8) {
    if (grid.shape != Shape{kGridH, kGridW, kGridC}) throw ShapeError("write_grid_png: " + shape_str(grid.shape));
    const int w = kGridW * scale, h = kGridH * scale;
    std::vector<uint8_t> rgb(static_cast<size_t>(w) * h * 3, 0);
    auto clamp255 = [](double v) { return static_cast<uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int gy = y / scale, gx = x / scale;
            const size_t base = static_cast<size_t>((gy * kGridW + gx) * kGridC);
            const double glyph = std::clamp(static_cast<double>(grid.data[base + 3]), 0.0, 1.0);
            for (int ch = 0; ch < 3; ++ch) {
                double v = static_cast<double>(grid.data[base + static_cast<size_t>(ch)]);
                v = std::max(v, glyph); // glyph overlays white
                rgb[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(ch)] = clamp255(v);
            }
        }
    write_png(path, w, h, rgb);
}

// Plain line plot of one series on a light background with axes.
inline void write_line_plot(const std::string& path, const std::vector<double>& ys, const std::string& /*label*/,
                            int width = 640, int height = 360) {
    std::vector<uint8_t> rgb(static_cast<size_t>(width) * height * 3, 245);
    auto put = [&](int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || x >= width || y < 0 || y >= height) return;
        const size_t i = (static_cast<size_t>(y) * width + x) * 3;
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    };
    const int margin = 32;
    for (int x = margin; x < width - 8; ++x) put(x, height - margin, 60, 60, 60);
    for (int y = 8; y <= height - margin; ++y) put(margin, y, 60, 60, 60);

    if (!ys.empty()) {
        double lo = ys[0], hi = ys[0];
        for (double v : ys) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi - lo < 1e-12) {
            hi += 0.5;
            lo -= 0.5;
        }
        auto px = [&](size_t i) {
            return margin + 1 +
                   static_cast<int>((static_cast<double>(i) / std::max<size_t>(1, ys.size() - 1)) *
                                    (width - margin - 16));
        };
        auto py = [&](double v) {
            return height - margin - 1 - static_cast<int>((v - lo) / (hi - lo) * (height - margin - 16));
        };
        for (size_t i = 0; i + 1 < ys.size(); ++i) {
            // Bresenham-ish dense interpolation
            const int x0 = px(i), y0 = py(ys[i]), x1 = px(i + 1), y1 = py(ys[i + 1]);
            const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
            for (int s = 0; s <= steps; ++s) {
                const int x = x0 + (x1 - x0) * s / steps;
                const int y = y0 + (y1 - y0) * s / steps;
                put(x, y, 30, 60, 180);
                put(x, y + 1, 30, 60, 180);
            }
        }
    }
    write_png(path, width, height, rgb);
}

} // namespace thinkgen
