#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ordermerge {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit RGB canvas, row-major, origin at the top-left pixel.
class Raster {
public:
    Raster(int width, int height, Rgb background);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }

    Rgb at(int x, int y) const;
    void set(int x, int y, Rgb color);
    /// Fills pixels whose centers lie in [x0, x1] x [y0, y1] (pixel units).
    void fill_rect(double x0, double y0, double x1, double y1, Rgb color);
    /// Axis-aligned outline `thickness` pixels wide, centered on the edges.
    void stroke_rect(double x0, double y0, double x1, double y1, int thickness, Rgb color);

    std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

private:
    int width_;
    int height_;
    std::vector<std::uint8_t> pixels_;
};

/// Lossless PNG (color type 2, no interlace, filter 0). Deterministic bytes.
std::vector<std::uint8_t> encode_png(const Raster& raster);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws ParseError on characters outside the standard alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

} // namespace ordermerge
