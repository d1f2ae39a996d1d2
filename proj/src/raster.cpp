#include "ordermerge/raster.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <zlib.h>

#include "ordermerge/errors.hpp"

namespace ordermerge {

Raster::Raster(int width, int height, Rgb background)
    : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height * 3) {
    for (std::size_t i = 0; i < pixels_.size(); i += 3) {
        pixels_[i] = background.r;
        pixels_[i + 1] = background.g;
        pixels_[i + 2] = background.b;
    }
}

Rgb Raster::at(int x, int y) const {
    auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return Rgb{pixels_[i], pixels_[i + 1], pixels_[i + 2]};
}

void Raster::set(int x, int y, Rgb color) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    pixels_[i] = color.r;
    pixels_[i + 1] = color.g;
    pixels_[i + 2] = color.b;
}

void Raster::fill_rect(double x0, double y0, double x1, double y1, Rgb color) {
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    // Pixel i has its center at i + 0.5.
    int i0 = std::max(0, static_cast<int>(std::ceil(x0 - 0.5)));
    int i1 = std::min(width_ - 1, static_cast<int>(std::floor(x1 - 0.5)));
    int j0 = std::max(0, static_cast<int>(std::ceil(y0 - 0.5)));
    int j1 = std::min(height_ - 1, static_cast<int>(std::floor(y1 - 0.5)));
    for (int j = j0; j <= j1; ++j) {
        for (int i = i0; i <= i1; ++i) set(i, j, color);
    }
}

void Raster::stroke_rect(double x0, double y0, double x1, double y1, int thickness, Rgb color) {
    const double half = thickness / 2.0;
    fill_rect(x0 - half, y0 - half, x1 + half, y0 + half, color);
    fill_rect(x0 - half, y1 - half, x1 + half, y1 + half, color);
    fill_rect(x0 - half, y0 - half, x0 + half, y1 + half, color);
    fill_rect(x1 - half, y0 - half, x1 + half, y1 + half, color);
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4], std::span<const std::uint8_t> data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    auto type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    auto crc = crc32(0L, out.data() + type_at, static_cast<uInt>(4 + data.size()));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

} // namespace

std::vector<std::uint8_t> encode_png(const Raster& raster) {
    static constexpr std::array<std::uint8_t, 8> kSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> out(kSignature.begin(), kSignature.end());

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(raster.width()));
    put_u32(ihdr, static_cast<std::uint32_t>(raster.height()));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
    put_chunk(out, "IHDR", ihdr);

    const auto row_bytes = static_cast<std::size_t>(raster.width()) * 3;
    std::vector<std::uint8_t> scanlines;
    scanlines.reserve((row_bytes + 1) * raster.height());
    auto px = raster.pixels();
    for (int y = 0; y < raster.height(); ++y) {
        scanlines.push_back(0);
        auto row = px.subspan(static_cast<std::size_t>(y) * row_bytes, row_bytes);
        scanlines.insert(scanlines.end(), row.begin(), row.end());
    }
    uLongf compressed_size = compressBound(static_cast<uLong>(scanlines.size()));
    std::vector<std::uint8_t> compressed(compressed_size);
    if (compress2(compressed.data(), &compressed_size, scanlines.data(),
                  static_cast<uLong>(scanlines.size()), 9) != Z_OK) {
        throw StorageError("zlib compression failed");
    }
    compressed.resize(compressed_size);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", {});
    return out;
}

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

} // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (auto rest = bytes.size() - i; rest > 0) {
        std::uint32_t v = bytes[i] << 16;
        if (rest == 2) v |= bytes[i + 1] << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=') break;
        int v = decode_char(c);
        if (v < 0) throw ParseError("invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
        }
    }
    return out;
}

} // namespace ordermerge
