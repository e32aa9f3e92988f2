#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include "qcpipe/error.hpp"
#include "qcpipe/nifti.hpp"
#include "qcpipe/volume.hpp"

namespace qc {

/// 8-bit grayscale image; pixel (col, row) lives at row * width + col.
struct Slice2D {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t col, std::size_t row) const { return pixels[row * width + col]; }
};

/// Central slices of the three orthogonal views. Axial is the x-y plane, coronal x-z, sagittal y-z.
struct SliceTriplet {
    Slice2D axial;
    Slice2D coronal;
    Slice2D sagittal;
};

namespace detail {

// Min-max window to [0, 255]; a constant plane maps to zeros.
inline Slice2D window_plane(std::size_t w, std::size_t h, const std::vector<double>& values) {
    Slice2D s{w, h, std::vector<std::uint8_t>(w * h, 0)};
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) return s;
    for (std::size_t i = 0; i < values.size(); ++i)
        s.pixels[i] = static_cast<std::uint8_t>(std::lround((values[i] - lo) / (hi - lo) * 255.0));
    return s;
}

}  // namespace detail

inline SliceTriplet export_central_slices(const Volume& v) {
    const auto [dx, dy, dz] = v.dims;
    const std::size_t cx = dx / 2, cy = dy / 2, cz = dz / 2;
    std::vector<double> ax(dx * dy), co(dx * dz), sa(dy * dz);
    for (std::size_t y = 0; y < dy; ++y)
        for (std::size_t x = 0; x < dx; ++x) ax[y * dx + x] = v(x, y, cz);
    for (std::size_t z = 0; z < dz; ++z)
        for (std::size_t x = 0; x < dx; ++x) co[z * dx + x] = v(x, cy, z);
    for (std::size_t z = 0; z < dz; ++z)
        for (std::size_t y = 0; y < dy; ++y) sa[z * dy + y] = v(cx, y, z);
    return {detail::window_plane(dx, dy, ax), detail::window_plane(dx, dz, co), detail::window_plane(dy, dz, sa)};
}

/// Encodes an 8-bit grayscale, non-interlaced PNG with a single IDAT chunk.
inline Bytes encode_png(const Slice2D& s) {
    if (s.width == 0 || s.height == 0 || s.pixels.size() != s.width * s.height)
        fail(errc::invalid_argument, "empty or inconsistent slice");

    Bytes out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    auto put32 = [](Bytes& b, std::uint32_t v) {
        b.push_back(static_cast<std::uint8_t>(v >> 24));
        b.push_back(static_cast<std::uint8_t>(v >> 16));
        b.push_back(static_cast<std::uint8_t>(v >> 8));
        b.push_back(static_cast<std::uint8_t>(v));
    };
    auto chunk = [&](const char* type, const Bytes& payload) {
        put32(out, static_cast<std::uint32_t>(payload.size()));
        Bytes body(type, type + 4);
        body.insert(body.end(), payload.begin(), payload.end());
        out.insert(out.end(), body.begin(), body.end());
        put32(out, static_cast<std::uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size()))));
    };

    Bytes ihdr;
    put32(ihdr, static_cast<std::uint32_t>(s.width));
    put32(ihdr, static_cast<std::uint32_t>(s.height));
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // bit depth 8, grayscale, deflate, no filter, no interlace
    chunk("IHDR", ihdr);

    Bytes raw;
    raw.reserve(s.height * (s.width + 1));
    for (std::size_t r = 0; r < s.height; ++r) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), s.pixels.begin() + static_cast<long>(r * s.width),
                   s.pixels.begin() + static_cast<long>((r + 1) * s.width));
    }
    uLongf len = compressBound(static_cast<uLong>(raw.size()));
    Bytes idat(len);
    if (compress2(idat.data(), &len, raw.data(), static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK)
        fail(errc::io_failure, "deflate failed");
    idat.resize(len);
    chunk("IDAT", idat);
    chunk("IEND", {});
    return out;
}

/// Writes `<image_id>_{axial|coronal|sagittal}.png` into `dir`.
inline void write_slice_pngs(const std::filesystem::path& dir, const std::string& image_id, const SliceTriplet& t) {
    std::filesystem::create_directories(dir);
    write_file_bytes(dir / (image_id + "_axial.png"), encode_png(t.axial));
    write_file_bytes(dir / (image_id + "_coronal.png"), encode_png(t.coronal));
    write_file_bytes(dir / (image_id + "_sagittal.png"), encode_png(t.sagittal));
}

}  // namespace qc
