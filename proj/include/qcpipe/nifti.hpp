#pragma once

// Minimal single-file NIfTI-1 (.nii) reader/writer. Little-endian only; orientation is
// taken from the srow rows, the quaternion form is ignored.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <vector>

#include "qcpipe/error.hpp"
#include "qcpipe/volume.hpp"

namespace qc {

static_assert(std::endian::native == std::endian::little, "qcpipe assumes a little-endian host");

using Bytes = std::vector<std::uint8_t>;

namespace nifti {

inline constexpr std::int32_t header_size = 348;
inline constexpr std::size_t default_vox_offset = 352;

enum datatype : std::int16_t { dt_uint8 = 2, dt_int16 = 4, dt_float32 = 16 };

struct Header {
    std::int32_t sizeof_hdr = header_size;
    std::array<std::int16_t, 8> dim{};
    std::int16_t datatype_code = dt_float32;
    std::int16_t bitpix = 32;
    std::array<float, 8> pixdim{};
    float vox_offset = static_cast<float>(default_vox_offset);
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    std::array<float, 4> srow_x{}, srow_y{}, srow_z{};
    std::array<char, 4> magic{'n', '+', '1', '\0'};
};

namespace detail {

template <class T>
T load(std::span<const std::uint8_t> b, std::size_t off) {
    T v;
    std::memcpy(&v, b.data() + off, sizeof(T));
    return v;
}
template <class T>
void store(Bytes& b, std::size_t off, T v) {
    std::memcpy(b.data() + off, &v, sizeof(T));
}

inline int bitpix_for(std::int16_t dt) {
    switch (dt) {
    case dt_uint8: return 8;
    case dt_int16: return 16;
    case dt_float32: return 32;
    default: return 0;
    }
}

}  // namespace detail

inline Header parse_header(std::span<const std::uint8_t> b) {
    using detail::load;
    if (b.size() < static_cast<std::size_t>(header_size)) fail(errc::truncated_payload, "file shorter than header");
    Header h;
    h.sizeof_hdr = load<std::int32_t>(b, 0);
    if (h.sizeof_hdr != header_size) {
        if (__builtin_bswap32(static_cast<std::uint32_t>(h.sizeof_hdr)) == static_cast<std::uint32_t>(header_size)) fail(errc::bad_magic, "big-endian NIfTI is not supported");
        fail(errc::bad_magic, "sizeof_hdr is " + std::to_string(h.sizeof_hdr));
    }
    for (int i = 0; i < 4; ++i) h.magic[i] = static_cast<char>(b[344 + i]);
    if (!(h.magic[0] == 'n' && h.magic[1] == '+' && h.magic[2] == '1' && h.magic[3] == '\0'))
        fail(errc::bad_magic, "magic is not \"n+1\"");
    for (int i = 0; i < 8; ++i) h.dim[i] = load<std::int16_t>(b, 40 + 2 * i);
    h.datatype_code = load<std::int16_t>(b, 70);
    h.bitpix = load<std::int16_t>(b, 72);
    for (int i = 0; i < 8; ++i) h.pixdim[i] = load<float>(b, 76 + 4 * i);
    h.vox_offset = load<float>(b, 108);
    h.scl_slope = load<float>(b, 112);
    h.scl_inter = load<float>(b, 116);
    h.qform_code = load<std::int16_t>(b, 252);
    h.sform_code = load<std::int16_t>(b, 254);
    for (int i = 0; i < 4; ++i) {
        h.srow_x[i] = load<float>(b, 280 + 4 * i);
        h.srow_y[i] = load<float>(b, 296 + 4 * i);
        h.srow_z[i] = load<float>(b, 312 + 4 * i);
    }
    return h;
}

inline Volume read(std::span<const std::uint8_t> bytes) {
    const Header h = parse_header(bytes);

    const int ndim = h.dim[0];
    if (ndim < 3 || ndim > 7) fail(errc::unsupported_datatype, "only 3D volumes are supported");
    for (int i = 4; i <= ndim; ++i)
        if (h.dim[i] != 1) fail(errc::unsupported_datatype, "only 3D volumes are supported");
    Shape3 dims{};
    for (int a = 0; a < 3; ++a) {
        if (h.dim[a + 1] < 1) fail(errc::unsupported_datatype, "non-positive dimension");
        dims[a] = static_cast<std::size_t>(h.dim[a + 1]);
    }
    const int bp = detail::bitpix_for(h.datatype_code);
    if (bp == 0) fail(errc::unsupported_datatype, "datatype " + std::to_string(h.datatype_code));
    if (bp != h.bitpix) fail(errc::unsupported_datatype, "bitpix inconsistent with datatype");
    if (!(h.vox_offset >= static_cast<float>(default_vox_offset)))
        fail(errc::truncated_payload, "vox_offset below 352");

    const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
    const std::size_t n = voxel_count(dims);
    const std::size_t width = static_cast<std::size_t>(bp / 8);
    if (bytes.size() < offset || (bytes.size() - offset) / width < n)
        fail(errc::truncated_payload, "payload holds fewer voxels than the header promises");

    Vec3 spacing{};
    for (int a = 0; a < 3; ++a) {
        const double s = std::fabs(static_cast<double>(h.pixdim[a + 1]));
        spacing[a] = s > 0.0 && std::isfinite(s) ? s : 1.0;
    }

    const bool scaled = h.scl_slope != 0.0f && std::isfinite(h.scl_slope);
    const double slope = scaled ? h.scl_slope : 1.0;
    const double inter = scaled ? h.scl_inter : 0.0;

    std::vector<double> data(n);
    const auto payload = bytes.subspan(offset);
    // File order has x fastest; Volume stores z fastest.
    std::size_t i = 0;
    for (std::size_t z = 0; z < dims[2]; ++z)
        for (std::size_t y = 0; y < dims[1]; ++y)
            for (std::size_t x = 0; x < dims[0]; ++x, ++i) {
                double raw = 0.0;
                switch (h.datatype_code) {
                case dt_uint8: raw = payload[i]; break;
                case dt_int16: raw = detail::load<std::int16_t>(payload, 2 * i); break;
                default: {
                    const float f = detail::load<float>(payload, 4 * i);
                    if (!std::isfinite(f)) fail(errc::non_finite, "NaN or Inf in float payload");
                    raw = f;
                }
                }
                const double v = scaled ? slope * raw + inter : raw;
                if (!std::isfinite(v)) fail(errc::non_finite, "scaled value is not finite");
                data[(x * dims[1] + y) * dims[2] + z] = v;
            }

    Volume vol(dims, spacing, std::move(data));
    if (h.sform_code > 0) {
        Mat4 m = identity4();
        for (int c = 0; c < 4; ++c) {
            m[0][c] = h.srow_x[c];
            m[1][c] = h.srow_y[c];
            m[2][c] = h.srow_z[c];
        }
        vol.affine = m;
    }
    return vol;
}

/// Serializes as float32 with unit scaling and the payload at byte 352.
inline Bytes write(const Volume& v) {
    v.validate();
    for (int a = 0; a < 3; ++a)
        if (v.dims[a] > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
            fail(errc::dimension_overflow, "dimension " + std::to_string(v.dims[a]) + " exceeds 32767");

    const std::size_t n = v.size();
    Bytes b(default_vox_offset + 4 * n, 0);
    using detail::store;
    store<std::int32_t>(b, 0, header_size);
    b[38] = 'r';  // "regular"
    const std::array<std::int16_t, 8> dim{3,
                                          static_cast<std::int16_t>(v.dims[0]),
                                          static_cast<std::int16_t>(v.dims[1]),
                                          static_cast<std::int16_t>(v.dims[2]),
                                          1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) store<std::int16_t>(b, 40 + 2 * i, dim[i]);
    store<std::int16_t>(b, 70, dt_float32);
    store<std::int16_t>(b, 72, 32);
    const std::array<float, 8> pixdim{1.0f,
                                      static_cast<float>(v.spacing[0]),
                                      static_cast<float>(v.spacing[1]),
                                      static_cast<float>(v.spacing[2]),
                                      0.0f, 0.0f, 0.0f, 0.0f};
    for (int i = 0; i < 8; ++i) store<float>(b, 76 + 4 * i, pixdim[i]);
    store<float>(b, 108, static_cast<float>(default_vox_offset));
    store<float>(b, 112, 1.0f);
    store<float>(b, 116, 0.0f);
    b[123] = 2;  // xyzt_units: mm
    if (v.affine) {
        store<std::int16_t>(b, 254, 1);
        for (int c = 0; c < 4; ++c) {
            store<float>(b, 280 + 4 * c, static_cast<float>((*v.affine)[0][c]));
            store<float>(b, 296 + 4 * c, static_cast<float>((*v.affine)[1][c]));
            store<float>(b, 312 + 4 * c, static_cast<float>((*v.affine)[2][c]));
        }
    }
    b[344] = 'n';
    b[345] = '+';
    b[346] = '1';
    b[347] = '\0';

    std::size_t i = 0;
    for (std::size_t z = 0; z < v.dims[2]; ++z)
        for (std::size_t y = 0; y < v.dims[1]; ++y)
            for (std::size_t x = 0; x < v.dims[0]; ++x, ++i)
                store<float>(b, default_vox_offset + 4 * i, static_cast<float>(v(x, y, z)));
    return b;
}

}  // namespace nifti

inline Volume read_nifti(std::span<const std::uint8_t> bytes) { return nifti::read(bytes); }
inline Bytes write_nifti(const Volume& v) { return nifti::write(v); }

inline Bytes read_file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(errc::io_failure, "cannot open " + p.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(errc::io_failure, "cannot create " + p.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(errc::io_failure, "short write to " + p.string());
}

inline Volume read_nifti_file(const std::filesystem::path& p) { return read_nifti(read_file_bytes(p)); }
inline void write_nifti_file(const std::filesystem::path& p, const Volume& v) { write_file_bytes(p, write_nifti(v)); }

}  // namespace qc
