#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "qcpipe/volume.hpp"

namespace qc {

enum class Interpolation { trilinear, cubic };

/// Trilinear sample at a continuous voxel index. Coordinates outside the grid clamp to the edge.
inline double sample_trilinear(const Volume& v, double x, double y, double z) {
    const std::array<double, 3> p{x, y, z};
    std::array<std::size_t, 3> i0{}, i1{};
    std::array<double, 3> t{};
    for (int a = 0; a < 3; ++a) {
        const double hi = static_cast<double>(v.dims[a] - 1);
        const double c = std::clamp(p[a], 0.0, hi);
        const double f = std::floor(c);
        i0[a] = static_cast<std::size_t>(f);
        i1[a] = std::min(i0[a] + 1, v.dims[a] - 1);
        t[a] = c - f;
    }
    auto at = [&](std::size_t a, std::size_t b, std::size_t c) { return v(a, b, c); };
    // Exact lookups stay bit-exact when every fractional part is zero.
    if (t[0] == 0.0 && t[1] == 0.0 && t[2] == 0.0) return at(i0[0], i0[1], i0[2]);
    const double c00 = at(i0[0], i0[1], i0[2]) * (1 - t[2]) + at(i0[0], i0[1], i1[2]) * t[2];
    const double c01 = at(i0[0], i1[1], i0[2]) * (1 - t[2]) + at(i0[0], i1[1], i1[2]) * t[2];
    const double c10 = at(i1[0], i0[1], i0[2]) * (1 - t[2]) + at(i1[0], i0[1], i1[2]) * t[2];
    const double c11 = at(i1[0], i1[1], i0[2]) * (1 - t[2]) + at(i1[0], i1[1], i1[2]) * t[2];
    const double c0 = c00 * (1 - t[1]) + c01 * t[1];
    const double c1 = c10 * (1 - t[1]) + c11 * t[1];
    return c0 * (1 - t[0]) + c1 * t[0];
}

namespace detail {
// Catmull-Rom cubic convolution weights (a = -0.5) for taps at offsets -1, 0, 1, 2.
inline std::array<double, 4> catmull_rom(double t) {
    const double t2 = t * t, t3 = t2 * t;
    return {-0.5 * t3 + t2 - 0.5 * t, 1.5 * t3 - 2.5 * t2 + 1.0, -1.5 * t3 + 2.0 * t2 + 0.5 * t, 0.5 * t3 - 0.5 * t2};
}
}  // namespace detail

inline double sample_cubic(const Volume& v, double x, double y, double z) {
    const std::array<double, 3> p{x, y, z};
    std::array<long, 3> base{};
    std::array<std::array<double, 4>, 3> w{};
    for (int a = 0; a < 3; ++a) {
        const double c = std::clamp(p[a], 0.0, static_cast<double>(v.dims[a] - 1));
        const double f = std::floor(c);
        base[a] = static_cast<long>(f) - 1;
        w[a] = detail::catmull_rom(c - f);
    }
    double acc = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            const double wij = w[0][i] * w[1][j];
            if (wij == 0.0) continue;
            for (int k = 0; k < 4; ++k) acc += wij * w[2][k] * v.clamped(base[0] + i, base[1] + j, base[2] + k);
        }
    return acc;
}

inline double sample(const Volume& v, double x, double y, double z, Interpolation m) {
    return m == Interpolation::cubic ? sample_cubic(v, x, y, z) : sample_trilinear(v, x, y, z);
}

/// Resamples to isotropic `spacing`. Output voxel i sits at input index i * spacing / in_spacing,
/// so voxel 0 of both grids coincides.
inline Volume resample_isotropic(const Volume& v, double spacing, Interpolation method = Interpolation::trilinear) {
    if (!(spacing > 0.0)) fail(errc::invalid_argument, "target spacing must be positive");
    Shape3 dims{};
    Vec3 ratio{};
    for (int a = 0; a < 3; ++a) {
        const double n = std::round(static_cast<double>(v.dims[a]) * v.spacing[a] / spacing);
        dims[a] = static_cast<std::size_t>(std::max(1.0, n));
        ratio[a] = spacing / v.spacing[a];
    }
    Volume out(dims, {spacing, spacing, spacing});
    for (std::size_t x = 0; x < dims[0]; ++x)
        for (std::size_t y = 0; y < dims[1]; ++y)
            for (std::size_t z = 0; z < dims[2]; ++z)
                out(x, y, z) = sample(v, static_cast<double>(x) * ratio[0], static_cast<double>(y) * ratio[1],
                                      static_cast<double>(z) * ratio[2], method);
    if (v.affine) {
        Mat4 m = *v.affine;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m[r][c] *= ratio[c];
        out.affine = m;
    }
    return out;
}

/// Maps intensities to [0, 1] by the volume's own min and max; a constant volume becomes zeros.
inline Volume rescale_minmax(const Volume& v) {
    Volume out = v;
    const double lo = v.min(), hi = v.max();
    if (!(hi > lo)) {
        std::fill(out.data.begin(), out.data.end(), 0.0);
        return out;
    }
    const double range = hi - lo;
    for (double& x : out.data) x = (x - lo) / range;
    return out;
}

/// Centered crop or symmetric zero pad to `shape`. An odd difference puts the extra voxel on
/// the high-index side.
inline Volume crop_or_pad(const Volume& v, const Shape3& shape) {
    for (auto s : shape)
        if (s < 1) fail(errc::invalid_argument, "target shape must be >= 1 on every axis");
    // offset[a]: input index that lands on output index 0 (negative when padding)
    std::array<long, 3> offset{};
    for (int a = 0; a < 3; ++a) {
        const long in = static_cast<long>(v.dims[a]), out = static_cast<long>(shape[a]);
        offset[a] = in >= out ? (in - out) / 2 : -((out - in) / 2);
    }
    Volume out(shape, v.spacing, 0.0);
    for (std::size_t x = 0; x < shape[0]; ++x) {
        const long sx = static_cast<long>(x) + offset[0];
        if (sx < 0 || sx >= static_cast<long>(v.dims[0])) continue;
        for (std::size_t y = 0; y < shape[1]; ++y) {
            const long sy = static_cast<long>(y) + offset[1];
            if (sy < 0 || sy >= static_cast<long>(v.dims[1])) continue;
            for (std::size_t z = 0; z < shape[2]; ++z) {
                const long sz = static_cast<long>(z) + offset[2];
                if (sz < 0 || sz >= static_cast<long>(v.dims[2])) continue;
                out(x, y, z) = v(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy), static_cast<std::size_t>(sz));
            }
        }
    }
    if (v.affine) {
        Mat4 m = *v.affine;
        for (int r = 0; r < 3; ++r)
            m[r][3] += m[r][0] * offset[0] + m[r][1] * offset[1] + m[r][2] * offset[2];
        out.affine = m;
    }
    return out;
}

}  // namespace qc
