#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "qcpipe/error.hpp"

namespace qc {

using Shape3 = std::array<std::size_t, 3>;
using Vec3 = std::array<double, 3>;
using Mat4 = std::array<std::array<double, 4>, 4>;

inline Mat4 identity4() {
    Mat4 m{};
    for (int i = 0; i < 4; ++i) m[i][i] = 1.0;
    return m;
}

inline std::size_t voxel_count(const Shape3& s) { return s[0] * s[1] * s[2]; }

// Scalar 3D image. Storage is row-major over (x, y, z): z varies fastest.
struct Volume {
    Shape3 dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<double> data = std::vector<double>(1, 0.0);
    std::optional<Mat4> affine;

    Volume() = default;
    Volume(Shape3 d, Vec3 sp = {1.0, 1.0, 1.0}, double fill = 0.0)
        : dims(d), spacing(sp), data(voxel_count(d), fill) {
        validate_geometry();
    }
    Volume(Shape3 d, Vec3 sp, std::vector<double> values)
        : dims(d), spacing(sp), data(std::move(values)) {
        validate();
    }

    std::size_t size() const { return data.size(); }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return (x * dims[1] + y) * dims[2] + z;
    }
    double& operator()(std::size_t x, std::size_t y, std::size_t z) { return data[index(x, y, z)]; }
    double operator()(std::size_t x, std::size_t y, std::size_t z) const { return data[index(x, y, z)]; }

    // Nearest-edge lookup for signed coordinates.
    double clamped(long x, long y, long z) const {
        auto c = [](long v, std::size_t n) {
            return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
        };
        return (*this)(c(x, dims[0]), c(y, dims[1]), c(z, dims[2]));
    }

    double min() const { return *std::min_element(data.begin(), data.end()); }
    double max() const { return *std::max_element(data.begin(), data.end()); }

    void validate_geometry() const {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] < 1) fail(errc::invalid_argument, "volume dimension must be >= 1");
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
                fail(errc::invalid_argument, "voxel spacing must be positive");
        }
    }

    void validate() const {
        validate_geometry();
        if (data.size() != voxel_count(dims))
            fail(errc::invalid_argument, "volume data length does not match dimensions");
        for (double v : data)
            if (!std::isfinite(v)) fail(errc::non_finite, "volume contains non-finite scalar");
    }

    bool same_geometry(const Volume& o) const { return dims == o.dims && spacing == o.spacing; }
};

}  // namespace qc
