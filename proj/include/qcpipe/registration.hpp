#pragma once

// Intensity-based affine registration: mean squared error, coarse-to-fine pyramid (4, 2, 1),
// normalized gradient descent with step halving. Coordinates are physical millimetres
// relative to each volume's centre.

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "qcpipe/resample.hpp"
#include "qcpipe/volume.hpp"

namespace qc {

using Mat3 = std::array<std::array<double, 3>, 3>;

namespace detail {

inline Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline Mat3 eye3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

inline Mat3 rot_x(double a, bool deriv = false) {
    const double c = std::cos(a), s = std::sin(a);
    if (deriv) return {{{0, 0, 0}, {0, -s, -c}, {0, c, -s}}};
    return {{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
}
inline Mat3 rot_y(double a, bool deriv = false) {
    const double c = std::cos(a), s = std::sin(a);
    if (deriv) return {{{-s, 0, c}, {0, 0, 0}, {-c, 0, -s}}};
    return {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
}
inline Mat3 rot_z(double a, bool deriv = false) {
    const double c = std::cos(a), s = std::sin(a);
    if (deriv) return {{{-s, -c, 0}, {c, -s, 0}, {0, 0, 0}}};
    return {{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
}

inline double det3(const Mat3& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

inline Mat3 inverse3(const Mat3& m) {
    const double d = det3(m);
    Mat3 r{};
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / d;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / d;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / d;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
    return r;
}

}  // namespace detail

/// Twelve-parameter affine map x -> M x + t with M = Rz Ry Rx * Shear * diag(exp(log_scale)).
struct AffineParams {
    Vec3 translation{};  // mm
    Vec3 rotation{};     // radians about x, y, z
    Vec3 log_scale{};
    Vec3 shear{};        // xy, xz, yz entries of the unit upper-triangular shear

    static constexpr int count = 12;

    double get(int k) const {
        const Vec3* groups[] = {&translation, &rotation, &log_scale, &shear};
        return (*groups[k / 3])[k % 3];
    }
    void set(int k, double v) {
        Vec3* groups[] = {&translation, &rotation, &log_scale, &shear};
        (*groups[k / 3])[k % 3] = v;
    }

    Mat3 shear_matrix() const { return {{{1, shear[0], shear[1]}, {0, 1, shear[2]}, {0, 0, 1}}}; }
    Mat3 scale_matrix() const {
        return {{{std::exp(log_scale[0]), 0, 0}, {0, std::exp(log_scale[1]), 0}, {0, 0, std::exp(log_scale[2])}}};
    }
    Mat3 rotation_matrix() const {
        using namespace detail;
        return mul(rot_z(rotation[2]), mul(rot_y(rotation[1]), rot_x(rotation[0])));
    }
    Mat3 linear() const { return detail::mul(rotation_matrix(), detail::mul(shear_matrix(), scale_matrix())); }

    /// d(linear())/d(parameter k) for k in [3, 12); translations do not enter the linear part.
    Mat3 linear_derivative(int k) const {
        using namespace detail;
        const Mat3 sh = shear_matrix(), sc = scale_matrix();
        if (k < 6) {
            const int axis = k - 3;
            const Mat3 rx = rot_x(rotation[0], axis == 0), ry = rot_y(rotation[1], axis == 1),
                       rz = rot_z(rotation[2], axis == 2);
            return mul(mul(rz, mul(ry, rx)), mul(sh, sc));
        }
        if (k < 9) {
            Mat3 ds{};
            ds[k - 6][k - 6] = sc[k - 6][k - 6];
            return mul(rotation_matrix(), mul(sh, ds));
        }
        Mat3 dsh{};
        const int r[] = {0, 0, 1}, c[] = {1, 2, 2};
        dsh[r[k - 9]][c[k - 9]] = 1.0;
        return mul(rotation_matrix(), mul(dsh, sc));
    }

    Vec3 apply(const Vec3& p) const {
        const Mat3 m = linear();
        Vec3 q{};
        for (int i = 0; i < 3; ++i) q[i] = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + translation[i];
        return q;
    }

    Mat4 matrix() const {
        const Mat3 m = linear();
        Mat4 out = identity4();
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) out[i][j] = m[i][j];
            out[i][3] = translation[i];
        }
        return out;
    }
};

/// Physical coordinate (mm, centred) of voxel index `i` on a grid of `n` voxels.
inline double centred_coordinate(double i, std::size_t n, double spacing) {
    return (i - (static_cast<double>(n) - 1.0) / 2.0) * spacing;
}

/// Resamples `moving` onto the grid of `reference` through `t` (reference -> moving coordinates).
inline Volume apply_affine(const Volume& moving, const Volume& reference_grid, const AffineParams& t) {
    Volume out(reference_grid.dims, reference_grid.spacing, 0.0);
    const Mat3 m = t.linear();
    for (std::size_t x = 0; x < out.dims[0]; ++x)
        for (std::size_t y = 0; y < out.dims[1]; ++y)
            for (std::size_t z = 0; z < out.dims[2]; ++z) {
                const Vec3 p{centred_coordinate(static_cast<double>(x), out.dims[0], out.spacing[0]),
                             centred_coordinate(static_cast<double>(y), out.dims[1], out.spacing[1]),
                             centred_coordinate(static_cast<double>(z), out.dims[2], out.spacing[2])};
                Vec3 idx{};
                for (int i = 0; i < 3; ++i) {
                    const double q = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + t.translation[i];
                    idx[i] = q / moving.spacing[i] + (static_cast<double>(moving.dims[i]) - 1.0) / 2.0;
                }
                out(x, y, z) = sample_trilinear(moving, idx[0], idx[1], idx[2]);
            }
    out.affine = reference_grid.affine;
    return out;
}

/// Mean displacement, in voxels of the reference grid, between two transforms at the grid's 8 corners.
inline double corner_displacement_error(const AffineParams& a, const AffineParams& b, const Volume& grid) {
    double total = 0.0;
    for (int c = 0; c < 8; ++c) {
        Vec3 p{};
        for (int i = 0; i < 3; ++i) {
            const double idx = (c >> i) & 1 ? static_cast<double>(grid.dims[i] - 1) : 0.0;
            p[i] = centred_coordinate(idx, grid.dims[i], grid.spacing[i]);
        }
        const Vec3 qa = a.apply(p), qb = b.apply(p);
        double d2 = 0.0;
        for (int i = 0; i < 3; ++i) d2 += std::pow((qa[i] - qb[i]) / grid.spacing[i], 2);
        total += std::sqrt(d2);
    }
    return total / 8.0;
}

/// Inverse of an affine map as a general matrix-plus-offset (not re-parameterized).
struct AffineMatrix {
    Mat3 linear;
    Vec3 offset;

    static AffineMatrix from(const AffineParams& p) { return {p.linear(), p.translation}; }

    AffineMatrix inverse() const {
        AffineMatrix r{detail::inverse3(linear), {}};
        for (int i = 0; i < 3; ++i)
            r.offset[i] = -(r.linear[i][0] * offset[0] + r.linear[i][1] * offset[1] + r.linear[i][2] * offset[2]);
        return r;
    }
};

/// Resamples `source` so that result(x) = source(map(x)), on `source`'s own grid.
inline Volume warp(const Volume& source, const AffineMatrix& map) {
    Volume out(source.dims, source.spacing, 0.0);
    for (std::size_t x = 0; x < out.dims[0]; ++x)
        for (std::size_t y = 0; y < out.dims[1]; ++y)
            for (std::size_t z = 0; z < out.dims[2]; ++z) {
                const Vec3 p{centred_coordinate(static_cast<double>(x), out.dims[0], out.spacing[0]),
                             centred_coordinate(static_cast<double>(y), out.dims[1], out.spacing[1]),
                             centred_coordinate(static_cast<double>(z), out.dims[2], out.spacing[2])};
                Vec3 idx{};
                for (int i = 0; i < 3; ++i) {
                    const double q = map.linear[i][0] * p[0] + map.linear[i][1] * p[1] + map.linear[i][2] * p[2] +
                                     map.offset[i];
                    idx[i] = q / source.spacing[i] + (static_cast<double>(source.dims[i]) - 1.0) / 2.0;
                }
                out(x, y, z) = sample_trilinear(source, idx[0], idx[1], idx[2]);
            }
    return out;
}

struct RegistrationOptions {
    std::vector<int> pyramid{4, 2, 1};
    int max_iterations = 200;  // per level
    double initial_step = 0.1;  // normalized parameter units
    double min_step = 1e-5;
    bool cell_centre_lattice = true;  // evaluate at reference cell centres rather than voxels
    double nonconvergence_rel_decrease = 1e-3;
};

struct RegistrationResult {
    AffineParams params;
    Volume registered;
    double initial_mse = 0.0;
    double final_mse = 0.0;
    bool converged = true;  // false: iteration cap hit while the objective was still dropping
    std::vector<std::vector<double>> objective_trace;  // accepted objective values, per level
};

namespace detail {

// One pyramid level: block-averaged image on a uniform grid in centred physical coordinates.
struct PyramidLevel {
    Volume image;
    Vec3 origin{};  // physical coordinate of voxel 0
    Vec3 step{};    // physical distance between voxels
};

inline PyramidLevel make_level(const Volume& v, int factor) {
    PyramidLevel lvl;
    const auto f = static_cast<std::size_t>(factor);
    Shape3 dims{};
    for (int a = 0; a < 3; ++a) {
        dims[a] = (v.dims[a] + f - 1) / f;
        lvl.step[a] = v.spacing[a] * factor;
        lvl.origin[a] = centred_coordinate((factor - 1) / 2.0, v.dims[a], v.spacing[a]);
    }
    if (factor == 1) {
        lvl.image = v;
        return lvl;
    }
    Volume out(dims, {lvl.step[0], lvl.step[1], lvl.step[2]}, 0.0);
    for (std::size_t x = 0; x < dims[0]; ++x)
        for (std::size_t y = 0; y < dims[1]; ++y)
            for (std::size_t z = 0; z < dims[2]; ++z) {
                double sum = 0.0;
                std::size_t n = 0;
                for (std::size_t i = x * f; i < std::min((x + 1) * f, v.dims[0]); ++i)
                    for (std::size_t j = y * f; j < std::min((y + 1) * f, v.dims[1]); ++j)
                        for (std::size_t k = z * f; k < std::min((z + 1) * f, v.dims[2]); ++k, ++n) sum += v(i, j, k);
                out(x, y, z) = sum / static_cast<double>(n);
            }
    lvl.image = std::move(out);
    return lvl;
}

// The level resampled at cell centres (half a voxel along each axis). Evaluating the objective
// there keeps moving samples off the grid nodes at identity, where trilinear interpolation has
// kinks and zero smoothing.
inline PyramidLevel cell_centres(const PyramidLevel& lvl) {
    const Volume& v = lvl.image;
    Shape3 dims{};
    PyramidLevel out;
    for (int a = 0; a < 3; ++a) {
        dims[a] = v.dims[a] > 1 ? v.dims[a] - 1 : 1;
        out.step[a] = lvl.step[a];
        out.origin[a] = lvl.origin[a] + (v.dims[a] > 1 ? 0.5 * lvl.step[a] : 0.0);
    }
    out.image = Volume(dims, v.spacing, 0.0);
    for (std::size_t x = 0; x < dims[0]; ++x)
        for (std::size_t y = 0; y < dims[1]; ++y)
            for (std::size_t z = 0; z < dims[2]; ++z)
                out.image(x, y, z) = sample_trilinear(v, static_cast<double>(x) + (v.dims[0] > 1 ? 0.5 : 0.0),
                                                      static_cast<double>(y) + (v.dims[1] > 1 ? 0.5 : 0.0),
                                                      static_cast<double>(z) + (v.dims[2] > 1 ? 0.5 : 0.0));
    return out;
}

// Trilinear value and index-space gradient; clamped axes contribute zero derivative.
inline double sample_with_gradient(const Volume& v, const Vec3& p, Vec3& grad) {
    std::array<std::size_t, 3> i0{}, i1{};
    std::array<double, 3> t{};
    std::array<bool, 3> inside{};
    for (int a = 0; a < 3; ++a) {
        const double hi = static_cast<double>(v.dims[a] - 1);
        inside[a] = p[a] >= 0.0 && p[a] <= hi && v.dims[a] > 1;
        const double c = std::clamp(p[a], 0.0, hi);
        double f = std::floor(c);
        if (f >= hi && v.dims[a] > 1) f = hi - 1;  // keep the upper cell for the last sample
        i0[a] = static_cast<std::size_t>(f);
        i1[a] = std::min(i0[a] + 1, v.dims[a] - 1);
        t[a] = c - f;
    }
    double c[2][2][2];
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int d = 0; d < 2; ++d) c[a][b][d] = v(a ? i1[0] : i0[0], b ? i1[1] : i0[1], d ? i1[2] : i0[2]);
    const double wx[2] = {1 - t[0], t[0]}, wy[2] = {1 - t[1], t[1]}, wz[2] = {1 - t[2], t[2]};
    const double dwx[2] = {-1, 1}, dwy[2] = {-1, 1}, dwz[2] = {-1, 1};
    double val = 0.0;
    grad = {0.0, 0.0, 0.0};
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int d = 0; d < 2; ++d) {
                val += wx[a] * wy[b] * wz[d] * c[a][b][d];
                grad[0] += dwx[a] * wy[b] * wz[d] * c[a][b][d];
                grad[1] += wx[a] * dwy[b] * wz[d] * c[a][b][d];
                grad[2] += wx[a] * wy[b] * dwz[d] * c[a][b][d];
            }
    for (int a = 0; a < 3; ++a)
        if (!inside[a]) grad[a] = 0.0;
    return val;
}

// Overlap-weighted mean squared error between moving(T x) and reference(x): each reference voxel
// is weighted by how far inside the moving grid it lands, ramping from 0 half a voxel outside the
// edge to 1 half a voxel inside, so field-of-view cropping neither biases nor breaks the gradient.
// `grad` receives the analytic derivative with respect to the 12 raw parameters. Returns infinity
// without overlap.
inline double mse_objective(const PyramidLevel& moving, const PyramidLevel& reference, const AffineParams& t,
                            std::array<double, AffineParams::count>* grad) {
    const Mat3 m = t.linear();
    const Volume& ref = reference.image;
    const Volume& mov = moving.image;
    double sum = 0.0, weight = 0.0;
    Vec3 g_trans{}, w_trans{};
    Mat3 g_lin{}, w_lin{};  // sums of d(w r^2)/dq p^T and dw/dq p^T
    Vec3 gi{};
    for (std::size_t x = 0; x < ref.dims[0]; ++x) {
        const double px = reference.origin[0] + static_cast<double>(x) * reference.step[0];
        for (std::size_t y = 0; y < ref.dims[1]; ++y) {
            const double py = reference.origin[1] + static_cast<double>(y) * reference.step[1];
            for (std::size_t z = 0; z < ref.dims[2]; ++z) {
                const double pz = reference.origin[2] + static_cast<double>(z) * reference.step[2];
                Vec3 idx{}, wa{}, dwa{};
                bool outside = false;
                for (int i = 0; i < 3; ++i) {
                    const double q = m[i][0] * px + m[i][1] * py + m[i][2] * pz + t.translation[i];
                    idx[i] = (q - moving.origin[i]) / moving.step[i];
                    const double lo = idx[i] + 0.5, hi = static_cast<double>(mov.dims[i]) - 0.5 - idx[i];
                    const double d = std::min(lo, hi);
                    if (d <= 0.0) {
                        outside = true;
                        break;
                    }
                    wa[i] = std::min(d, 1.0);
                    dwa[i] = d >= 1.0 ? 0.0 : (lo < hi ? 1.0 : -1.0);
                }
                if (outside) continue;
                const double w = wa[0] * wa[1] * wa[2];
                const double r = (grad ? sample_with_gradient(mov, idx, gi) : sample_trilinear(mov, idx[0], idx[1], idx[2])) -
                                 ref(x, y, z);
                sum += w * r * r;
                weight += w;
                if (grad) {
                    for (int i = 0; i < 3; ++i) {
                        const double dw = dwa[i] * wa[(i + 1) % 3] * wa[(i + 2) % 3] / moving.step[i];
                        const double gq = 2.0 * w * r * gi[i] / moving.step[i] + r * r * dw;
                        g_trans[i] += gq;
                        g_lin[i][0] += gq * px;
                        g_lin[i][1] += gq * py;
                        g_lin[i][2] += gq * pz;
                        w_trans[i] += dw;
                        w_lin[i][0] += dw * px;
                        w_lin[i][1] += dw * py;
                        w_lin[i][2] += dw * pz;
                    }
                }
            }
        }
    }
    if (weight <= 0.0) {
        if (grad) grad->fill(0.0);
        return std::numeric_limits<double>::infinity();
    }
    const double f = sum / weight;
    if (grad) {
        // d(S / W) = (dS - f dW) / W
        for (int i = 0; i < 3; ++i) (*grad)[i] = (g_trans[i] - f * w_trans[i]) / weight;
        for (int k = 3; k < AffineParams::count; ++k) {
            const Mat3 dm = t.linear_derivative(k);
            double acc = 0.0;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) acc += dm[i][j] * (g_lin[i][j] - f * w_lin[i][j]);
            (*grad)[k] = acc / weight;
        }
    }
    return f;
}

}  // namespace detail

/// Registers `moving` to `reference`. Returns the reference -> moving transform and `moving`
/// resampled onto the reference grid. Deterministic for identical inputs.
inline RegistrationResult register_affine(const Volume& moving, const Volume& reference,
                                          const RegistrationOptions& opt = {}) {
    if (!(moving.max() > moving.min()) || !(reference.max() > reference.min()))
        fail(errc::invalid_argument, "registration needs non-constant volumes");

    // One normalized unit moves a point at the typical radius by about one radius.
    double radius = 0.0;
    for (int a = 0; a < 3; ++a) radius += 0.5 * static_cast<double>(reference.dims[a] - 1) * reference.spacing[a] / 3.0;
    radius = std::max(radius, 1e-6);
    std::array<double, AffineParams::count> scale{};
    for (int k = 0; k < AffineParams::count; ++k) scale[k] = k < 3 ? radius : 1.0;

    RegistrationResult res;
    AffineParams params;
    for (std::size_t li = 0; li < opt.pyramid.size(); ++li) {
        const int factor = opt.pyramid[li];
        const auto mov = detail::make_level(moving, factor);
        auto ref = detail::make_level(reference, factor);
        if (opt.cell_centre_lattice) ref = detail::cell_centres(ref);
        const bool finest = li + 1 == opt.pyramid.size();

        std::array<double, AffineParams::count> g{};
        double f = detail::mse_objective(mov, ref, params, &g);
        if (li == 0) res.initial_mse = f;
        std::vector<double> trace{f};
        double step = opt.initial_step;
        int it = 0;
        for (; it < opt.max_iterations && step >= opt.min_step; ++it) {
            double norm = 0.0;
            for (int k = 0; k < AffineParams::count; ++k) norm += std::pow(g[k] * scale[k], 2);
            norm = std::sqrt(norm);
            if (norm == 0.0) break;
            AffineParams trial = params;
            for (int k = 0; k < AffineParams::count; ++k)
                trial.set(k, params.get(k) - step * scale[k] * (g[k] * scale[k]) / norm);
            std::array<double, AffineParams::count> g_trial{};
            const double f_trial = detail::mse_objective(mov, ref, trial, &g_trial);
            if (f_trial < f) {
                params = trial;
                f = f_trial;
                g = g_trial;
                trace.push_back(f);
            } else {
                step *= 0.5;
            }
        }
        if (finest && it >= opt.max_iterations && trace.size() > 10) {
            const double before = trace[trace.size() - 11];
            if (before > 0.0 && (before - trace.back()) / before > opt.nonconvergence_rel_decrease) res.converged = false;
        }
        res.objective_trace.push_back(std::move(trace));
        res.final_mse = f;
    }
    res.params = params;
    res.registered = apply_affine(moving, reference, params);
    return res;
}

}  // namespace qc
