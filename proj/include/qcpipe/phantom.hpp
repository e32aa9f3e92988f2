#pragma once

// Synthetic brain-like phantoms with QC artifacts whose labels are known by construction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qcpipe/labels.hpp"
#include "qcpipe/volume.hpp"

namespace qc {

/// Stateless 64-bit mixer used to derive independent per-sample seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct TissueIntensities {
    double background = 0.02;
    double csf = 0.20;
    double gm = 0.55;
    double wm = 0.75;
};

struct PhantomSpec {
    Shape3 shape{32, 40, 36};
    std::uint64_t seed = 0;
    TissueIntensities tissue;
    Vec3 ellipsoid_radii_fraction{0.80, 0.85, 0.75};

    void validate() const {
        for (auto s : shape)
            if (s < 8) fail(errc::shape_too_small, "phantom dimensions must be >= 8");
        const auto& t = tissue;
        if (!(t.background < t.csf && t.csf < t.gm && t.gm < t.wm) || t.background < 0.0 || t.wm > 1.0)
            fail(errc::invalid_argument, "tissue intensities must satisfy 0 <= background < csf < gm < wm <= 1");
        for (double f : ellipsoid_radii_fraction)
            if (!(f > 0.0 && f <= 1.0)) fail(errc::invalid_argument, "radii fractions must lie in (0, 1]");
    }
};

/// Where the head sits: centre (voxel index) and outer (CSF) semi-axes in voxels.
struct HeadGeometry {
    Vec3 center{};
    Vec3 radii{};
};

// Normalized ellipsoidal radius of each shell boundary.
inline constexpr double wm_shell = 0.60;
inline constexpr double gm_shell = 0.85;

inline HeadGeometry default_geometry(const Shape3& shape, const Vec3& fractions = {0.80, 0.85, 0.75}) {
    HeadGeometry g;
    for (int a = 0; a < 3; ++a) {
        g.center[a] = (static_cast<double>(shape[a]) - 1.0) / 2.0;
        g.radii[a] = fractions[a] * static_cast<double>(shape[a]) / 2.0;
    }
    return g;
}

struct Phantom {
    Volume volume;
    HeadGeometry geometry;
};

/// Nested ellipsoids: WM core, GM shell, CSF rim, plus two small off-centre CSF ventricles.
/// Radii are jittered by up to +-5% per axis from the seed.
inline Phantom generate_phantom_with_geometry(const PhantomSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(splitmix64(spec.seed));
    std::uniform_real_distribution<double> jitter(0.95, 1.05);
    HeadGeometry g = default_geometry(spec.shape, spec.ellipsoid_radii_fraction);
    for (int a = 0; a < 3; ++a) g.radii[a] *= jitter(rng);
    const double vent_offset = 0.22 * jitter(rng);

    Volume v(spec.shape, {1.0, 1.0, 1.0}, spec.tissue.background);
    for (std::size_t x = 0; x < spec.shape[0]; ++x)
        for (std::size_t y = 0; y < spec.shape[1]; ++y)
            for (std::size_t z = 0; z < spec.shape[2]; ++z) {
                const double u = (static_cast<double>(x) - g.center[0]) / g.radii[0];
                const double w = (static_cast<double>(y) - g.center[1]) / g.radii[1];
                const double s = (static_cast<double>(z) - g.center[2]) / g.radii[2];
                const double rho = std::sqrt(u * u + w * w + s * s);
                double val = spec.tissue.background;
                if (rho <= wm_shell) val = spec.tissue.wm;
                else if (rho <= gm_shell) val = spec.tissue.gm;
                else if (rho <= 1.0) val = spec.tissue.csf;
                // ventricles: two ellipsoids either side of the mid-sagittal plane
                for (double side : {-1.0, 1.0}) {
                    const double vu = (u - side * vent_offset) / 0.09, vw = (w - 0.08) / 0.28, vs = s / 0.14;
                    if (vu * vu + vw * vw + vs * vs <= 1.0) val = spec.tissue.csf;
                }
                v(x, y, z) = val;
            }
    return {std::move(v), g};
}

inline Volume generate_phantom(const PhantomSpec& spec) { return generate_phantom_with_geometry(spec).volume; }

inline void check_grade(int grade) {
    if (grade < 0 || grade > 2) fail(errc::invalid_argument, "grade must be 0, 1 or 2");
}

/// Additive Gaussian noise with sigma = grade * sigma0, clamped to [0, 1].
inline Volume inject_noise(const Volume& v, int grade, std::uint64_t seed, double sigma0 = 0.06) {
    check_grade(grade);
    if (grade == 0) return v;
    Volume out = v;
    std::mt19937_64 rng(splitmix64(seed));
    std::normal_distribution<double> n(0.0, grade * sigma0);
    for (double& x : out.data) x = std::clamp(x + n(rng), 0.0, 1.0);
    return out;
}

/// Pulls GM and WM toward their midpoint so the gap shrinks by (1 - 0.45 * grade).
inline Volume inject_contrast_loss(const Volume& v, int grade, double gm_value, double wm_value) {
    check_grade(grade);
    if (grade == 0) return v;
    const double factor = 1.0 - 0.45 * grade;
    const double mid = 0.5 * (gm_value + wm_value);
    const double lo = std::min(gm_value, wm_value), hi = std::max(gm_value, wm_value);
    Volume out = v;
    for (double& x : out.data)
        if (x >= lo && x <= hi) x = mid + (x - mid) * factor;
    return out;
}

/// Ghosting: blend with the mean of three copies shifted by random integer offsets of up to
/// 2 + 2 * grade voxels per axis, blend weight 0.25 * grade. Edges replicate.
inline Volume inject_motion(const Volume& v, int grade, std::uint64_t seed) {
    check_grade(grade);
    if (grade == 0) return v;
    constexpr int copies = 3;
    const int max_shift = 2 + 2 * grade;
    const double w = 0.25 * grade;
    std::mt19937_64 rng(splitmix64(seed ^ 0x6d6f74696f6eULL));
    std::uniform_int_distribution<int> d(-max_shift, max_shift);
    std::array<std::array<int, 3>, copies> shifts{};
    for (auto& s : shifts) {
        do {
            s = {d(rng), d(rng), d(rng)};
        } while (s[0] == 0 && s[1] == 0 && s[2] == 0);
    }
    Volume out = v;
    for (std::size_t x = 0; x < v.dims[0]; ++x)
        for (std::size_t y = 0; y < v.dims[1]; ++y)
            for (std::size_t z = 0; z < v.dims[2]; ++z) {
                double ghost = 0.0;
                for (const auto& s : shifts)
                    ghost += v.clamped(static_cast<long>(x) - s[0], static_cast<long>(y) - s[1], static_cast<long>(z) - s[2]);
                out(x, y, z) = (1.0 - w) * v(x, y, z) + w * ghost / copies;
            }
    return out;
}

inline constexpr double gadolinium_intensity = 0.95;

/// Paints 2-4 bright tubes (radius 1-2 voxels) along arcs inside the GM/CSF shell.
inline Volume inject_gadolinium(const Volume& v, std::uint64_t seed, std::optional<HeadGeometry> geometry = std::nullopt) {
    const HeadGeometry g = geometry ? *geometry : default_geometry(v.dims);
    std::mt19937_64 rng(splitmix64(seed ^ 0x6761646fULL));
    std::uniform_int_distribution<int> n_tubes(2, 4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto random_unit = [&] {
        Vec3 r{gauss(rng), gauss(rng), gauss(rng)};
        const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        for (double& c : r) c /= n;
        return r;
    };

    Volume out = v;
    const int tubes = n_tubes(rng);
    for (int t = 0; t < tubes; ++t) {
        // Orthonormal pair spanning the arc's plane.
        const Vec3 a = random_unit();
        Vec3 b = random_unit();
        const double dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        for (int i = 0; i < 3; ++i) b[i] -= dot * a[i];
        const double bn = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
        for (double& c : b) c /= bn;

        const double shell = 0.88 + 0.09 * unit(rng);
        const double radius = 1.0 + unit(rng);
        const double start = 2.0 * std::numbers::pi * unit(rng);
        const double arc = 1.0 + unit(rng);
        const double wiggle = 0.03 * unit(rng);
        const double mean_r = (g.radii[0] + g.radii[1] + g.radii[2]) / 3.0;
        const int samples = std::max(8, static_cast<int>(std::ceil(arc * shell * mean_r / 0.5)));
        for (int s = 0; s <= samples; ++s) {
            const double th = start + arc * s / samples;
            const double rho = shell + wiggle * std::sin(5.0 * th);
            Vec3 p{};
            for (int i = 0; i < 3; ++i) p[i] = g.center[i] + rho * g.radii[i] * (std::cos(th) * a[i] + std::sin(th) * b[i]);
            const long r = static_cast<long>(std::ceil(radius));
            for (long dx = -r; dx <= r; ++dx)
                for (long dy = -r; dy <= r; ++dy)
                    for (long dz = -r; dz <= r; ++dz) {
                        const long x = std::lround(p[0]) + dx, y = std::lround(p[1]) + dy, z = std::lround(p[2]) + dz;
                        if (x < 0 || y < 0 || z < 0 || x >= static_cast<long>(v.dims[0]) ||
                            y >= static_cast<long>(v.dims[1]) || z >= static_cast<long>(v.dims[2]))
                            continue;
                        const double ex = x - p[0], ey = y - p[1], ez = z - p[2];
                        if (ex * ex + ey * ey + ez * ez <= radius * radius)
                            out(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) =
                                gadolinium_intensity;
                    }
        }
    }
    return out;
}

enum class SrMode { truncated, segmented };

/// Straight-reject look-alikes: a 40-60% block of slices zeroed at one end of a random axis,
/// or a binary tissue mask thresholded at `threshold` (default: GM/WM midpoint).
inline Volume make_sr_variant(const Volume& v, SrMode mode, std::uint64_t seed, double threshold = 0.65) {
    Volume out = v;
    if (mode == SrMode::segmented) {
        for (double& x : out.data) x = x >= threshold ? 1.0 : 0.0;
        return out;
    }
    std::mt19937_64 rng(splitmix64(seed ^ 0x7472756eULL));
    const int axis = std::uniform_int_distribution<int>(0, 2)(rng);
    const double frac = std::uniform_real_distribution<double>(0.40, 0.60)(rng);
    const bool low_end = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    const std::size_t n = v.dims[axis];
    const std::size_t count = std::min(n, static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n))));
    const std::size_t first = low_end ? 0 : n - count;
    for (std::size_t x = 0; x < v.dims[0]; ++x)
        for (std::size_t y = 0; y < v.dims[1]; ++y)
            for (std::size_t z = 0; z < v.dims[2]; ++z) {
                const std::size_t idx[3] = {x, y, z};
                if (idx[axis] >= first && idx[axis] < first + count) out(x, y, z) = 0.0;
            }
    return out;
}

struct ArtifactSpec {
    int noise_grade = 0;
    int contrast_grade = 0;
    int motion_grade = 0;
    bool gadolinium = false;
    std::optional<SrMode> sr_mode;
    std::uint64_t seed = 0;
};

/// Applies contrast -> motion -> noise -> gadolinium, then the SR transform if requested.
inline Volume apply_artifacts(const Phantom& base, const ArtifactSpec& a, const TissueIntensities& tissue = {}) {
    Volume v = inject_contrast_loss(base.volume, a.contrast_grade, tissue.gm, tissue.wm);
    v = inject_motion(v, a.motion_grade, a.seed ^ 0x1);
    v = inject_noise(v, a.noise_grade, a.seed ^ 0x2);
    if (a.gadolinium) v = inject_gadolinium(v, a.seed ^ 0x3, base.geometry);
    if (a.sr_mode) v = make_sr_variant(v, *a.sr_mode, a.seed ^ 0x4, 0.5 * (tissue.gm + tissue.wm));
    return v;
}

struct ClassMix {
    double sr = 0.26;
    double tier1 = 0.16;
    double tier2 = 0.28;
    double tier3 = 0.30;

    void validate() const {
        const double s = sr + tier1 + tier2 + tier3;
        if (sr < 0 || tier1 < 0 || tier2 < 0 || tier3 < 0 || std::abs(s - 1.0) > 1e-9)
            fail(errc::invalid_mix, "class proportions must be non-negative and sum to 1");
    }
};

/// Integer counts summing to n, proportional to `weights` (largest remainder).
inline std::vector<std::size_t> proportional_counts(std::size_t n, const std::vector<double>& weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::size_t> counts(weights.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(n) * weights[i] / total;
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        used += counts[i];
        rem.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; used < n; ++k, ++used) ++counts[rem[k % rem.size()].second];
    return counts;
}

struct LabeledSample {
    std::string image_id;
    std::string patient_id;
    Volume volume;
    ConsensusLabel label;
    ArtifactSpec artifacts;
};

struct LabeledDataset {
    std::vector<LabeledSample> samples;
    std::vector<int> patient_multiplicity;  // images per patient, in patient order
};

/// Draws grades uniformly among the combinations that produce `tier`.
inline Grades sample_grades_for_tier(Tier tier, std::mt19937_64& rng) {
    std::vector<Grades> options;
    for (int m = 0; m <= 2; ++m)
        for (int c = 0; c <= 2; ++c)
            for (int n = 0; n <= 2; ++n)
                if (tier_from_grades({m, c, n}) == tier) options.push_back({m, c, n});
    return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
}

// Probability of gadolinium given tier, from the consensus label distribution of the source cohort.
inline double gadolinium_rate(Tier t) {
    switch (t) {
    case Tier::tier1: return 0.41;
    case Tier::tier2: return 0.53;
    case Tier::tier3: return 0.76;
    }
    return 0.5;
}

/// Builds one sample from its derived seed; identical for serial or parallel generation.
inline LabeledSample make_labeled_sample(std::size_t index, int cls, const Shape3& shape, std::uint64_t seed,
                                         const TissueIntensities& tissue) {
    const std::uint64_t sample_seed = splitmix64(seed ^ static_cast<std::uint64_t>(index));
    std::mt19937_64 rng(sample_seed);
    PhantomSpec ps;
    ps.shape = shape;
    ps.seed = sample_seed;
    ps.tissue = tissue;
    const Phantom base = generate_phantom_with_geometry(ps);

    LabeledSample s;
    ArtifactSpec a;
    a.seed = splitmix64(sample_seed + 1);
    if (cls == 0) {
        const Tier underlying = static_cast<Tier>(std::uniform_int_distribution<int>(1, 3)(rng));
        const Grades g = sample_grades_for_tier(underlying, rng);
        a.motion_grade = g.motion;
        a.contrast_grade = g.contrast;
        a.noise_grade = g.noise;
        a.gadolinium = std::bernoulli_distribution(0.5)(rng);
        a.sr_mode = std::bernoulli_distribution(0.5)(rng) ? SrMode::truncated : SrMode::segmented;
        s.label.straight_reject = true;
    } else {
        const Tier tier = static_cast<Tier>(cls);
        const Grades g = sample_grades_for_tier(tier, rng);
        a.motion_grade = g.motion;
        a.contrast_grade = g.contrast;
        a.noise_grade = g.noise;
        a.gadolinium = std::bernoulli_distribution(gadolinium_rate(tier))(rng);
        s.label.gadolinium = a.gadolinium;
        s.label.grades = g;
        s.label.tier = tier_from_grades(g);
    }
    s.artifacts = a;
    s.volume = apply_artifacts(base, a, tissue);
    return s;
}

/// n labeled phantoms with class proportions `mix` (SR, tier 1, tier 2, tier 3) and 1-3 images
/// per synthetic patient.
inline LabeledDataset generate_labeled_dataset(std::size_t n, const Shape3& shape, const ClassMix& mix,
                                               std::uint64_t seed, const TissueIntensities& tissue = {}) {
    mix.validate();
    for (auto s : shape)
        if (s < 8) fail(errc::shape_too_small, "phantom dimensions must be >= 8");
    const auto counts = proportional_counts(n, {mix.sr, mix.tier1, mix.tier2, mix.tier3});
    std::vector<int> classes;
    for (int c = 0; c < 4; ++c) classes.insert(classes.end(), counts[c], c);
    std::mt19937_64 rng(splitmix64(seed ^ 0x646174617365ULL));
    std::shuffle(classes.begin(), classes.end(), rng);

    LabeledDataset ds;
    std::uniform_int_distribution<int> mult(1, 3);
    std::size_t assigned = 0;
    while (assigned < n) {
        const int k = static_cast<int>(std::min<std::size_t>(mult(rng), n - assigned));
        ds.patient_multiplicity.push_back(k);
        assigned += static_cast<std::size_t>(k);
    }

    ds.samples.reserve(n);
    std::size_t index = 0;
    for (std::size_t p = 0; p < ds.patient_multiplicity.size(); ++p) {
        char pid[16];
        std::snprintf(pid, sizeof pid, "sub-%05zu", p);
        for (int k = 0; k < ds.patient_multiplicity[p]; ++k, ++index) {
            LabeledSample s = make_labeled_sample(index, classes[index], shape, seed, tissue);
            char iid[16];
            std::snprintf(iid, sizeof iid, "img-%05zu", index);
            s.image_id = iid;
            s.patient_id = pid;
            s.label.image_id = iid;
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

}  // namespace qc
