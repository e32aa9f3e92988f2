#include <numbers>

#include <gtest/gtest.h>

#include "qcpipe/phantom.hpp"
#include "qcpipe/registration.hpp"

using namespace qc;

namespace {

Volume phantom32(std::uint64_t seed) {
    PhantomSpec spec;
    spec.shape = {32, 32, 32};
    spec.seed = seed;
    return generate_phantom(spec);
}

// Moving image whose reference->moving transform is `truth`.
Volume moved(const Volume& ref, const AffineParams& truth) { return warp(ref, AffineMatrix::from(truth).inverse()); }

}  // namespace

TEST(Affine, IdentityMatrix) {
    const AffineParams p;
    const auto m = p.linear();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(m[i][j], i == j ? 1.0 : 0.0);
}

TEST(Affine, DerivativesMatchFiniteDifferences) {
    AffineParams p;
    for (int k = 0; k < AffineParams::count; ++k) p.set(k, 0.05 * (k + 1) * (k % 2 ? -1 : 1));
    for (int k = 3; k < AffineParams::count; ++k) {
        const auto d = p.linear_derivative(k);
        AffineParams hi = p, lo = p;
        hi.set(k, p.get(k) + 1e-6);
        lo.set(k, p.get(k) - 1e-6);
        const auto mh = hi.linear(), ml = lo.linear();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) EXPECT_NEAR(d[i][j], (mh[i][j] - ml[i][j]) / 2e-6, 1e-6) << k;
    }
}

TEST(Affine, InverseComposesToIdentity) {
    AffineParams p;
    p.translation = {1, -2, 3};
    p.rotation = {0.1, -0.05, 0.2};
    p.log_scale = {0.02, -0.03, 0.01};
    const auto f = AffineMatrix::from(p), g = f.inverse();
    const Vec3 x{4, 5, -6};
    Vec3 y{}, z{};
    for (int i = 0; i < 3; ++i) y[i] = f.linear[i][0] * x[0] + f.linear[i][1] * x[1] + f.linear[i][2] * x[2] + f.offset[i];
    for (int i = 0; i < 3; ++i) z[i] = g.linear[i][0] * y[0] + g.linear[i][1] * y[1] + g.linear[i][2] * y[2] + g.offset[i];
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(z[i], x[i], 1e-12);
}

TEST(Affine, CornerErrorOfPureTranslation) {
    const Volume grid({10, 10, 10});
    AffineParams a, b;
    b.translation = {3, 4, 0};
    EXPECT_NEAR(corner_displacement_error(a, b, grid), 5.0, 1e-12);
}

TEST(Registration, SelfIsNearIdentity) {
    const auto ref = phantom32(1);
    const auto r = register_affine(ref, ref);
    for (int a = 0; a < 3; ++a) {
        EXPECT_LT(std::abs(r.params.translation[a]), 0.1);
        EXPECT_LT(std::abs(r.params.rotation[a]), 0.01);
    }
}

TEST(Registration, RecoversTranslation) {
    const auto ref = phantom32(2);
    AffineParams truth;
    truth.translation = {4, 0, 0};
    const auto r = register_affine(moved(ref, truth), ref);
    EXPECT_NEAR(r.params.translation[0], 4.0, 0.5);
    EXPECT_LT(r.final_mse, r.initial_mse);
}

// About x the head outline is most elongated; about z it is nearly circular.
TEST(Registration, RecoversRotationAboutX) {
    for (std::uint64_t seed = 3; seed <= 6; ++seed) {
        const auto ref = phantom32(seed);
        AffineParams truth;
        truth.rotation = {6.0 * std::numbers::pi / 180.0, 0, 0};
        const auto r = register_affine(moved(ref, truth), ref);
        EXPECT_LE(corner_displacement_error(r.params, truth, ref), 0.5) << seed;
    }
}

TEST(Registration, CellCentreLatticeAvoidsIdentityTrap) {
    const auto ref = phantom32(5);
    AffineParams truth;
    truth.rotation = {4.0 * std::numbers::pi / 180.0, 0, 0};
    RegistrationOptions grid;
    grid.cell_centre_lattice = false;
    const auto on = register_affine(moved(ref, truth), ref);
    const auto off = register_affine(moved(ref, truth), ref, grid);
    EXPECT_LT(corner_displacement_error(on.params, truth, ref), corner_displacement_error(off.params, truth, ref));
}

TEST(Registration, ObjectiveNeverIncreases) {
    const auto ref = phantom32(4);
    AffineParams truth;
    truth.translation = {2, -1, 1};
    truth.rotation = {0.05, 0, -0.05};
    const auto r = register_affine(moved(ref, truth), ref);
    ASSERT_EQ(r.objective_trace.size(), 3u);
    for (const auto& level : r.objective_trace)
        for (std::size_t i = 1; i < level.size(); ++i) EXPECT_LT(level[i], level[i - 1]);
}

TEST(Registration, ConstantInputRejected) {
    EXPECT_THROW(register_affine(Volume({8, 8, 8}, {1, 1, 1}, 1.0), phantom32(5)), error);
}
