#include "mfgm/hjb.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace mfgm;
using mfgm::testkit::scalar_spec;

namespace {
constexpr double pi = std::numbers::pi;
}

TEST(SolveBackward, ZeroSourceQuadraticCost) {
    const auto sol = solve_backward(scalar_spec({.A_T = -1.0}));
    EXPECT_NEAR(sol.A[0], -1.0 / 3.0, 1e-12);
    // A_T = 1 blows up where u = 2t - 1 vanishes, exactly on a grid node
    const auto focal = solve_backward(scalar_spec({.A_T = 1.0}));
    ASSERT_EQ(focal.singularities.size(), 1u);
    EXPECT_EQ(focal.singularities[0], 0.5);
}

TEST(SolveBackward, AllSourcesVanish) {
    const auto sol = solve_backward(scalar_spec({.B_T = 0.7}));
    for (std::size_t k = 0; k <= sol.N; ++k) {
        EXPECT_EQ(sol.A[k], 0.0);
        EXPECT_NEAR(sol.B[k][0], 0.7, 1e-15);
    }
}

TEST(SolveBackward, TangentBranch) {
    const auto sol = solve_backward(scalar_spec({.T = pi / 8, .a = 2.0}));
    EXPECT_NEAR(sol.A[0], 1.0, 1e-10);
    EXPECT_TRUE(sol.singularities.empty());
}

TEST(SolveBackward, TerminalValuesExact) {
    const auto sol = solve_backward(scalar_spec({.delta = 0.4, .a = 0.3, .b = -0.2, .A_T = 0.6, .B_T = 1.5, .C_T = -2.0}));
    EXPECT_EQ(sol.A.back(), 0.6);
    EXPECT_EQ(sol.B.back()[0], 1.5);
    EXPECT_EQ(sol.C.back(), -2.0);
    EXPECT_EQ(sol.u.back(), 1.0);
    EXPECT_EQ(sol.udot.back(), 1.2);
}

TEST(SolveBackward, CoarseGridRejected) {
    EXPECT_THROW(solve_backward(scalar_spec({}), 50), ValidationError);
}

TEST(SolveBackward, RiccatiResidualSmall) {
    for (double a : {-2.0, -0.5, 0.0, 0.5, 2.0}) {
        const auto spec = scalar_spec({.T = 0.5, .a = a, .A_T = -0.25});
        const auto sol = solve_backward(spec, 10000);
        const double h = sol.h();
        double worst = 0.0;
        for (std::size_t k = 1; k < sol.N; ++k) {
            const double dA = (sol.A[k + 1] - sol.A[k - 1]) / (2 * h);
            worst = std::max(worst, std::abs(dA + 2 * sol.A[k] * sol.A[k] + a));
        }
        EXPECT_LT(worst, 1e-6) << "a=" << a;
    }
}

TEST(SolveBackward, TimeDependentCoefficients) {
    // B' + 2AB = -b with A = 0 gives B(t) = B_T + int_t^T b; b = 1 + 2t
    auto spec = scalar_spec({.B_T = 0.5});
    spec.cost.b = {Polynomial{{1.0, 2.0}}};
    const auto sol = solve_backward(spec);
    EXPECT_NEAR(sol.B[0][0], 0.5 + 1.0 + 1.0, 1e-12);
}

TEST(SolveBackward, SingularTimesAndRegularPair) {
    const auto spec = scalar_spec({.T = pi, .delta = 0.5, .a = 2.0, .b = 1.0});
    const auto sol = solve_backward(spec);
    ASSERT_EQ(sol.singularities.size(), 2u);
    EXPECT_NEAR(sol.singularities[0], pi / 4, 1e-9);
    EXPECT_NEAR(sol.singularities[1], 3 * pi / 4, 1e-9);
    for (std::size_t k = 0; k <= sol.N; ++k) EXPECT_TRUE(std::isfinite(sol.v[k][0]));
    // C is not continued past the first zero seen backward from T
    EXPECT_TRUE(std::isnan(sol.C[0]));
    EXPECT_TRUE(std::isfinite(sol.C.back()));
    EXPECT_FALSE(sol.regular_on(1.0));
}

TEST(ClosedFormA, Examples) {
    EXPECT_NEAR(closed_form_A_const(2.0, 0.0, pi / 8, 0.0), 1.0, 1e-14);
    EXPECT_EQ(closed_form_A_const(0.0, 0.0, 1.0, 0.3), 0.0);
    for (double t : {0.0, 0.3, 0.9}) EXPECT_NEAR(closed_form_A_const(-2.0, 1.0, 1.0, t), 1.0, 1e-14);
    EXPECT_NEAR(closed_form_A_const(0.0, -1.0, 1.0, 0.0), -1.0 / 3.0, 1e-15);
    EXPECT_TRUE(std::isinf(closed_form_A_const(0.0, 1.0, 1.0, 0.5)));
}

TEST(ClosedFormA, AgreesWithSolver) {
    for (double a : {-2.0, 0.0, 2.0})
        for (double AT : {-0.25, 0.0, 1.0}) {
            const double T = 0.3;
            const auto sol = solve_backward(scalar_spec({.T = T, .a = a, .A_T = AT}));
            for (std::size_t k = 0; k <= sol.N; k += 64) {
                const double cf = closed_form_A_const(a, AT, T, sol.t[k]);
                EXPECT_LE(std::abs(sol.A[k] - cf), 1e-8 * std::max(1.0, std::abs(cf)));
            }
        }
}

TEST(Weight, IdentityAndLinearOracle) {
    const auto sol = solve_backward(scalar_spec({.A_T = -1.0}));
    EXPECT_EQ(weight(sol, 0.4, 0.4), 1.0);
    EXPECT_NEAR(weight(sol, 1.0, 0.0), 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(weight(sol, 1.0, 0.0), weight(sol, 1.0, 0.5) * weight(sol, 0.5, 0.0), 1e-10);
}

TEST(Weight, MultiplicativeOnNonsingularTriples) {
    const auto sol = solve_backward(scalar_spec({.a = 0.7, .A_T = -0.2}));
    for (double t : {1.0, 0.8})
        for (double s : {0.6, 0.35})
            for (double e : {0.2, 0.0}) EXPECT_NEAR(weight(sol, t, e), weight(sol, t, s) * weight(sol, s, e), 1e-10);
}

TEST(ControlPhi, Examples) {
    const auto zero = solve_backward(scalar_spec({}));
    const auto r0 = eval_control_phi(zero, 0.5, {2.0});
    EXPECT_EQ(r0.phi, 0.0);
    EXPECT_EQ(r0.alpha[0], 0.0);

    // A=1, B=2, C=3 held constant: a = -2 keeps A = 1 and b = -2 keeps B = 2
    auto spec = scalar_spec({.a = -2.0, .b = -2.0, .A_T = 1.0, .B_T = 2.0, .C_T = 3.0});
    auto sol = solve_backward(spec);
    const auto rT = eval_control_phi(sol, 1.0, {2.0});
    EXPECT_NEAR(rT.phi, 11.0, 1e-12);
    EXPECT_NEAR(rT.alpha[0], 6.0, 1e-12);

    const auto diffusion = solve_backward(scalar_spec({.delta = 1.0, .A_T = -1.0}));
    const auto r = eval_control_phi(diffusion, 0.0, {0.0});
    EXPECT_NEAR(r.alpha[0], 0.0, 1e-15);
    EXPECT_NEAR(r.phi, -0.5 * std::log(3.0), 1e-10);
}

TEST(ControlPhi, FocalTimeRejected) {
    const auto sol = solve_backward(scalar_spec({.T = pi, .a = 2.0}));
    EXPECT_THROW(eval_control_phi(sol, sol.singularities.front(), {1.0}), NumericalError);
}

TEST(Conditions, Examples) {
    const auto s1 = scalar_spec({.b = 0.4, .A_T = -0.5});
    auto rep = check_conditions(solve_backward(s1), s1);
    EXPECT_TRUE(rep.a_int_first);
    EXPECT_TRUE(rep.a_int_second);
    EXPECT_TRUE(rep.singular_times.empty());

    const auto s2 = scalar_spec({.T = pi / 8, .a = 2.0});
    rep = check_conditions(solve_backward(s2), s2);
    EXPECT_TRUE(rep.a_int_first);
    EXPECT_TRUE(rep.singular_times.empty());

    const auto s3 = scalar_spec({.T = pi, .a = 2.0, .b = 1.0});
    rep = check_conditions(solve_backward(s3), s3);
    EXPECT_FALSE(rep.singular_times.empty());
    EXPECT_FALSE(rep.a_int_second);
}

TEST(Conditions, ZeroAtInitialTime) {
    // a = 2, A_T = 0: u = cos(2(T - t)) vanishes at t = 0 when T = pi/4
    const auto s = scalar_spec({.T = pi / 4, .a = 2.0});
    const auto rep = check_conditions(solve_backward(s), s);
    EXPECT_FALSE(rep.a_int_first);
    EXPECT_FALSE(rep.a_int_second);
}
