#include "mfgm/moments.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mfgm;
using mfgm::testkit::scalar_spec;

namespace {

MomentPath moments_of(const ScenarioSpec& spec, std::size_t N = default_grid) {
    return propagate_moments(solve_backward(spec, N), spec);
}

ScenarioSpec meanfield_spec(double a, double b0, double b1, double b2, double x0, double A_T, double B_T,
                            double T = 1.0) {
    auto s = scalar_spec({.T = T, .delta = 0.2, .a = a, .A_T = A_T, .B_T = B_T, .x0 = x0});
    s.cost.b.clear();
    s.cost.meanfield = MeanFieldCoupling{{b0}, b1, b2};
    s.validate();
    return s;
}

// E'' + b2 E' + (2a + b1) E = -b0, E(0) = x0, E'(T) - 2 A_T E(T) = B_T,
// by superposition of two fine RK4 initial-value solutions.
std::vector<double> direct_meanfield(double a, double b0, double b1, double b2, double x0, double A_T, double B_T,
                                     double T, std::size_t N) {
    const double h = T / static_cast<double>(N);
    auto shoot = [&](double e0, double slope, double src) {
        std::vector<double> E(N + 1);
        double y = e0, yp = slope;
        auto f = [&](double e, double ep) { return -b2 * ep - (2 * a + b1) * e - src; };
        for (std::size_t k = 0; k < N; ++k) {
            E[k] = y;
            const double k1 = yp, l1 = f(y, yp);
            const double k2 = yp + 0.5 * h * l1, l2 = f(y + 0.5 * h * k1, yp + 0.5 * h * l1);
            const double k3 = yp + 0.5 * h * l2, l3 = f(y + 0.5 * h * k2, yp + 0.5 * h * l2);
            const double k4 = yp + h * l3, l4 = f(y + h * k3, yp + h * l3);
            y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
            yp += h / 6 * (l1 + 2 * l2 + 2 * l3 + l4);
        }
        E[N] = y;
        return std::pair{E, yp};
    };
    const auto [part, part_slope] = shoot(x0, 0.0, b0);
    const auto [hom, hom_slope] = shoot(0.0, 1.0, 0.0);
    const double c = (B_T - (part_slope - 2 * A_T * part[N])) / (hom_slope - 2 * A_T * hom[N]);
    std::vector<double> E(N + 1);
    for (std::size_t k = 0; k <= N; ++k) E[k] = part[k] + c * hom[k];
    return E;
}

} // namespace

TEST(PropagateMoments, BrownianSpreading) {
    const auto p = moments_of(testkit::brownian());
    for (std::size_t k = 0; k <= p.N(); k += 256) {
        EXPECT_NEAR(p.E[k][0], 0.0, 1e-14);
        EXPECT_NEAR(p.V[k], p.t[k], 1e-12);
    }
}

TEST(PropagateMoments, CompoundPoisson) {
    const auto p = moments_of(testkit::pure_jump());
    EXPECT_DOUBLE_EQ(p.K, 2.0);
    for (std::size_t k = 0; k <= p.N(); k += 256) {
        EXPECT_NEAR(p.E[k][0], 2 * p.t[k], 1e-12);
        EXPECT_NEAR(p.V[k], 2 * p.t[k], 1e-12);
    }
}

TEST(PropagateMoments, ConstantAGrowth) {
    const auto p = moments_of(testkit::constant_A());
    EXPECT_NEAR(p.E_at(0.5)[0], std::exp(1.0), 1e-10);
    EXPECT_NEAR(p.V_at(0.5), std::exp(2.0), 1e-9);
    EXPECT_EQ(p.E[0][0], 1.0);
    EXPECT_EQ(p.V[0], 1.0);
}

TEST(PropagateMoments, InitialZeroOfLinearizerRejected) {
    const auto s = scalar_spec({.T = std::numbers::pi / 4, .a = 2.0});
    EXPECT_THROW(propagate_moments(solve_backward(s), s), NumericalError);
}

TEST(PropagateMoments, LiteralModeDiffersUnderNonzeroA) {
    const auto s = testkit::constant_A();
    const auto sol = solve_backward(s);
    const auto lit = propagate_moments(sol, s, InitialPropagation::literal);
    // x0 is added instead of propagated, cancelling the growth e^{2t} x0
    EXPECT_NEAR(lit.E_at(0.5)[0], 1.0, 1e-9);
    const auto zeroA = testkit::brownian();
    const auto sol0 = solve_backward(zeroA);
    const auto a = propagate_moments(sol0, zeroA), b = propagate_moments(sol0, zeroA, InitialPropagation::literal);
    EXPECT_EQ(a.E, b.E);
    EXPECT_EQ(a.V, b.V);
}

TEST(ResidualCheck, LinearExpectationHasZeroResidual) {
    MomentPath p;
    const std::size_t N = 400;
    const double x0 = 0.3, beta = 1.7;
    for (std::size_t k = 0; k <= N; ++k) {
        const double t = static_cast<double>(k) / N;
        p.t.push_back(t);
        p.E.push_back({x0 + beta * t});
        p.Ep.push_back({beta});
        p.V.push_back(1.0 + t);
        p.Vp.push_back(1.0);
    }
    p.K = 1.0;
    const auto spec = scalar_spec({.delta = 1.0});
    const auto r = residual_check(p, spec);
    EXPECT_LT(r.rE, 1e-8);
    ASSERT_TRUE(r.rV.has_value());
    EXPECT_LT(*r.rV, 1e-8);
}

TEST(ResidualCheck, SmallOnPropagatedAndDetectsCorruption) {
    const auto spec = testkit::constant_A();
    auto p = moments_of(spec);
    auto r = residual_check(p, spec);
    EXPECT_LT(r.rE, 1e-6);
    EXPECT_LT(*r.rV, 1e-6);

    const auto noisy = scalar_spec({.delta = 0.8, .a = 1.0, .A_T = 0.2, .v0 = 0.5});
    p = moments_of(noisy);
    for (auto& v : p.V) v *= 1.1;
    r = residual_check(p, noisy);
    EXPECT_GT(*r.rV, 1e-2);
}

TEST(ResidualCheck, SkipsVarianceNearZero) {
    const auto spec = scalar_spec({.b = 0.5, .x0 = 1.0});
    const auto p = moments_of(spec);
    EXPECT_FALSE(residual_check(p, spec).rV.has_value());
    EXPECT_TRUE(std::isnan(p.residual_V));
}

TEST(MomentInvariants, FirstOrderRelations) {
    const auto spec = scalar_spec({.delta = 0.6, .lambda = 0.5, .jump = GaussianJump{{0.4}, 0.3}, .a = 0.8,
                                   .b = -0.3, .A_T = -0.2, .B_T = 0.4, .x0 = 0.7, .v0 = 0.3});
    const auto sol = solve_backward(spec);
    const auto p = propagate_moments(sol, spec);
    const double h = p.h(), lm1 = spec.jump_drift()[0];
    double wE = 0, wV = 0;
    for (std::size_t k = 1; k < p.N(); ++k) {
        const double dE = (p.E[k + 1][0] - p.E[k - 1][0]) / (2 * h);
        const double dV = (p.V[k + 1] - p.V[k - 1]) / (2 * h);
        wE = std::max(wE, std::abs(dE - (2 * sol.A[k] * p.E[k][0] + sol.B[k][0] + lm1)));
        wV = std::max(wV, std::abs(dV - (4 * sol.A[k] * p.V[k] + p.K)));
    }
    EXPECT_LT(wE, 1e-5);
    EXPECT_LT(wV, 1e-5);
}

TEST(MomentInvariants, VarianceNondecreasingWhenAPositive) {
    const auto spec = scalar_spec({.delta = 0.5, .a = -0.5, .A_T = 0.5, .v0 = 0.1});
    const auto sol = solve_backward(spec);
    for (double A : sol.A) ASSERT_GE(A, 0.0);
    const auto p = propagate_moments(sol, spec);
    for (std::size_t k = 1; k <= p.N(); ++k) EXPECT_GE(p.V[k], p.V[k - 1]);
}

TEST(MomentInvariants, NoiselessVarianceScalesWithLinearizer) {
    const auto flat = moments_of(scalar_spec({.v0 = 0.4}));
    for (double v : flat.V) EXPECT_EQ(v, 0.4);

    auto spec = scalar_spec({.A_T = 0.3, .v0 = 0.4});
    spec.cost.a = Polynomial{{0.5, -0.4, 0.2}};
    const auto sol = solve_backward(spec);
    const auto p = propagate_moments(sol, spec);
    for (std::size_t k = 0; k <= p.N(); k += 128) {
        const double w = sol.u[k] / sol.u[0];
        EXPECT_NEAR(p.V[k], 0.4 * w * w, 1e-12);
    }
}

TEST(MomentInvariants, BoundaryIdentity) {
    const auto spec = scalar_spec({.delta = 0.7, .lambda = 1.0, .jump = UniformJump{{-0.5}, {1.0}}, .a = 1.2,
                                   .A_T = -0.3, .v0 = 0.25});
    const auto sol = solve_backward(spec);
    const auto p = propagate_moments(sol, spec);
    const double T = spec.T;
    Vec f(sol.N + 1);
    for (std::size_t k = 0; k <= sol.N; ++k) {
        const double w = sol.u[sol.N] / sol.u[k];
        f[k] = w * w;
    }
    const double integral = detail::simpson<double>(f, sol.h());
    const double w0 = weight(sol, T, 0.0);
    EXPECT_NEAR(p.V.back() - spec.initial.v0 * w0 * w0, p.K * integral, 1e-9);
}

TEST(ClosedForm, ZeroCurvature) {
    const auto cf = closed_form_moments_const(0.0, 0.0, 1.0, {0.0, 1.0, 0.0, 1.0});
    for (double t : {0.0, 0.4, 1.0}) {
        EXPECT_NEAR(cf.E(t)[0], t, 1e-15);
        EXPECT_NEAR(cf.V(t)[0], t, 1e-15);
    }
}

TEST(ClosedForm, OscillatoryCosine) {
    const auto cf = closed_form_moments_const(1.0, 0.0, 0.0, {1.0, 0.0, 0.0, 0.0}, 3.0, false);
    EXPECT_EQ(cf.branch, Branch::oscillatory);
    EXPECT_NEAR(cf.E(std::numbers::pi / std::sqrt(2.0))[0], -1.0, 1e-14);
}

TEST(ClosedForm, ExponentialSinh) {
    const auto cf = closed_form_moments_const(-1.0, 0.0, 0.0, {0.0, std::sqrt(2.0), 0.0, 0.0}, 1.0, false);
    EXPECT_EQ(cf.branch, Branch::exponential);
    EXPECT_NEAR(cf.E(1.0)[0], std::sinh(std::sqrt(2.0)), 1e-13);
}

TEST(ClosedForm, MatchesPropagatedPathOnEveryBranch) {
    for (double a : {-0.8, 0.0, 0.9}) {
        const auto spec = scalar_spec({.delta = 0.6, .a = a, .b = 0.3, .A_T = -0.4, .B_T = -0.2, .x0 = 0.5, .v0 = 0.2});
        const auto sol = solve_backward(spec);
        const auto p = propagate_moments(sol, spec);
        const MomentInit init{p.E[0][0], p.Ep[0][0], p.V[0], p.Vp[0]};
        const auto cf = closed_form_moments_const(a, 0.3, p.K, init);
        for (std::size_t k = 0; k <= p.N(); k += 256) {
            EXPECT_NEAR(cf.E(p.t[k])[0], p.E[k][0], 1e-9) << "a=" << a;
            EXPECT_NEAR(cf.V(p.t[k])[0], p.V[k], 1e-9) << "a=" << a;
        }
    }
}

TEST(ClosedForm, PrintedRadicalOffsetFailsTheVarianceEquation) {
    // With the constants fitted from V0 = 1, V0' = 0, K = 1, a = 1, the radical
    // with a plus sign under the root leaves a residual.
    const double a = 1.0, K = 1.0;
    const auto cf = closed_form_moments_const(a, 0.0, K, {0.0, 0.0, 1.0, 0.0});
    auto bad = cf;
    bad.D_V = radical_variance_offset(a, cf.C1_V, cf.C2_V, K);
    bad.C2_V = 1.0 - bad.D_V;
    EXPECT_GT(bad.max_residual(1.0), 1e-3);
    EXPECT_LT(cf.max_residual(1.0), 1e-10);
}

TEST(ClosedForm, ExponentialCoefficientRelation) {
    const double a = -0.7, K = 0.9;
    const auto cf = closed_form_moments_const(a, 0.2, K, {0.1, 0.3, 0.5, 0.2});
    EXPECT_NEAR(cf.C1_V, exponential_growth_coefficient(a, cf.D_V, cf.C2_V, K), 1e-12);
}

TEST(ClosedForm, InconsistentZeroVarianceRejected) {
    EXPECT_THROW(closed_form_moments_const(0.5, 0.0, 1.0, {0.0, 0.0, 0.0, 0.3}), ValidationError);
}

TEST(MeanField, NoCouplingSinglePass) {
    const auto s = meanfield_spec(0.5, 0.0, 0.0, 0.0, 1.0, 0.1, 0.0);
    const auto r = solve_meanfield_fixedpoint(s);
    EXPECT_EQ(r.iterations, 1u);
    auto plain = scalar_spec({.delta = 0.2, .a = 0.5, .A_T = 0.1, .x0 = 1.0});
    const auto p = moments_of(plain);
    for (std::size_t k = 0; k <= p.N(); k += 512) EXPECT_NEAR(r.path.E[k][0], p.E[k][0], 1e-14);
}

TEST(MeanField, CosineSolution) {
    // a = 0, b1 = 1: E'' + E = 0 with E(0) = 1, E'(T) = B_T = -sin T
    const double T = 1.0;
    const auto s = meanfield_spec(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -std::sin(T), T);
    const auto r = solve_meanfield_fixedpoint(s, default_grid, 1e-10);
    for (std::size_t k = 0; k <= r.path.N(); k += 128) EXPECT_NEAR(r.path.E[k][0], std::cos(r.path.t[k]), 1e-8);
}

TEST(MeanField, ConstantSourceParabola) {
    const double T = 1.0;
    const auto s = meanfield_spec(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -T, T);
    const auto r = solve_meanfield_fixedpoint(s);
    for (std::size_t k = 0; k <= r.path.N(); k += 128) EXPECT_NEAR(r.path.E[k][0], -0.5 * r.path.t[k] * r.path.t[k], 1e-10);
}

TEST(MeanField, AgreesWithDirectBoundaryValueSolve) {
    const double T = 1.0;
    const auto s = meanfield_spec(0.3, 0.5, 0.2, 0.1, 1.0, -0.2, 0.1, T);
    const auto r = solve_meanfield_fixedpoint(s);
    EXPECT_LE(r.iterations, 50u);
    const std::size_t N = r.path.N();
    const auto E = direct_meanfield(0.3, 0.5, 0.2, 0.1, 1.0, -0.2, 0.1, T, N * 16);
    double worst = 0;
    for (std::size_t k = 0; k <= N; ++k) worst = std::max(worst, std::abs(r.path.E[k][0] - E[16 * k]));
    EXPECT_LT(worst, 1e-8);
}

TEST(MeanField, RequiresCoupling) {
    EXPECT_THROW(solve_meanfield_fixedpoint(testkit::brownian()), ValidationError);
}

TEST(MeanField, NonConvergenceReportsIncrement) {
    const auto s = meanfield_spec(0.3, 0.5, 0.4, 0.3, 1.0, 0.2, 0.1);
    try {
        solve_meanfield_fixedpoint(s, default_grid, 1e-8, 2);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("last increment"), std::string::npos);
    }
}
