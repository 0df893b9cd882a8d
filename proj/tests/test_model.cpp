#include "mfgm/model.hpp"
#include "mfgm/scenario_io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mfgm;

namespace {

const char* minimal_doc = R"({
  "T": 1, "delta": 1, "lambda": 0,
  "cost": {"a": 0, "b": 0, "c": 0},
  "terminal": {"A_T": 0, "B_T": 0, "C_T": 0},
  "initial": {"kind": "dirac", "x0": 0}
})";

std::string error_of(const std::string& doc) {
    try {
        parse_scenario(doc);
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

std::vector<JumpDistribution> all_jumps() {
    return {PointMassJump{{1.5}}, GaussianJump{{0.5}, 2.0}, UniformJump{{-1.0}, {2.0}}, ExponentialJump{3.0, 1}};
}

} // namespace

TEST(ParseScenario, MinimalDocumentDefaults) {
    const auto s = parse_scenario(minimal_doc);
    EXPECT_EQ(s.dimension, 1);
    EXPECT_TRUE(std::holds_alternative<NoJump>(s.jump));
    EXPECT_EQ(s.T, 1.0);
    EXPECT_EQ(s.initial.kind, InitialKind::dirac);
    EXPECT_EQ(s.initial.x0, Vec{0.0});
    EXPECT_EQ(s.terminal.B_T, Vec{0.0});
}

TEST(ParseScenario, JumpRequiredWithPositiveIntensity) {
    const std::string doc = R"({"T":1,"delta":0,"lambda":2,"cost":{"a":0,"b":0},
        "terminal":{"A_T":0},"initial":{"kind":"dirac","x0":0}})";
    EXPECT_NE(error_of(doc).find("jump required when lambda>0"), std::string::npos);
}

TEST(ParseScenario, MeanfieldExcludesExplicitB) {
    const std::string doc = R"({"T":1,"delta":0,"lambda":0,
        "cost":{"a":0,"b":1,"meanfield":{"b0":0,"b1":1,"b2":0}},
        "terminal":{"A_T":0},"initial":{"kind":"dirac","x0":0}})";
    EXPECT_NE(error_of(doc).find("mutually exclusive"), std::string::npos);
}

TEST(ParseScenario, SyntaxErrorCarriesPosition) {
    const auto msg = error_of("{\n  \"T\": 1,\n  \"delta\": ,\n}");
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(ParseScenario, UnknownKeyIsNamed) {
    std::string doc = minimal_doc;
    doc.insert(1, "\"horizon\": 2,");
    EXPECT_NE(error_of(doc).find("horizon"), std::string::npos);
}

TEST(ParseScenario, DiracWithVarianceRejected) {
    std::string doc = minimal_doc;
    doc.replace(doc.find("\"x0\": 0"), 7, "\"x0\": 0, \"v0\": 1");
    EXPECT_FALSE(error_of(doc).empty());
}

TEST(ParseScenario, AnisotropicJumpRejected) {
    const std::string doc = R"({"dimension":2,"T":1,"delta":0,"lambda":1,
        "jump":{"type":"gaussian","params":{"mu":[0,1],"sigma":1}},
        "cost":{"a":0,"b":0},"terminal":{"A_T":0},"initial":{"kind":"dirac","x0":0}})";
    EXPECT_NE(error_of(doc).find("isotropic"), std::string::npos);
}

TEST(ParseScenario, PolynomialDegreeLimit) {
    std::string doc = minimal_doc;
    doc.replace(doc.find("\"a\": 0"), 6, "\"a\": {\"poly\": [1,2,3,4,5,6]}");
    EXPECT_NE(error_of(doc).find("degree"), std::string::npos);
}

TEST(ParseScenario, RoundTripThroughSerialization) {
    for (const char* name : {"brownian", "pure_jump", "constant_A", "mixed_gaussian_jump", "meanfield", "two_dim"}) {
        const auto s = load_scenario(testkit::source_path(std::string("data/scenarios/") + name + ".json"));
        const auto again = parse_scenario(serialize_scenario(s));
        EXPECT_EQ(s, again) << name;
        EXPECT_EQ(serialize_scenario(s), serialize_scenario(again)) << name;
    }
}

TEST(JumpMoments, Examples) {
    auto p = jump_moments(PointMassJump{{1.0}});
    EXPECT_EQ(p.M1[0], 1.0);
    EXPECT_EQ(p.M2, 1.0);
    auto g = jump_moments(GaussianJump{{0.5}, 2.0});
    EXPECT_DOUBLE_EQ(g.M1[0], 0.5);
    EXPECT_DOUBLE_EQ(g.M2, 4.25);
    auto u = jump_moments(UniformJump{{0.0}, {1.0}});
    EXPECT_DOUBLE_EQ(u.M1[0], 0.5);
    EXPECT_DOUBLE_EQ(u.M2, 1.0 / 3.0);
    EXPECT_THROW(jump_moments(NoJump{}), ValidationError);
}

TEST(JumpMoments, MatchQuadrature) {
    // Simpson quadrature of z p(z) and z^2 p(z) for the Gaussian and exponential laws
    auto quad = [](auto pdf, double lo, double hi, int power) {
        const int n = 20000;
        const double h = (hi - lo) / n;
        double s = 0.0;
        for (int k = 0; k <= n; ++k) {
            const double z = lo + k * h;
            const double w = (k == 0 || k == n) ? 1 : (k % 2 ? 4 : 2);
            s += w * std::pow(z, power) * pdf(z);
        }
        return s * h / 3.0;
    };
    auto gauss = [](double z) { return std::exp(-0.5 * (z - 0.5) * (z - 0.5) / 4.0) / std::sqrt(2 * M_PI * 4.0); };
    EXPECT_NEAR(quad(gauss, -30, 30, 1), 0.5, 1e-9);
    EXPECT_NEAR(quad(gauss, -30, 30, 2), 4.25, 1e-9);
    auto expo = [](double z) { return 3.0 * std::exp(-3.0 * z); };
    const auto em = jump_moments(ExponentialJump{3.0, 1});
    EXPECT_NEAR(quad(expo, 0, 30, 1), em.M1[0], 1e-9);
    EXPECT_NEAR(quad(expo, 0, 30, 2), em.M2, 1e-9);
}

TEST(JumpCharfn, Examples) {
    for (const auto& j : all_jumps()) EXPECT_EQ(jump_charfn(j, {0.0}), cplx(1.0, 0.0));
    const cplx p = jump_charfn(PointMassJump{{1.5}}, {2.0});
    EXPECT_NEAR(std::abs(p - std::exp(cplx(0, -3.0))), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(jump_charfn(GaussianJump{{0.0}, 1.0}, {1.0}) - std::exp(-0.5)), 0.0, 1e-15);
    EXPECT_THROW(jump_charfn(NoJump{}, {1.0}), ValidationError);
}

TEST(JumpCharfn, BoundedHermitianAndMeanConsistent) {
    for (const auto& j : all_jumps()) {
        for (double w = -10.0; w <= 10.0; w += 0.37) {
            const cplx f = jump_charfn(j, {w});
            EXPECT_LE(std::abs(f), 1.0 + 1e-15);
            EXPECT_NEAR(std::abs(jump_charfn(j, {-w}) - std::conj(f)), 0.0, 1e-14);
        }
        const double h = 1e-4;
        const cplx d = (jump_charfn(j, {h}) - jump_charfn(j, {-h})) / (2 * h);
        const double m1 = jump_moments(j).M1[0];
        EXPECT_NEAR((cplx(0, 1) * d).real(), m1, 1e-6 * std::max(1.0, std::abs(m1)));
    }
}

TEST(JumpSample, PointMassIsDeterministic) {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 10; ++k) EXPECT_EQ(jump_sample(PointMassJump{{3.0}}, rng)[0], 3.0);
    EXPECT_THROW(jump_sample(NoJump{}, rng), ValidationError);
}

TEST(JumpSample, MomentsWithinFiveStandardErrors) {
    const int draws = 100000;
    for (const auto& j : all_jumps()) {
        std::mt19937_64 rng(42);
        double s1 = 0, s2 = 0, s4 = 0;
        for (int k = 0; k < draws; ++k) {
            const double z = jump_sample(j, rng)[0];
            s1 += z;
            s2 += z * z;
            s4 += z * z * z * z;
        }
        const double m1 = s1 / draws, m2 = s2 / draws;
        const double se1 = std::sqrt((m2 - m1 * m1) / draws), se2 = std::sqrt((s4 / draws - m2 * m2) / draws);
        const auto jm = jump_moments(j);
        EXPECT_LE(std::abs(m1 - jm.M1[0]), 5 * se1) << jump_type_name(j);
        EXPECT_LE(std::abs(m2 - jm.M2), 5 * se2) << jump_type_name(j);
    }
}

TEST(JumpSample, SpotChecks) {
    std::mt19937_64 rng(3);
    const int draws = 100000;
    double s = 0, q = 0;
    for (int k = 0; k < draws; ++k) s += jump_sample(GaussianJump{{0.0}, 1.0}, rng)[0];
    EXPECT_LE(std::abs(s / draws), 4.0 / std::sqrt(draws));
    for (int k = 0; k < draws; ++k) {
        const double z = jump_sample(UniformJump{{0.0}, {1.0}}, rng)[0];
        q += z * z;
    }
    EXPECT_NEAR(q / draws, 1.0 / 3.0, 0.01 / 3.0);
}

TEST(JumpSample, ReproducibleForFixedSeed) {
    std::mt19937_64 a(9), b(9);
    for (int k = 0; k < 100; ++k) EXPECT_EQ(jump_sample(GaussianJump{{0.2}, 0.7}, a), jump_sample(GaussianJump{{0.2}, 0.7}, b));
}

TEST(ScenarioSpec, VarianceRateIsPerCoordinate) {
    auto s = testkit::mixed_jump();
    EXPECT_DOUBLE_EQ(s.K(), 0.25 + 1.0 * (0.09 + 0.16));
    s = testkit::pure_jump();
    EXPECT_DOUBLE_EQ(s.K(), 2.0);
}
