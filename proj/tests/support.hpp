#pragma once

#include "mfgm/model.hpp"

#include <string>

namespace mfgm::testkit {

struct Scalar {
    double T = 1.0;
    double delta = 0.0;
    double lambda = 0.0;
    JumpDistribution jump = NoJump{};
    double a = 0.0;
    double b = 0.0;
    double A_T = 0.0;
    double B_T = 0.0;
    double C_T = 0.0;
    double x0 = 0.0;
    double v0 = 0.0;
};

// One-dimensional scenario with constant coefficients.
inline ScenarioSpec scalar_spec(const Scalar& p) {
    ScenarioSpec s;
    s.dimension = 1;
    s.T = p.T;
    s.delta = p.delta;
    s.lambda = p.lambda;
    s.jump = p.jump;
    s.cost.a = Polynomial::constant(p.a);
    s.cost.b = {Polynomial::constant(p.b)};
    s.cost.c = Polynomial::constant(0.0);
    s.terminal = {p.A_T, {p.B_T}, p.C_T};
    s.initial = {p.v0 > 0.0 ? InitialKind::gaussian : InitialKind::dirac, {p.x0}, p.v0};
    s.validate();
    return s;
}

inline ScenarioSpec brownian() { return scalar_spec({.delta = 1.0}); }

inline ScenarioSpec pure_jump() { return scalar_spec({.lambda = 2.0, .jump = PointMassJump{{1.0}}}); }

// a = -2 with A_T = 1 keeps A identically 1.
inline ScenarioSpec constant_A() { return scalar_spec({.a = -2.0, .A_T = 1.0, .x0 = 1.0, .v0 = 1.0}); }

inline ScenarioSpec mixed_jump() {
    return scalar_spec({.delta = 0.5, .lambda = 1.0, .jump = GaussianJump{{0.3}, 0.4}});
}

inline std::string source_path(const std::string& rel) { return std::string(MFGM_SOURCE_DIR) + "/" + rel; }

} // namespace mfgm::testkit
