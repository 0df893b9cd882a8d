#pragma once

// Forward moment dynamics. Expectation and per-coordinate variance obey
//   E' = 2A E + B + lambda M1,   V' = 4A V + K,
// equivalently the regular second-order forms
//   E'' + 2a E = -b,   V'' + 4a V - ((V')^2 - K^2) / (2V) = 0.
// Both are propagated through quantities that stay finite at focal times.

#include "mfgm/detail/numerics.hpp"
#include "mfgm/errors.hpp"
#include "mfgm/hjb.hpp"
#include "mfgm/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mfgm {

/// How the initial mean and variance enter the moments.
enum class InitialPropagation {
    /// Through the flow: E(0) scaled by weight(t,0), V(0) by weight(t,0)^2.
    propagated,
    /// Added without propagation factors. Diagnostic only; disagrees with the
    /// SDE whenever A is not identically zero.
    literal,
};

struct MomentPath {
    Vec t;
    std::vector<Vec> E;   ///< per node, length n
    std::vector<Vec> Ep;  ///< E' per node
    Vec V;                ///< per-coordinate variance
    Vec Vp;               ///< V' per node
    double K = 0.0;
    double residual_E = 0.0;
    /// NaN when the variance residual was skipped (V near zero).
    double residual_V = 0.0;
    bool focal = false;

    std::size_t N() const { return t.size() - 1; }
    double h() const { return t.back() / static_cast<double>(N()); }

    Vec E_at(double s) const {
        auto [k, f] = detail::locate(s, h(), N());
        Vec r(E[k].size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = detail::hermite(E[k][i], Ep[k][i], E[k + 1][i], Ep[k + 1][i], h(), f);
        return r;
    }

    double V_at(double s) const {
        auto [k, f] = detail::locate(s, h(), N());
        return detail::hermite(V[k], Vp[k], V[k + 1], Vp[k + 1], h(), f);
    }
};

struct MomentResiduals {
    double rE = 0.0;
    /// Empty when skipped because V came too close to zero.
    std::optional<double> rV;
};

namespace detail {

// Fourth-order central first and second derivatives at interior node k.
inline double d1_central(std::span<const double> y, std::size_t k, double h) {
    return (-y[k + 2] + 8.0 * y[k + 1] - 8.0 * y[k - 1] + y[k - 2]) / (12.0 * h);
}

inline double d2_central(std::span<const double> y, std::size_t k, double h) {
    return (-y[k + 2] + 16.0 * y[k + 1] - 30.0 * y[k] + 16.0 * y[k - 1] - y[k - 2]) / (12.0 * h * h);
}

inline Vec coordinate(const std::vector<Vec>& rows, std::size_t i) {
    Vec r(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) r[k] = rows[k][i];
    return r;
}

} // namespace detail

/// Max-norm residuals of the second-order moment equations at interior nodes,
/// using fourth-order central differences. For a mean-field scenario, b is
/// rebuilt from the path itself.
inline MomentResiduals residual_check(const MomentPath& path, const ScenarioSpec& spec) {
    const std::size_t N = path.N();
    const double h = path.h();
    if (N < 5) throw ValidationError("residual check needs at least 5 intervals");
    const auto n = static_cast<std::size_t>(spec.dimension);
    const auto& a = spec.cost.a;

    MomentResiduals r;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec e = detail::coordinate(path.E, i);
        for (std::size_t k = 2; k + 2 <= N; ++k) {
            const double s = path.t[k];
            double b;
            if (spec.cost.meanfield) {
                const auto& mf = *spec.cost.meanfield;
                b = mf.b0[i] + mf.b1 * e[k] + mf.b2 * path.Ep[k][i];
            } else {
                b = spec.cost.b[i](s);
            }
            const double res = detail::d2_central(e, k, h) + 2.0 * a(s) * e[k] + b;
            r.rE = std::max(r.rE, std::abs(res));
        }
    }

    double vmin = INFINITY;
    for (std::size_t k = 2; k + 2 <= N; ++k) vmin = std::min(vmin, path.V[k]);
    if (vmin < 1e-6) return r;
    double rv = 0.0;
    for (std::size_t k = 2; k + 2 <= N; ++k) {
        const double s = path.t[k];
        const double vp = detail::d1_central(path.V, k, h);
        const double vpp = detail::d2_central(path.V, k, h);
        const double res = vpp + 4.0 * a(s) * path.V[k] - (vp * vp - path.K * path.K) / (2.0 * path.V[k]);
        rv = std::max(rv, std::abs(res));
    }
    r.rV = rv;
    return r;
}

/// Propagates E and V forward on the grid of `sol`. The variance uses the pair
/// formula V = (v0/u(0)^2) u^2 + K u psi with psi'' + 2a psi = 0, psi(0) = 0,
/// psi'(0) = 1/u(0); its absolute value is taken past focal times.
inline MomentPath propagate_moments(const HjbSolution& sol, const ScenarioSpec& spec,
                                    InitialPropagation mode = InitialPropagation::propagated) {
    if (std::abs(sol.u[0]) < singular_u_tol) throw NumericalError("condition (A_int) violated: u(0) = 0");
    const auto n = static_cast<std::size_t>(spec.dimension);
    const std::size_t N = sol.N;
    const double h = sol.h();
    const auto& a = spec.cost.a;
    const BField& b = sol.b_field;
    const Vec lm1 = spec.jump_drift();
    const double u0 = sol.u[0];
    const Vec& x0 = spec.initial.x0;
    const double v0 = spec.initial.v0;

    MomentPath path;
    path.t = sol.t;
    path.K = spec.K();
    path.E.assign(N + 1, Vec(n));
    path.Ep.assign(N + 1, Vec(n));
    path.V.resize(N + 1);
    path.Vp.resize(N + 1);

    // state: E_1..E_n, E'_1..E'_n, psi, psi'
    const std::size_t dim = 2 * n + 2;
    auto rhs = [&](double s, const Vec& y, Vec& dy) {
        const double as = a(s);
        const Vec bs = b(s);
        for (std::size_t i = 0; i < n; ++i) {
            dy[i] = y[n + i];
            dy[n + i] = -2.0 * as * y[i] - bs[i];
        }
        dy[2 * n] = y[2 * n + 1];
        dy[2 * n + 1] = -2.0 * as * y[2 * n];
    };

    Vec y(dim);
    const double A0 = sol.udot[0] / (2.0 * u0);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = x0[i];
        y[n + i] = 2.0 * A0 * x0[i] + sol.v[0][i] / u0 + lm1[i];
    }
    y[2 * n] = 0.0;
    y[2 * n + 1] = 1.0 / u0;

    Vec psi(N + 1), psip(N + 1);
    auto store = [&](std::size_t k) {
        for (std::size_t i = 0; i < n; ++i) {
            path.E[k][i] = y[i];
            path.Ep[k][i] = y[n + i];
        }
        psi[k] = y[2 * n];
        psip[k] = y[2 * n + 1];
    };
    store(0);
    Vec k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
    for (std::size_t k = 0; k < N; ++k) {
        const double s = sol.t[k];
        rhs(s, y, k1);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + 0.5 * h * k1[j];
        rhs(s + 0.5 * h, tmp, k2);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + 0.5 * h * k2[j];
        rhs(s + 0.5 * h, tmp, k3);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + h * k3[j];
        rhs(s + h, tmp, k4);
        for (std::size_t j = 0; j < dim; ++j) y[j] += h / 6.0 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]);
        store(k + 1);
    }

    const double cv = v0 / (u0 * u0);
    double scale = 0.0;
    Vec raw(N + 1);
    for (std::size_t k = 0; k <= N; ++k) {
        const double uk = sol.u[k], ukp = sol.udot[k];
        raw[k] = cv * uk * uk + path.K * uk * psi[k];
        const double rawp = 2.0 * cv * uk * ukp + path.K * (ukp * psi[k] + uk * psip[k]);
        path.V[k] = std::abs(raw[k]);
        path.Vp[k] = raw[k] < 0.0 ? -rawp : rawp;
        scale = std::max(scale, std::abs(raw[k]));
    }
    path.V[0] = v0;
    for (std::size_t k = 0; k <= N; ++k)
        if (raw[k] < -1e-10 * std::max(1.0, scale)) path.focal = true;
    if (!sol.singularities.empty()) path.focal = true;

    if (mode == InitialPropagation::literal) {
        for (std::size_t k = 0; k <= N; ++k) {
            const double w = sol.u[k] / u0;
            const double wp = sol.udot[k] / u0;
            for (std::size_t i = 0; i < n; ++i) {
                path.E[k][i] += (1.0 - w) * x0[i];
                path.Ep[k][i] -= wp * x0[i];
            }
            path.V[k] += (1.0 - w * w) * v0;
            path.Vp[k] -= 2.0 * w * wp * v0;
        }
    }

    const auto res = residual_check(path, spec);
    path.residual_E = res.rE;
    path.residual_V = res.rV ? *res.rV : detail::nan();
    return path;
}

// ---------------------------------------------------------------------------
// Constant-coefficient closed forms

enum class Branch { oscillatory, exponential, polynomial };

inline const char* branch_name(Branch b) {
    switch (b) {
    case Branch::oscillatory: return "oscillatory";
    case Branch::exponential: return "exponential";
    case Branch::polynomial: return "polynomial";
    }
    return "?";
}

inline Branch branch_of(double a) {
    if (a > 0.0) return Branch::oscillatory;
    if (a < 0.0) return Branch::exponential;
    return Branch::polynomial;
}

struct MomentInit {
    double E0 = 0.0;
    double E0p = 0.0;
    double V0 = 0.0;
    double V0p = 0.0;
};

/// Explicit constant-coefficient moments. With w = sqrt(2|a|):
///   oscillatory  E = C1 sin(w t) + C2 cos(w t) - b/(2a)
///                V = D + C1_V sin(2 w t) + C2_V cos(2 w t)
///   exponential  E = C1 sinh(w t) + C2 cosh(w t) - b/(2a)
///                V = D + C1_V exp(2 w t) + C2_V exp(-2 w t)
///   polynomial   E = C2 + C1 t - b t^2 / 2
///                V = D + C1_V t + C2_V t^2
struct ClosedFormMoments {
    Branch branch = Branch::polynomial;
    double a = 0.0, b = 0.0, K = 0.0;
    double C1_E = 0.0, C2_E = 0.0;
    double D_V = 0.0, C1_V = 0.0, C2_V = 0.0;
    bool has_variance = false;

    double freq() const { return std::sqrt(2.0 * std::abs(a)); }

    /// E and its first two derivatives at t.
    std::array<double, 3> E(double t) const {
        const double w = freq();
        switch (branch) {
        case Branch::oscillatory: {
            const double s = std::sin(w * t), c = std::cos(w * t);
            return {C1_E * s + C2_E * c - b / (2 * a), w * (C1_E * c - C2_E * s), -w * w * (C1_E * s + C2_E * c)};
        }
        case Branch::exponential: {
            const double s = std::sinh(w * t), c = std::cosh(w * t);
            return {C1_E * s + C2_E * c - b / (2 * a), w * (C1_E * c + C2_E * s), w * w * (C1_E * s + C2_E * c)};
        }
        case Branch::polynomial:
            return {C2_E + C1_E * t - 0.5 * b * t * t, C1_E - b * t, -b};
        }
        return {};
    }

    /// V and its first two derivatives at t.
    std::array<double, 3> V(double t) const {
        const double w = 2.0 * freq();
        switch (branch) {
        case Branch::oscillatory: {
            const double s = std::sin(w * t), c = std::cos(w * t);
            return {D_V + C1_V * s + C2_V * c, w * (C1_V * c - C2_V * s), -w * w * (C1_V * s + C2_V * c)};
        }
        case Branch::exponential: {
            const double ep = std::exp(w * t), em = std::exp(-w * t);
            return {D_V + C1_V * ep + C2_V * em, w * (C1_V * ep - C2_V * em), w * w * (C1_V * ep + C2_V * em)};
        }
        case Branch::polynomial:
            return {D_V + C1_V * t + C2_V * t * t, C1_V + 2 * C2_V * t, 2 * C2_V};
        }
        return {};
    }

    /// Largest relative residual of both moment equations over [0, horizon],
    /// stopping the variance check where V falls below 1e-6.
    double max_residual(double horizon, std::size_t samples = 201) const {
        double worst = 0.0;
        for (std::size_t j = 0; j < samples; ++j) {
            const double t = horizon * static_cast<double>(j) / static_cast<double>(samples - 1);
            const auto e = E(t);
            const double scale_e = std::max({std::abs(e[2]), std::abs(2 * a * e[0]), std::abs(b), 1.0});
            worst = std::max(worst, std::abs(e[2] + 2 * a * e[0] + b) / scale_e);
            if (!has_variance) continue;
            const auto v = V(t);
            if (v[0] < 1e-6) continue;
            const double quad = (v[1] * v[1] - K * K) / (2 * v[0]);
            const double scale_v = std::max({std::abs(v[2]), std::abs(4 * a * v[0]), std::abs(quad), 1.0});
            worst = std::max(worst, std::abs(v[2] + 4 * a * v[0] - quad) / scale_v);
        }
        return worst;
    }
};

/// The offset of the oscillatory variance exactly as it is sometimes printed,
/// +(1/a) sqrt(a((C1^2 + C2^2) a + K^2/8)). Kept only so tests can show the
/// moment equation rejects it when K > 0.
inline double radical_variance_offset(double a, double C1, double C2, double K) {
    return std::sqrt(a * ((C1 * C1 + C2 * C2) * a + K * K / 8.0)) / a;
}

/// Growth coefficient of the exponential-branch variance,
/// (8 a D^2 + K^2) / (32 a C2), for offset D and decaying coefficient C2.
inline double exponential_growth_coefficient(double a, double D, double C2, double K) {
    return (8.0 * a * D * D + K * K) / (32.0 * a * C2);
}

inline constexpr double closed_form_tolerance = 1e-8;

/// Fits the closed-form constants from initial data and validates them against
/// the moment equations on [0, horizon]. Throws NumericalError carrying the
/// residual when validation fails.
inline ClosedFormMoments closed_form_moments_const(double a, double b, double K, const MomentInit& init,
                                                   double horizon = 1.0, bool fit_variance = true) {
    ClosedFormMoments cf;
    cf.branch = branch_of(a);
    cf.a = a;
    cf.b = b;
    cf.K = K;
    const double w = cf.freq();
    switch (cf.branch) {
    case Branch::oscillatory:
    case Branch::exponential:
        cf.C2_E = init.E0 + b / (2 * a);
        cf.C1_E = init.E0p / w;
        break;
    case Branch::polynomial:
        cf.C2_E = init.E0;
        cf.C1_E = init.E0p;
        break;
    }

    if (fit_variance) {
        if (init.V0 < 0.0) throw ValidationError("initial variance must be >= 0");
        if (init.V0 == 0.0 && std::abs(init.V0p - K) > 1e-12 * std::max(1.0, K))
            throw ValidationError("V'(0) must equal K when V(0) = 0");
        cf.has_variance = true;
        const double V0 = init.V0, V0p = init.V0p;
        switch (cf.branch) {
        case Branch::oscillatory: {
            // D^2 = C1_V^2 + C2_V^2 - K^2/(8a)
            cf.C1_V = V0p / (2 * w);
            cf.D_V = V0 == 0.0 ? 0.0 : (cf.C1_V * cf.C1_V + V0 * V0 - K * K / (8 * a)) / (2 * V0);
            cf.C2_V = V0 - cf.D_V;
            break;
        }
        case Branch::exponential: {
            // C1_V C2_V = D^2/4 + K^2/(32a)
            const double delta = V0p / (2 * w);
            cf.D_V = V0 == 0.0 ? 0.0 : (V0 * V0 - delta * delta - K * K / (8 * a)) / (2 * V0);
            const double sum = V0 - cf.D_V;
            cf.C2_V = 0.5 * (sum - delta);
            cf.C1_V = cf.C2_V != 0.0 ? exponential_growth_coefficient(a, cf.D_V, cf.C2_V, K) : 0.5 * (sum + delta);
            break;
        }
        case Branch::polynomial: {
            // 4 C2_V D = C1_V^2 - K^2
            cf.D_V = V0;
            cf.C1_V = V0p;
            cf.C2_V = V0 == 0.0 ? 0.0 : (V0p * V0p - K * K) / (4 * V0);
            break;
        }
        }
    }

    const double res = cf.max_residual(horizon);
    if (!(res <= closed_form_tolerance))
        throw NumericalError("closed-form moments fail the moment equations: residual " + detail::format_double(res));
    return cf;
}

// ---------------------------------------------------------------------------
// Mean-field coupling b = b0 + b1 E + b2 E'

struct MeanFieldResult {
    HjbSolution sol;
    MomentPath path;
    std::size_t iterations = 0;
    double last_increment = 0.0;
};

namespace detail {

// b(t) frozen from a moment path, interpolated with four-point Lagrange stencils.
inline BField frozen_b(const MeanFieldCoupling& mf, const std::vector<Vec>& E, const std::vector<Vec>& Ep, double h) {
    const std::size_t n = mf.b0.size();
    auto cols = std::make_shared<std::vector<Vec>>();
    for (std::size_t i = 0; i < n; ++i) {
        Vec col(E.size());
        for (std::size_t k = 0; k < E.size(); ++k) col[k] = mf.b0[i] + mf.b1 * E[k][i] + mf.b2 * Ep[k][i];
        cols->push_back(std::move(col));
    }
    return [cols, h](double s) {
        Vec r(cols->size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = lagrange4((*cols)[i], h, s);
        return r;
    };
}

} // namespace detail

/// Picard iteration for the mean-field coupled cost, damped by 1/2.
inline MeanFieldResult solve_meanfield_fixedpoint(const ScenarioSpec& spec, std::size_t N = default_grid,
                                                  double tol = 1e-8, std::size_t max_iter = 200) {
    if (!spec.cost.meanfield) throw ValidationError("scenario has no mean-field coupling");
    if (!spec.cost.a.is_constant()) throw ValidationError("mean-field coupling requires a constant cost.a");
    const auto& mf = *spec.cost.meanfield;
    const auto n = static_cast<std::size_t>(spec.dimension);
    const double h = spec.T / static_cast<double>(N);

    MeanFieldResult out;
    if (mf.b1 == 0.0 && mf.b2 == 0.0) {
        // no feedback from E: a single backward/forward pass
        auto b0 = mf.b0;
        out.sol = solve_backward(spec, N, [b0](double) { return b0; });
        out.path = propagate_moments(out.sol, spec);
        out.iterations = 1;
        return out;
    }

    std::vector<Vec> E(N + 1, spec.initial.x0), Ep(N + 1, Vec(n, 0.0));
    for (std::size_t it = 1; it <= max_iter; ++it) {
        HjbSolution sol = solve_backward(spec, N, detail::frozen_b(mf, E, Ep, h));
        MomentPath path = propagate_moments(sol, spec);
        double inc = 0.0;
        for (std::size_t k = 0; k <= N; ++k) {
            for (std::size_t i = 0; i < n; ++i) {
                const double e_next = 0.5 * (path.E[k][i] + E[k][i]);
                inc = std::max(inc, std::abs(e_next - E[k][i]));
                E[k][i] = e_next;
                Ep[k][i] = 0.5 * (path.Ep[k][i] + Ep[k][i]);
            }
        }
        out.last_increment = inc;
        if (inc < tol) {
            out.sol = std::move(sol);
            out.path = std::move(path);
            out.iterations = it;
            return out;
        }
    }
    throw NumericalError("mean-field fixed point did not converge after " + std::to_string(max_iter) +
                         " iterations; last increment " + detail::format_double(out.last_increment));
}

} // namespace mfgm
