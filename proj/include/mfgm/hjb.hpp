#pragma once

// Backward coefficient system for the quadratic pay-off
//   Phi(t, x) = A(t)|x|^2 + B(t).x + C(t).
//
// The Riccati equation A' = -2A^2 - a is solved through the linearizer u with
// A = u'/(2u), so u'' + 2a u = 0 stays regular across the focal times where A
// blows up. B is carried as v = u B, which is regular as well:
//   v' = -lambda M1 u' - b u.

#include "mfgm/detail/numerics.hpp"
#include "mfgm/errors.hpp"
#include "mfgm/model.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mfgm {

/// Linear-cost field b(t); either the scenario's polynomials or a frozen
/// mean-field iterate.
using BField = std::function<Vec(double)>;

inline constexpr double singular_u_tol = 1e-12;
inline constexpr std::size_t default_grid = 4096;

namespace detail {

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

// num / den with a non-finite marker when |den| is below the singular tolerance.
inline double guarded_div(double num, double den) {
    if (std::abs(den) < singular_u_tol) {
        if (num == 0.0) return nan();
        return std::copysign(std::numeric_limits<double>::infinity(), num * (den < 0 ? -1.0 : 1.0));
    }
    return num / den;
}

} // namespace detail

struct HjbSolution {
    int dimension = 1;
    double T = 0.0;
    std::size_t N = 0;  ///< number of intervals; nodes t_k = k T / N

    Vec t;
    Vec u, udot, uddot;
    Vec A;
    std::vector<Vec> v, vdot, B;
    Vec C, Cdot;
    /// Zeros of u in (0, T), ascending.
    Vec singularities;
    BField b_field;

    double h() const { return T / static_cast<double>(N); }

    double u_at(double s) const {
        auto [k, f] = detail::locate(s, h(), N);
        return detail::hermite(u[k], udot[k], u[k + 1], udot[k + 1], h(), f);
    }

    double udot_at(double s) const {
        auto [k, f] = detail::locate(s, h(), N);
        return detail::hermite(udot[k], uddot[k], udot[k + 1], uddot[k + 1], h(), f);
    }

    Vec v_at(double s) const {
        auto [k, f] = detail::locate(s, h(), N);
        Vec r(static_cast<std::size_t>(dimension));
        for (std::size_t i = 0; i < r.size(); ++i)
            r[i] = detail::hermite(v[k][i], vdot[k][i], v[k + 1][i], vdot[k + 1][i], h(), f);
        return r;
    }

    double A_at(double s) const { return detail::guarded_div(udot_at(s), 2.0 * u_at(s)); }

    Vec B_at(double s) const {
        const double us = u_at(s);
        Vec r = v_at(s);
        for (auto& x : r) x = detail::guarded_div(x, us);
        return r;
    }

    double C_at(double s) const {
        auto [k, f] = detail::locate(s, h(), N);
        if (f == 0.0) return C[k];
        if (f == 1.0) return C[k + 1];
        if (!std::isfinite(C[k]) || !std::isfinite(C[k + 1])) return detail::nan();
        return detail::hermite(C[k], Cdot[k], C[k + 1], Cdot[k + 1], h(), f);
    }

    /// True when u has no zero in [0, s].
    bool regular_on(double s) const {
        for (double ts : singularities)
            if (ts <= s) return false;
        return std::abs(u[0]) >= singular_u_tol;
    }
};

inline BField scenario_b_field(const ScenarioSpec& spec) {
    if (spec.cost.meanfield) throw ValidationError("mean-field b must be frozen before the backward solve");
    return [b = spec.cost.b](double s) {
        Vec r(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) r[i] = b[i](s);
        return r;
    };
}

/// Solves the backward system on N uniform intervals with classical RK4, using
/// `b` for the linear cost coefficient.
inline HjbSolution solve_backward(const ScenarioSpec& spec, std::size_t N, BField b) {
    if (N < 100) throw ValidationError("grid resolution N must be >= 100");
    const auto n = static_cast<std::size_t>(spec.dimension);
    const Vec lm1 = spec.jump_drift();
    const double lm2 = spec.jump_second();
    const double diffusion = static_cast<double>(n) * spec.delta * spec.delta;
    const auto& a = spec.cost.a;

    HjbSolution sol;
    sol.dimension = spec.dimension;
    sol.T = spec.T;
    sol.N = N;
    sol.b_field = b;
    const double h = sol.h();

    sol.t.resize(N + 1);
    for (std::size_t k = 0; k <= N; ++k) sol.t[k] = static_cast<double>(k) * h;
    sol.t[N] = spec.T;

    // state: u, u', v_1..v_n, C
    const std::size_t dim = n + 3;
    auto rhs = [&](double s, const Vec& y, Vec& dy) {
        const double uu = y[0], ud = y[1];
        const Vec bs = b(s);
        dy[0] = ud;
        dy[1] = -2.0 * a(s) * uu;
        double vv = 0.0, m1v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dy[2 + i] = -lm1[i] * ud - bs[i] * uu;
            vv += y[2 + i] * y[2 + i];
            m1v += lm1[i] * y[2 + i];
        }
        dy[n + 2] = -0.5 * vv / (uu * uu) - (diffusion + lm2) * ud / (2.0 * uu) - m1v / uu;
    };

    std::vector<Vec> Y(N + 1, Vec(dim));
    Y[N][0] = 1.0;
    Y[N][1] = 2.0 * spec.terminal.A_T;
    for (std::size_t i = 0; i < n; ++i) Y[N][2 + i] = spec.terminal.B_T[i];
    Y[N][n + 2] = spec.terminal.C_T;

    bool c_alive = true;
    Vec k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
    std::vector<std::size_t> sign_changes;
    for (std::size_t k = N; k-- > 0;) {
        const double s = sol.t[k + 1];
        const double step = -h;
        const Vec& y = Y[k + 1];
        rhs(s, y, k1);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + 0.5 * step * k1[j];
        rhs(s + 0.5 * step, tmp, k2);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + 0.5 * step * k2[j];
        rhs(s + 0.5 * step, tmp, k3);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + step * k3[j];
        rhs(s + step, tmp, k4);
        for (std::size_t j = 0; j < dim; ++j) Y[k][j] = y[j] + step / 6.0 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]);

        const bool crossed = Y[k][0] == 0.0 || (y[0] != 0.0 && (Y[k][0] < 0.0) != (y[0] < 0.0));
        if (crossed) {
            sign_changes.push_back(k);
            c_alive = false;
        }
        if (!c_alive) Y[k][n + 2] = detail::nan();
    }

    // sign_changes is in descending k order
    for (std::size_t i = 1; i < sign_changes.size(); ++i) {
        if (sign_changes[i - 1] - sign_changes[i] < 3)
            throw NumericalError("grid too coarse to resolve zeros of the linearizer near t=" +
                                 std::to_string(sol.t[sign_changes[i]]) + "; refinement required");
    }

    sol.u.resize(N + 1);
    sol.udot.resize(N + 1);
    sol.uddot.resize(N + 1);
    sol.A.resize(N + 1);
    sol.C.resize(N + 1);
    sol.Cdot.resize(N + 1);
    sol.v.assign(N + 1, Vec(n));
    sol.vdot.assign(N + 1, Vec(n));
    sol.B.assign(N + 1, Vec(n));
    for (std::size_t k = 0; k <= N; ++k) {
        const double s = sol.t[k];
        const double uu = Y[k][0], ud = Y[k][1];
        sol.u[k] = uu;
        sol.udot[k] = ud;
        sol.uddot[k] = -2.0 * a(s) * uu;
        sol.A[k] = detail::guarded_div(ud, 2.0 * uu);
        const Vec bs = b(s);
        double m1B = 0.0, BB = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sol.v[k][i] = Y[k][2 + i];
            sol.vdot[k][i] = -lm1[i] * ud - bs[i] * uu;
            sol.B[k][i] = detail::guarded_div(Y[k][2 + i], uu);
            m1B += lm1[i] * sol.B[k][i];
            BB += sol.B[k][i] * sol.B[k][i];
        }
        sol.C[k] = Y[k][n + 2];
        sol.Cdot[k] = std::isfinite(sol.C[k]) ? -0.5 * BB - (diffusion + lm2) * sol.A[k] - m1B : detail::nan();
    }
    // exact terminal values
    sol.A[N] = spec.terminal.A_T;
    sol.B[N] = spec.terminal.B_T;

    // bisection on the Hermite interpolant of u within each bracketing interval
    for (auto it = sign_changes.rbegin(); it != sign_changes.rend(); ++it) {
        const std::size_t k = *it;
        if (sol.u[k] == 0.0) {
            if (k > 0) sol.singularities.push_back(sol.t[k]);
            continue;
        }
        double lo = 0.0, hi = 1.0;
        const double f_lo = sol.u[k];
        for (int iter = 0; iter < 80; ++iter) {
            const double mid = 0.5 * (lo + hi);
            const double fm = detail::hermite(sol.u[k], sol.udot[k], sol.u[k + 1], sol.udot[k + 1], h, mid);
            if ((fm < 0.0) == (f_lo < 0.0))
                lo = mid;
            else
                hi = mid;
        }
        sol.singularities.push_back(sol.t[k] + 0.5 * (lo + hi) * h);
    }
    return sol;
}

inline HjbSolution solve_backward(const ScenarioSpec& spec, std::size_t N = default_grid) {
    return solve_backward(spec, N, scenario_b_field(spec));
}

/// Closed-form A(t) for constant a, from the linearizer. Returns a signed
/// infinity at a focal time.
inline double closed_form_A_const(double a, double A_T, double T, double t) {
    const double s = T - t;
    const double inf = std::numeric_limits<double>::infinity();
    if (a > 0.0) {
        const double theta = std::atan(std::sqrt(2.0 / a) * A_T) + std::sqrt(2.0 * a) * s;
        const double c = std::cos(theta);
        if (std::abs(c) < 1e-15) return std::copysign(inf, std::sin(theta));
        return std::sqrt(a / 2.0) * std::tan(theta);
    }
    if (a == 0.0) {
        const double den = 1.0 - 2.0 * A_T * s;
        if (den == 0.0) return std::copysign(inf, A_T);
        return A_T / den;
    }
    const double mu = std::sqrt(-2.0 * a);
    const double u = std::cosh(mu * s) - (2.0 * A_T / mu) * std::sinh(mu * s);
    const double ud = -mu * std::sinh(mu * s) + 2.0 * A_T * std::cosh(mu * s);
    if (u == 0.0) return std::copysign(inf, ud);
    return ud / (2.0 * u);
}

/// Exponential weight exp(2 int_eta^t A) as the signed ratio u(t)/u(eta);
/// NaN when u(eta) vanishes.
inline double weight(const HjbSolution& sol, double t, double eta) {
    if (t == eta) return 1.0;
    const double ue = sol.u_at(eta);
    if (std::abs(ue) < singular_u_tol) return detail::nan();
    return sol.u_at(t) / ue;
}

struct ControlPhi {
    double phi = 0.0;
    Vec alpha;
};

/// Pay-off Phi(t, x) and the optimal drift grad Phi = 2A x + B.
inline ControlPhi eval_control_phi(const HjbSolution& sol, double t, const Vec& x) {
    if (std::abs(sol.u_at(t)) < singular_u_tol) throw NumericalError("pay-off undefined at focal time");
    const double A = sol.A_at(t);
    const Vec B = sol.B_at(t);
    ControlPhi r;
    r.phi = A * norm2(x) + dot(B, x) + sol.C_at(t);
    r.alpha.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r.alpha[i] = 2.0 * A * x[i] + B[i];
    return r;
}

struct ConditionReport {
    bool a_int_first = false;
    double a_int_first_value = 0.0;  ///< exp(2 int_0^T A) = u(T)/u(0)
    bool a_int_second = false;
    Vec a_int_second_value;          ///< int_0^T exp(2 int_eta^T A) B(eta) d eta
    Vec singular_times;
};

namespace detail {

inline Vec weighted_b_integral(const HjbSolution& sol) {
    // exp(2 int_eta^T A) B = v / u^2 since u(T) = 1
    const auto n = static_cast<std::size_t>(sol.dimension);
    Vec out(n);
    Vec f(sol.N + 1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k <= sol.N; ++k) f[k] = sol.v[k][i] / (sol.u[k] * sol.u[k]);
        out[i] = simpson<double>(f, sol.h());
    }
    return out;
}

} // namespace detail

/// Checks integrability of the exponential weight and of the weighted B integral
/// on the solution grid and a grid twice as fine.
inline ConditionReport check_conditions(const HjbSolution& sol, const ScenarioSpec& spec) {
    ConditionReport rep;
    rep.singular_times = sol.singularities;

    const HjbSolution fine = solve_backward(spec, 2 * sol.N, sol.b_field);
    rep.a_int_first_value = detail::guarded_div(1.0, sol.u[0]);
    const double fine_first = detail::guarded_div(1.0, fine.u[0]);
    rep.a_int_first = std::isfinite(rep.a_int_first_value) && std::isfinite(fine_first) &&
                      std::abs(fine_first - rep.a_int_first_value) <= 0.1 * std::abs(fine_first);

    rep.a_int_second_value = detail::weighted_b_integral(sol);
    const Vec fine_second = detail::weighted_b_integral(fine);
    bool ok = sol.singularities.empty() && std::abs(sol.u[0]) >= singular_u_tol;
    for (std::size_t i = 0; i < fine_second.size(); ++i) {
        const double c = rep.a_int_second_value[i], f = fine_second[i];
        if (!std::isfinite(c) || !std::isfinite(f) || std::abs(f - c) > 0.1 * std::max(std::abs(f), 1e-300))
            if (!(c == 0.0 && f == 0.0)) ok = false;
    }
    rep.a_int_second = ok;
    return rep;
}

} // namespace mfgm
