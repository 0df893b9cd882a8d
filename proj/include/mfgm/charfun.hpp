#pragma once

// Characteristic functions and densities of the controlled process.
//
// Fourier convention throughout: f^(omega) = int exp(-i omega.x) f(x) dx, so
// that E = i dG^/domega(t, 0).

#include "mfgm/detail/numerics.hpp"
#include "mfgm/errors.hpp"
#include "mfgm/hjb.hpp"
#include "mfgm/model.hpp"
#include "mfgm/moments.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace mfgm {

inline constexpr std::size_t default_eta_nodes = 512;
inline constexpr double charfun_quadrature_tol = 1e-6;

struct DensityGrid {
    double t = 0.0;
    Vec x;
    Vec m;
    double mass = 0.0;
    double mean = 0.0;
    double variance = 0.0;
};

struct DensityParams {
    std::size_t n_x = 4096;
    std::optional<double> x_lo;
    std::optional<double> x_hi;
};

/// Evaluates the fundamental solution's characteristic function
///   G^(t, w) = exp[-int_0^t (delta^2/2 |R|^2 + i B(eta).R - lambda (p^(R) - 1)) d eta],
///   R = w weight(t, eta),
/// both by direct quadrature and through the fundamental moments, and derives
/// densities and moments of the solution for the scenario's initial law.
class CharFunEvaluator {
public:
    CharFunEvaluator(ScenarioSpec spec, HjbSolution sol, std::size_t eta_nodes = default_eta_nodes)
        : spec_(std::move(spec)), sol_(std::move(sol)), M_(eta_nodes + eta_nodes % 2) {
        ScenarioSpec fund = spec_;
        fund.initial = InitialLaw{InitialKind::dirac, Vec(static_cast<std::size_t>(spec_.dimension), 0.0), 0.0};
        fundamental_ = propagate_moments(sol_, fund);
        solution_ = propagate_moments(sol_, spec_);
        if (spec_.has_jumps()) {
            const auto jm = jump_moments(spec_.jump);
            m1_ = jm.M1;
            m2c_ = jm.per_coordinate.front();
        } else {
            m1_.assign(static_cast<std::size_t>(spec_.dimension), 0.0);
        }
    }

    const ScenarioSpec& spec() const { return spec_; }
    const HjbSolution& hjb() const { return sol_; }
    /// Moments of the fundamental solution (Dirac initial law at the origin).
    const MomentPath& fundamental_moments() const { return fundamental_; }
    /// Moments for the scenario's own initial law.
    const MomentPath& solution_moments() const { return solution_; }

    cplx fundamental(double t, const Vec& omega) const { return fundamental(t, std::vector<Vec>{omega}).front(); }

    std::vector<cplx> fundamental(double t, const std::vector<Vec>& omegas) const {
        return integrate(t, omegas, Form::direct);
    }

    cplx via_moments(double t, const Vec& omega) const { return via_moments(t, std::vector<Vec>{omega}).front(); }

    std::vector<cplx> via_moments(double t, const std::vector<Vec>& omegas) const {
        return integrate(t, omegas, Form::moments);
    }

    cplx solution(double t, const Vec& omega) const { return solution(t, std::vector<Vec>{omega}).front(); }

    /// G^(t, w) m0^(w weight(t, 0)): the characteristics solution for the
    /// scenario's initial law.
    std::vector<cplx> solution(double t, const std::vector<Vec>& omegas) const {
        std::vector<cplx> out(omegas.size());
        if (t == 0.0) {
            for (std::size_t j = 0; j < omegas.size(); ++j) out[j] = spec_.initial.charfn(omegas[j]);
            return out;
        }
        const auto g = fundamental(t, omegas);
        const double w = weight(sol_, t, 0.0);
        for (std::size_t j = 0; j < omegas.size(); ++j) {
            Vec z = omegas[j];
            for (auto& x : z) x *= w;
            out[j] = g[j] * spec_.initial.charfn(z);
        }
        return out;
    }

    /// k-th raw moment (n = 1) from 5-point central differences of the
    /// solution characteristic function at 0 with step 1e-3.
    double moment(double t, int k) const {
        require_scalar("moment_via_charfun");
        constexpr double h = 1e-3;
        const auto f = solution(t, std::vector<Vec>{{-2 * h}, {-h}, {0.0}, {h}, {2 * h}});
        cplx d;
        switch (k) {
        case 1: d = (-f[4] + 8.0 * f[3] - 8.0 * f[1] + f[0]) / (12.0 * h); break;
        case 2: d = (-f[4] + 16.0 * f[3] - 30.0 * f[2] + 16.0 * f[1] - f[0]) / (12.0 * h * h); break;
        case 3: d = (f[4] - 2.0 * f[3] + 2.0 * f[1] - f[0]) / (2.0 * h * h * h); break;
        case 4: d = (f[4] - 4.0 * f[3] + 6.0 * f[2] - 4.0 * f[1] + f[0]) / (h * h * h * h); break;
        default: throw ValidationError("moment order must be 1, 2, 3 or 4");
        }
        cplx ik = 1.0;
        for (int j = 0; j < k; ++j) ik *= cplx(0.0, 1.0);
        return (ik * d).real();
    }

    /// Density of the solution at time t (n = 1) by inverse FFT of the
    /// characteristic function on a conjugate frequency grid.
    DensityGrid density(double t, const DensityParams& params = {}) const {
        require_scalar("invert_density");
        const double mean = solution_.E_at(t)[0];
        const double var = t == 0.0 ? spec_.initial.v0 : solution_.V_at(t);
        if (!(var > 0.0)) throw NumericalError("density undefined: variance is zero at t=" + detail::format_double(t));
        const double sd = std::sqrt(var);
        const double lo = params.x_lo.value_or(mean - 10.0 * sd);
        const double hi = params.x_hi.value_or(mean + 10.0 * sd);
        if (lo > mean - 8.0 * sd || hi < mean + 8.0 * sd)
            throw ValidationError("density grid bounds must cover E(t) +- 8 sqrt(V(t))");
        const std::size_t nx = params.n_x;
        if (nx < 16 || nx % 2 != 0) throw ValidationError("density grid size must be even and >= 16");

        const double dx = (hi - lo) / static_cast<double>(nx);
        const double dw = 2.0 * std::numbers::pi / (static_cast<double>(nx) * dx);
        std::vector<Vec> omegas(nx);
        for (std::size_t k = 0; k < nx; ++k)
            omegas[k] = {(static_cast<double>(k) - static_cast<double>(nx / 2)) * dw};

        std::vector<cplx> spec_vals(nx);
        const unsigned workers = detail::worker_count();
        const std::size_t chunks = std::min<std::size_t>(workers, 64);
        const std::size_t per = (nx + chunks - 1) / chunks;
        detail::parallel_for(chunks, workers, [&](std::size_t c) {
            const std::size_t a = c * per, b = std::min(nx, a + per);
            if (a >= b) return;
            std::vector<Vec> part(omegas.begin() + static_cast<std::ptrdiff_t>(a), omegas.begin() + static_cast<std::ptrdiff_t>(b));
            const auto vals = solution(t, part);
            for (std::size_t j = a; j < b; ++j) spec_vals[j] = vals[j - a];
        });

        std::vector<fftw_complex> buf(nx);
        for (std::size_t k = 0; k < nx; ++k) {
            const cplx v = spec_vals[k] * std::exp(cplx(0.0, omegas[k][0] * lo));
            buf[k][0] = v.real();
            buf[k][1] = v.imag();
        }
        {
            static std::mutex planner;
            fftw_plan plan;
            {
                std::lock_guard lock(planner);
                plan = fftw_plan_dft_1d(static_cast<int>(nx), buf.data(), buf.data(), FFTW_BACKWARD, FFTW_ESTIMATE);
            }
            fftw_execute(plan);
            std::lock_guard lock(planner);
            fftw_destroy_plan(plan);
        }

        DensityGrid g;
        g.t = t;
        g.x.resize(nx);
        g.m.resize(nx);
        for (std::size_t j = 0; j < nx; ++j) {
            g.x[j] = lo + static_cast<double>(j) * dx;
            const double sign = (j % 2 == 0) ? 1.0 : -1.0;
            g.m[j] = dw / (2.0 * std::numbers::pi) * sign * buf[j][0];
        }
        // trapezoid weights
        Vec wt(nx, dx), w0(nx), w1(nx);
        wt.front() *= 0.5;
        wt.back() *= 0.5;
        for (std::size_t j = 0; j < nx; ++j) {
            w0[j] = g.m[j] * wt[j];
            w1[j] = g.x[j] * g.m[j] * wt[j];
        }
        g.mass = detail::pairwise_sum(w0);
        g.mean = detail::pairwise_sum(w1) / g.mass;
        for (std::size_t j = 0; j < nx; ++j) w1[j] = (g.x[j] - g.mean) * (g.x[j] - g.mean) * g.m[j] * wt[j];
        g.variance = detail::pairwise_sum(w1) / g.mass;
        if (std::abs(g.mass - 1.0) > 1e-3)
            throw NumericalError("grid under-resolved: density mass " + detail::format_double(g.mass));
        // the periodic sum keeps the mass even when the spectrum is cut off, so check the cut
        const double edge = std::max(std::abs(spec_vals.front()), std::abs(spec_vals[1]));
        if (edge > 1e-3)
            throw NumericalError("grid under-resolved: characteristic function " + detail::format_double(edge) +
                                 " at the highest frequency");
        return g;
    }

private:
    enum class Form { direct, moments };

    void require_scalar(const char* what) const {
        if (spec_.dimension != 1) throw ValidationError(std::string(what) + " requires dimension 1");
    }

    // Weight and B at M + 1 uniform nodes of [0, t].
    struct EtaTable {
        double h = 0.0;
        Vec w;
        std::vector<Vec> B;
    };

    EtaTable table(double t, std::size_t M) const {
        EtaTable tab;
        tab.h = t / static_cast<double>(M);
        tab.w.resize(M + 1);
        tab.B.resize(M + 1);
        const double ut = sol_.u_at(t);
        for (std::size_t j = 0; j <= M; ++j) {
            const double eta = j == M ? t : static_cast<double>(j) * tab.h;
            const double ue = sol_.u_at(eta);
            tab.w[j] = ut / ue;
            tab.B[j] = sol_.v_at(eta);
            for (auto& b : tab.B[j]) b /= ue;
        }
        return tab;
    }

    // Exponent integrand for one node. direct: the (mhat) integrand;
    // moments: -(p^(R) - 1 + i M1.R + m2/2 |R|^2), so that the moment form is
    // exp(-|w|^2 V/2 - i w.E - int(...)).
    cplx integrand(const Vec& omega, double w, const Vec& B, Form form) const {
        Vec R = omega;
        for (auto& r : R) r *= w;
        const double rr = norm2(R);
        cplx jump = 0.0;
        if (spec_.has_jumps()) jump = jump_charfn(spec_.jump, R) - 1.0;
        if (form == Form::direct) {
            return cplx(0.5 * spec_.delta * spec_.delta * rr, dot(B, R)) - spec_.lambda * jump;
        }
        if (!spec_.has_jumps()) return 0.0;
        return -spec_.lambda * (jump + cplx(0.5 * m2c_ * rr, dot(m1_, R)));
    }

    cplx finish(double t, const Vec& omega, cplx integral, Form form) const {
        if (form == Form::direct) return std::exp(-integral);
        const double V = fundamental_.V_at(t);
        const Vec E = fundamental_.E_at(t);
        return std::exp(cplx(-0.5 * norm2(omega) * V, -dot(omega, E)) - integral);
    }

    std::vector<cplx> integrate(double t, const std::vector<Vec>& omegas, Form form) const {
        if (!(t > 0.0) || t > spec_.T * (1.0 + 1e-12))
            throw ValidationError("characteristic function time must lie in (0, T]");
        if (!sol_.regular_on(t))
            throw NumericalError("singular subinterval: the linearizer vanishes in [0, " + detail::format_double(t) + "]");
        for (const auto& om : omegas)
            if (om.size() != static_cast<std::size_t>(spec_.dimension)) throw ValidationError("omega dimension mismatch");

        std::vector<cplx> out(omegas.size());
        std::vector<std::size_t> pending(omegas.size());
        for (std::size_t j = 0; j < pending.size(); ++j) pending[j] = j;
        std::size_t M = M_;
        for (int level = 0; level < 7 && !pending.empty(); ++level, M *= 2) {
            const EtaTable tab = table(t, 2 * M);
            std::vector<std::size_t> failed;
            std::vector<cplx> fine(2 * M + 1), coarse(M + 1);
            for (std::size_t j : pending) {
                for (std::size_t q = 0; q <= 2 * M; ++q) fine[q] = integrand(omegas[j], tab.w[q], tab.B[q], form);
                for (std::size_t q = 0; q <= M; ++q) coarse[q] = fine[2 * q];
                const cplx i_fine = detail::simpson<cplx>(fine, tab.h);
                const cplx i_coarse = detail::simpson<cplx>(coarse, 2 * tab.h);
                const cplx v_fine = finish(t, omegas[j], i_fine, form);
                const cplx v_coarse = finish(t, omegas[j], i_coarse, form);
                out[j] = v_fine;
                if (std::abs(v_fine - v_coarse) > charfun_quadrature_tol) failed.push_back(j);
            }
            pending.swap(failed);
        }
        if (!pending.empty())
            throw NumericalError("characteristic function quadrature did not converge at t=" + detail::format_double(t));
        return out;
    }

    ScenarioSpec spec_;
    HjbSolution sol_;
    std::size_t M_;
    MomentPath fundamental_;
    MomentPath solution_;
    Vec m1_;
    double m2c_ = 0.0;
};

/// Multivariate isotropic normal density (2 pi V)^{-n/2} exp(-|x - E|^2 / (2V)).
inline double gaussian_density(const Vec& E, double V, const Vec& x) {
    if (!(V > 0.0)) throw ValidationError("gaussian density needs V > 0");
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - E[i]) * (x[i] - E[i]);
    return std::pow(2.0 * std::numbers::pi * V, -0.5 * static_cast<double>(x.size())) * std::exp(-d2 / (2.0 * V));
}

} // namespace mfgm
