#pragma once

// Monte Carlo oracle: Euler-Maruyama for
//   dX = (2A(t) X + B(t)) dt + delta dW + dJ,
// J compound Poisson with intensity lambda and jump law p. Every path owns an
// RNG stream derived from (seed, path index), and all reductions run in path
// order, so results do not depend on the worker count.

#include "mfgm/charfun.hpp"
#include "mfgm/detail/numerics.hpp"
#include "mfgm/errors.hpp"
#include "mfgm/hjb.hpp"
#include "mfgm/model.hpp"
#include "mfgm/moments.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mfgm {

struct SimConfig {
    std::size_t n_paths = 100000;
    double dt = 1e-3;
    std::uint64_t seed = 0;
    Vec record_times;
    bool retain_endpoints = false;
    /// 0 means MFG_MOMENTS_THREADS or hardware concurrency.
    unsigned workers = 0;
};

struct SimRecord {
    double t = 0.0;
    Vec E_hat, se_E;
    double V_hat = 0.0, se_V = 0.0;
    std::uint64_t n_jumps = 0;
};

struct SimResult {
    int dimension = 1;
    std::size_t n_paths = 0;
    double dt = 0.0;
    std::vector<SimRecord> records;
    /// Per record: n_paths x dimension values, row-major. Empty unless retained.
    std::vector<Vec> endpoints;
};

struct ChfEstimate {
    Vec omega;
    cplx mean;
    double se_re = 0.0, se_im = 0.0;
};

namespace detail {

inline std::size_t record_step(double t, double dt) {
    const double pos = t / dt;
    const double k = std::round(pos);
    if (std::abs(k * dt - t) > 1e-12 * std::max(1.0, std::abs(t)))
        throw ValidationError("record time " + format_double(t) + " is not a multiple of dt");
    return static_cast<std::size_t>(k);
}

inline double interp_linear(const Vec& y, double h, double s) {
    auto [k, f] = locate(s, h, y.size() - 1);
    return (1.0 - f) * y[k] + f * y[k + 1];
}

} // namespace detail

inline SimResult simulate_paths(const ScenarioSpec& spec, const HjbSolution& sol, const SimConfig& cfg) {
    if (cfg.n_paths < 1000) throw ValidationError("n_paths must be >= 1000");
    if (!(cfg.dt > 0.0) || cfg.dt > spec.T / 100.0 * (1.0 + 1e-12)) throw ValidationError("dt must lie in (0, T/100]");
    if (spec.lambda * cfg.dt > 0.5) throw ValidationError("reduce dt: lambda*dt exceeds 0.5");
    const auto n = static_cast<std::size_t>(spec.dimension);

    std::vector<std::size_t> rec_steps;
    std::size_t last_step = 0;
    for (double t : cfg.record_times) {
        if (t < 0.0 || t > spec.T * (1.0 + 1e-12)) throw ValidationError("record time outside [0, T]");
        rec_steps.push_back(detail::record_step(t, cfg.dt));
        last_step = std::max(last_step, rec_steps.back());
    }
    const double t_max = static_cast<double>(last_step) * cfg.dt;
    if (std::abs(sol.u[0]) < singular_u_tol) throw NumericalError("singular drift at t=0");
    for (double ts : sol.singularities)
        if (ts <= t_max) throw NumericalError("singular drift at t=" + detail::format_double(ts));

    // drift coefficients at step starts, linear interpolation of the HJB grid
    Vec A_step(last_step + 1);
    std::vector<Vec> B_step(last_step + 1, Vec(n));
    std::vector<Vec> Bcols(n, Vec(sol.N + 1));
    for (std::size_t k = 0; k <= sol.N; ++k)
        for (std::size_t i = 0; i < n; ++i) Bcols[i][k] = sol.B[k][i];
    for (std::size_t s = 0; s <= last_step; ++s) {
        const double ts = static_cast<double>(s) * cfg.dt;
        A_step[s] = detail::interp_linear(sol.A, sol.h(), ts);
        for (std::size_t i = 0; i < n; ++i) B_step[s][i] = detail::interp_linear(Bcols[i], sol.h(), ts);
    }

    const std::size_t R = rec_steps.size();
    const std::size_t P = cfg.n_paths;
    std::vector<Vec> ends(R, Vec(P * n));
    std::vector<std::vector<std::uint32_t>> jumps(R, std::vector<std::uint32_t>(P));
    const bool with_jumps = spec.has_jumps();
    const double sq_dt = std::sqrt(cfg.dt);
    const double sq_v0 = std::sqrt(spec.initial.v0);

    detail::parallel_for(P, detail::worker_count(cfg.workers), [&](std::size_t p) {
        std::mt19937_64 rng(detail::stream_seed(cfg.seed, p));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::poisson_distribution<int> poisson(with_jumps ? spec.lambda * cfg.dt : 1.0);
        Vec x = spec.initial.x0;
        if (spec.initial.kind == InitialKind::gaussian)
            for (auto& xi : x) xi += sq_v0 * normal(rng);
        std::uint32_t nj = 0;
        auto record = [&](std::size_t step) {
            for (std::size_t r = 0; r < R; ++r) {
                if (rec_steps[r] != step) continue;
                for (std::size_t i = 0; i < n; ++i) ends[r][p * n + i] = x[i];
                jumps[r][p] = nj;
            }
        };
        record(0);
        for (std::size_t s = 0; s < last_step; ++s) {
            const double two_a = 2.0 * A_step[s];
            for (std::size_t i = 0; i < n; ++i) {
                double dx = (two_a * x[i] + B_step[s][i]) * cfg.dt;
                if (spec.delta > 0.0) dx += spec.delta * sq_dt * normal(rng);
                x[i] += dx;
            }
            if (with_jumps) {
                const int count = poisson(rng);
                for (int c = 0; c < count; ++c) {
                    const Vec z = jump_sample(spec.jump, rng);
                    for (std::size_t i = 0; i < n; ++i) x[i] += z[i];
                }
                nj += static_cast<std::uint32_t>(count);
            }
            record(s + 1);
        }
    });

    SimResult res;
    res.dimension = spec.dimension;
    res.n_paths = P;
    res.dt = cfg.dt;
    const double Pd = static_cast<double>(P);
    Vec col(P), q(P);
    for (std::size_t r = 0; r < R; ++r) {
        SimRecord rec;
        rec.t = cfg.record_times[r];
        rec.E_hat.resize(n);
        rec.se_E.resize(n);
        std::fill(q.begin(), q.end(), 0.0);
        double vsum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            // shifted by the first path so identical paths give exactly zero variance
            const double shift = ends[r][i];
            for (std::size_t p = 0; p < P; ++p) col[p] = ends[r][p * n + i] - shift;
            const double centred = detail::pairwise_sum(col) / Pd;
            const double mean = shift + centred;
            for (std::size_t p = 0; p < P; ++p) {
                const double d = col[p] - centred;
                col[p] = d * d;
                q[p] += d * d / static_cast<double>(n);
            }
            const double var = detail::pairwise_sum(col) / (Pd - 1.0);
            rec.E_hat[i] = mean;
            rec.se_E[i] = std::sqrt(var / Pd);
            vsum += var;
        }
        rec.V_hat = vsum / static_cast<double>(n);
        const double qmean = detail::pairwise_sum(q) / Pd;
        for (std::size_t p = 0; p < P; ++p) col[p] = (q[p] - qmean) * (q[p] - qmean);
        rec.se_V = std::sqrt(detail::pairwise_sum(col) / (Pd - 1.0) / Pd);
        std::uint64_t total = 0;
        for (auto c : jumps[r]) total += c;
        rec.n_jumps = total;
        res.records.push_back(std::move(rec));
    }
    if (cfg.retain_endpoints) res.endpoints = std::move(ends);
    return res;
}

/// Empirical characteristic function (1/N) sum exp(-i w.X_j) at one record.
inline std::vector<ChfEstimate> empirical_charfun(const SimResult& sim, std::size_t record, const std::vector<Vec>& omegas) {
    if (sim.endpoints.empty()) throw ValidationError("endpoints not retained; enable retain_endpoints");
    if (record >= sim.endpoints.size()) throw ValidationError("record index out of range");
    const auto n = static_cast<std::size_t>(sim.dimension);
    const Vec& X = sim.endpoints[record];
    const std::size_t P = sim.n_paths;
    const double Pd = static_cast<double>(P);
    std::vector<ChfEstimate> out;
    Vec re(P), im(P);
    for (const auto& om : omegas) {
        for (std::size_t p = 0; p < P; ++p) {
            double phase = 0.0;
            for (std::size_t i = 0; i < n; ++i) phase += om[i] * X[p * n + i];
            re[p] = std::cos(phase);
            im[p] = -std::sin(phase);
        }
        ChfEstimate e;
        e.omega = om;
        const double mr = detail::pairwise_sum(re) / Pd, mi = detail::pairwise_sum(im) / Pd;
        e.mean = cplx(mr, mi);
        for (std::size_t p = 0; p < P; ++p) {
            re[p] = (re[p] - mr) * (re[p] - mr);
            im[p] = (im[p] - mi) * (im[p] - mi);
        }
        e.se_re = std::sqrt(detail::pairwise_sum(re) / (Pd - 1.0) / Pd);
        e.se_im = std::sqrt(detail::pairwise_sum(im) / (Pd - 1.0) / Pd);
        out.push_back(e);
    }
    return out;
}

struct CovEstimate {
    double cov = 0.0;
    double se = 0.0;
};

/// Sample covariance between coordinates i and j at one record.
inline CovEstimate cross_covariance(const SimResult& sim, std::size_t record, std::size_t i, std::size_t j) {
    if (sim.endpoints.empty()) throw ValidationError("endpoints not retained; enable retain_endpoints");
    const auto n = static_cast<std::size_t>(sim.dimension);
    const Vec& X = sim.endpoints[record];
    const std::size_t P = sim.n_paths;
    const double Pd = static_cast<double>(P);
    Vec a(P), b(P);
    for (std::size_t p = 0; p < P; ++p) {
        a[p] = X[p * n + i];
        b[p] = X[p * n + j];
    }
    const double ma = detail::pairwise_sum(a) / Pd, mb = detail::pairwise_sum(b) / Pd;
    Vec prod(P);
    for (std::size_t p = 0; p < P; ++p) prod[p] = (a[p] - ma) * (b[p] - mb);
    CovEstimate c;
    c.cov = detail::pairwise_sum(prod) / (Pd - 1.0);
    for (auto& v : prod) v = (v - c.cov) * (v - c.cov);
    c.se = std::sqrt(detail::pairwise_sum(prod) / (Pd - 1.0) / Pd);
    return c;
}

// ---------------------------------------------------------------------------
// Comparison against analytic outputs

inline constexpr double z_fail_threshold = 4.0;

struct ZEntry {
    std::string quantity;
    double t = 0.0;
    double analytic = 0.0;
    double simulated = 0.0;
    double se = 0.0;
    double z = 0.0;
    bool pass = true;
};

struct RefinementDelta {
    std::string quantity;
    double t = 0.0;
    double delta = 0.0;  ///< coarse estimate minus fine estimate
};

struct CompareReport {
    std::vector<ZEntry> entries;
    std::vector<RefinementDelta> refinement;
    bool all_pass = true;

    double max_abs_z() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, std::abs(e.z));
        return m;
    }
};

inline double z_score(double simulated, double analytic, double se) {
    const double diff = simulated - analytic;
    if (se > 0.0) return diff / se;
    if (diff == 0.0) return 0.0;
    return std::copysign(INFINITY, diff);
}

/// z-scores of simulated moments (and, when an evaluator and endpoints are
/// given, empirical characteristic function samples) against analytic values.
inline CompareReport compare_report(const MomentPath& analytic, const SimResult& sim,
                                    const CharFunEvaluator* chf = nullptr, const std::vector<Vec>& omegas = {},
                                    const SimResult* refined = nullptr) {
    CompareReport rep;
    auto add = [&](std::string q, double t, double an, double si, double se) {
        ZEntry e{std::move(q), t, an, si, se, z_score(si, an, se), true};
        e.pass = std::abs(e.z) <= z_fail_threshold;
        rep.all_pass = rep.all_pass && e.pass;
        rep.entries.push_back(std::move(e));
    };
    const double T = analytic.t.back();
    for (std::size_t r = 0; r < sim.records.size(); ++r) {
        const auto& rec = sim.records[r];
        if (rec.t > T * (1.0 + 1e-12)) throw ValidationError("record time beyond analytic horizon");
        const Vec E = analytic.E_at(rec.t);
        for (std::size_t i = 0; i < E.size(); ++i)
            add("E_" + std::to_string(i + 1), rec.t, E[i], rec.E_hat[i], rec.se_E[i]);
        add("V", rec.t, analytic.V_at(rec.t), rec.V_hat, rec.se_V);
        if (chf && !omegas.empty() && !sim.endpoints.empty()) {
            const auto emp = empirical_charfun(sim, r, omegas);
            const auto an = chf->solution(rec.t, omegas);
            for (std::size_t j = 0; j < omegas.size(); ++j) {
                const std::string tag = "chf(" + detail::format_double(omegas[j][0]) + ")";
                add("re " + tag, rec.t, an[j].real(), emp[j].mean.real(), emp[j].se_re);
                add("im " + tag, rec.t, an[j].imag(), emp[j].mean.imag(), emp[j].se_im);
            }
        }
    }
    if (refined) {
        if (refined->records.size() != sim.records.size()) throw ValidationError("mismatched record times");
        for (std::size_t r = 0; r < sim.records.size(); ++r) {
            const auto& a = sim.records[r];
            const auto& b = refined->records[r];
            if (std::abs(a.t - b.t) > 1e-12) throw ValidationError("mismatched record times");
            for (std::size_t i = 0; i < a.E_hat.size(); ++i)
                rep.refinement.push_back({"E_" + std::to_string(i + 1), a.t, a.E_hat[i] - b.E_hat[i]});
            rep.refinement.push_back({"V", a.t, a.V_hat - b.V_hat});
        }
    }
    return rep;
}

} // namespace mfgm
