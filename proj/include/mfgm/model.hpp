#pragma once

// Problem data model for linear-quadratic mean field games with jump-diffusion
// noise: cost coefficients, terminal pay-off, initial law and the jump law
// together with its moments, characteristic function and sampler.

#include "mfgm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace mfgm {

using Vec = std::vector<double>;
using cplx = std::complex<double>;

inline double dot(const Vec& x, const Vec& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(const Vec& x) { return dot(x, x); }

/// Polynomial in t with coefficients in increasing degree; a constant is a
/// single coefficient.
struct Polynomial {
    static constexpr std::size_t max_degree = 4;

    std::vector<double> coeffs{0.0};

    static Polynomial constant(double c) { return Polynomial{{c}}; }

    double operator()(double t) const {
        double r = 0.0;
        for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) r = r * t + *it;
        return r;
    }

    double derivative(double t) const {
        double r = 0.0;
        for (std::size_t k = coeffs.size(); k-- > 1;) r = r * t + static_cast<double>(k) * coeffs[k];
        return r;
    }

    bool is_constant() const {
        for (std::size_t k = 1; k < coeffs.size(); ++k)
            if (coeffs[k] != 0.0) return false;
        return true;
    }

    bool operator==(const Polynomial&) const = default;
};

/// b(t) = b0 + b1 E(t) + b2 E'(t), closing the loop between the cost and the
/// population mean.
struct MeanFieldCoupling {
    Vec b0;
    double b1 = 0.0;
    double b2 = 0.0;

    bool operator==(const MeanFieldCoupling&) const = default;
};

struct CostCoefficients {
    Polynomial a;
    /// One polynomial per coordinate; empty when `meanfield` is set.
    std::vector<Polynomial> b;
    Polynomial c;
    std::optional<MeanFieldCoupling> meanfield;

    Vec b_at(double t) const {
        Vec r(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) r[i] = b[i](t);
        return r;
    }

    bool operator==(const CostCoefficients&) const = default;
};

struct TerminalCost {
    double A_T = 0.0;
    Vec B_T;
    double C_T = 0.0;

    bool operator==(const TerminalCost&) const = default;
};

enum class InitialKind { dirac, gaussian };

struct InitialLaw {
    InitialKind kind = InitialKind::dirac;
    Vec x0;
    /// Per-coordinate variance, zero for a Dirac mass.
    double v0 = 0.0;

    /// Characteristic function of the initial law, e^{-i zeta.x0 - |zeta|^2 v0 / 2}.
    cplx charfn(const Vec& zeta) const {
        return std::exp(cplx(-0.5 * norm2(zeta) * v0, -dot(zeta, x0)));
    }

    bool operator==(const InitialLaw&) const = default;
};

// ---------------------------------------------------------------------------
// Jump laws

struct NoJump {
    bool operator==(const NoJump&) const = default;
};
struct PointMassJump {
    Vec z0;
    bool operator==(const PointMassJump&) const = default;
};
/// Independent N(mu_i, sigma^2) per coordinate.
struct GaussianJump {
    Vec mu;
    double sigma = 1.0;
    bool operator==(const GaussianJump&) const = default;
};
/// Independent U(lo_i, hi_i) per coordinate.
struct UniformJump {
    Vec lo;
    Vec hi;
    bool operator==(const UniformJump&) const = default;
};
/// Independent one-sided Exp(rate) per coordinate.
struct ExponentialJump {
    double rate = 1.0;
    std::size_t dim = 1;
    bool operator==(const ExponentialJump&) const = default;
};

using JumpDistribution = std::variant<NoJump, PointMassJump, GaussianJump, UniformJump, ExponentialJump>;

struct JumpMoments {
    Vec M1;
    /// Total second moment, the integral of |z|^2 p(z).
    double M2 = 0.0;
    /// E[z_i^2] for each coordinate.
    Vec per_coordinate;
};

inline std::string jump_type_name(const JumpDistribution& j) {
    static const char* names[] = {"none", "point", "gaussian", "uniform", "exponential"};
    return names[j.index()];
}

inline JumpMoments jump_moments(const JumpDistribution& jump) {
    JumpMoments m;
    std::visit(
        [&](const auto& d) {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, NoJump>) {
                throw ValidationError("no jump law");
            } else if constexpr (std::is_same_v<D, PointMassJump>) {
                m.M1 = d.z0;
                for (double z : d.z0) m.per_coordinate.push_back(z * z);
            } else if constexpr (std::is_same_v<D, GaussianJump>) {
                m.M1 = d.mu;
                for (double mu : d.mu) m.per_coordinate.push_back(mu * mu + d.sigma * d.sigma);
            } else if constexpr (std::is_same_v<D, UniformJump>) {
                for (std::size_t i = 0; i < d.lo.size(); ++i) {
                    const double lo = d.lo[i], hi = d.hi[i];
                    m.M1.push_back(0.5 * (lo + hi));
                    m.per_coordinate.push_back((lo * lo + lo * hi + hi * hi) / 3.0);
                }
            } else {
                for (std::size_t i = 0; i < d.dim; ++i) {
                    m.M1.push_back(1.0 / d.rate);
                    m.per_coordinate.push_back(2.0 / (d.rate * d.rate));
                }
            }
        },
        jump);
    for (double s : m.per_coordinate) m.M2 += s;
    return m;
}

namespace detail {

// sin(x)/x, accurate near zero.
inline double sinc(double x) {
    if (std::abs(x) < 1e-4) return 1.0 - x * x / 6.0;
    return std::sin(x) / x;
}

} // namespace detail

/// Characteristic function of the jump law, p^(omega) = E[exp(-i omega.z)].
inline cplx jump_charfn(const JumpDistribution& jump, const Vec& omega) {
    return std::visit(
        [&](const auto& d) -> cplx {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, NoJump>) {
                throw ValidationError("no jump law");
            } else if constexpr (std::is_same_v<D, PointMassJump>) {
                return std::exp(cplx(0.0, -dot(omega, d.z0)));
            } else if constexpr (std::is_same_v<D, GaussianJump>) {
                return std::exp(cplx(-0.5 * d.sigma * d.sigma * norm2(omega), -dot(omega, d.mu)));
            } else if constexpr (std::is_same_v<D, UniformJump>) {
                cplx r = 1.0;
                for (std::size_t i = 0; i < omega.size(); ++i) {
                    const double mid = 0.5 * (d.lo[i] + d.hi[i]);
                    const double half = 0.5 * (d.hi[i] - d.lo[i]);
                    r *= std::exp(cplx(0.0, -omega[i] * mid)) * detail::sinc(omega[i] * half);
                }
                return r;
            } else {
                cplx r = 1.0;
                for (double w : omega) r *= d.rate / cplx(d.rate, w);
                return r;
            }
        },
        jump);
}

/// Draws one jump size. Consumes the engine deterministically for a fixed law.
template <class Engine>
Vec jump_sample(const JumpDistribution& jump, Engine& rng) {
    return std::visit(
        [&](const auto& d) -> Vec {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, NoJump>) {
                throw ValidationError("no jump law");
            } else if constexpr (std::is_same_v<D, PointMassJump>) {
                return d.z0;
            } else if constexpr (std::is_same_v<D, GaussianJump>) {
                std::normal_distribution<double> nd(0.0, 1.0);
                Vec z(d.mu.size());
                for (std::size_t i = 0; i < z.size(); ++i) z[i] = d.mu[i] + d.sigma * nd(rng);
                return z;
            } else if constexpr (std::is_same_v<D, UniformJump>) {
                std::uniform_real_distribution<double> ud(0.0, 1.0);
                Vec z(d.lo.size());
                for (std::size_t i = 0; i < z.size(); ++i) z[i] = d.lo[i] + (d.hi[i] - d.lo[i]) * ud(rng);
                return z;
            } else {
                std::exponential_distribution<double> ed(d.rate);
                Vec z(d.dim);
                for (auto& zi : z) zi = ed(rng);
                return z;
            }
        },
        jump);
}

// ---------------------------------------------------------------------------
// Scenario

struct ScenarioSpec {
    int dimension = 1;
    double T = 1.0;
    double delta = 0.0;
    double lambda = 0.0;
    JumpDistribution jump = NoJump{};
    CostCoefficients cost;
    TerminalCost terminal;
    InitialLaw initial;

    bool has_jumps() const { return lambda > 0.0 && !std::holds_alternative<NoJump>(jump); }

    /// lambda * M1, zero without jumps.
    Vec jump_drift() const {
        Vec r(static_cast<std::size_t>(dimension), 0.0);
        if (!has_jumps()) return r;
        const auto m = jump_moments(jump);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = lambda * m.M1[i];
        return r;
    }

    /// lambda * M2 (total second moment), zero without jumps.
    double jump_second() const { return has_jumps() ? lambda * jump_moments(jump).M2 : 0.0; }

    /// Per-coordinate variance production rate K = delta^2 + lambda E[z_i^2].
    /// Equals delta^2 + lambda M2 in one dimension.
    double K() const {
        double k = delta * delta;
        if (has_jumps()) k += lambda * jump_moments(jump).per_coordinate.front();
        return k;
    }

    bool operator==(const ScenarioSpec&) const = default;

    /// Throws ValidationError naming the first failed constraint.
    void validate() const;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void check_poly(const Polynomial& p, const std::string& name) {
    require(!p.coeffs.empty(), name + ": polynomial needs at least one coefficient");
    require(p.coeffs.size() <= Polynomial::max_degree + 1, name + ": polynomial degree must be <= 4");
    require(all_finite(p.coeffs), name + ": coefficients must be finite");
}

} // namespace detail

inline void ScenarioSpec::validate() const {
    using detail::require;
    const auto n = static_cast<std::size_t>(dimension);
    require(dimension >= 1, "dimension must be >= 1");
    require(std::isfinite(T) && T > 0.0, "T must be > 0");
    require(std::isfinite(delta) && delta >= 0.0, "delta must be >= 0");
    require(std::isfinite(lambda) && lambda >= 0.0, "lambda must be >= 0");
    if (lambda > 0.0) require(!std::holds_alternative<NoJump>(jump), "jump required when lambda>0");

    std::visit(
        [&](const auto& d) {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, PointMassJump>) {
                require(d.z0.size() == n && detail::all_finite(d.z0), "jump.z0 must have length dimension");
            } else if constexpr (std::is_same_v<D, GaussianJump>) {
                require(d.mu.size() == n && detail::all_finite(d.mu), "jump.mu must have length dimension");
                require(std::isfinite(d.sigma) && d.sigma > 0.0, "jump.sigma must be > 0");
            } else if constexpr (std::is_same_v<D, UniformJump>) {
                require(d.lo.size() == n && d.hi.size() == n, "jump.lo/hi must have length dimension");
                require(detail::all_finite(d.lo) && detail::all_finite(d.hi), "jump.lo/hi must be finite");
                for (std::size_t i = 0; i < n; ++i) require(d.lo[i] < d.hi[i], "jump uniform requires lo < hi");
            } else if constexpr (std::is_same_v<D, ExponentialJump>) {
                require(d.dim == n, "jump exponential dimension mismatch");
                require(std::isfinite(d.rate) && d.rate > 0.0, "jump.rate must be > 0");
            }
        },
        jump);

    if (!std::holds_alternative<NoJump>(jump)) {
        const auto m = jump_moments(jump);
        for (double s : m.per_coordinate) {
            require(std::abs(s - m.per_coordinate.front()) <= 1e-12 * std::max(1.0, std::abs(s)),
                    "jump law must have equal per-coordinate second moments (isotropic variance)");
        }
    }

    detail::check_poly(cost.a, "cost.a");
    detail::check_poly(cost.c, "cost.c");
    if (cost.meanfield) {
        require(cost.b.empty(), "cost.meanfield and an explicit cost.b are mutually exclusive");
        require(cost.meanfield->b0.size() == n && detail::all_finite(cost.meanfield->b0),
                "cost.meanfield.b0 must have length dimension");
        require(std::isfinite(cost.meanfield->b1) && std::isfinite(cost.meanfield->b2),
                "cost.meanfield.b1/b2 must be finite");
        require(cost.a.is_constant(), "cost.meanfield requires a constant cost.a");
    } else {
        require(cost.b.size() == n, "cost.b must have one entry per coordinate");
        for (const auto& p : cost.b) detail::check_poly(p, "cost.b");
    }

    require(std::isfinite(terminal.A_T) && std::isfinite(terminal.C_T), "terminal costs must be finite");
    require(terminal.B_T.size() == n && detail::all_finite(terminal.B_T), "terminal.B_T must have length dimension");

    require(initial.x0.size() == n && detail::all_finite(initial.x0), "initial.x0 must have length dimension");
    require(std::isfinite(initial.v0) && initial.v0 >= 0.0, "initial.v0 must be >= 0");
    if (initial.kind == InitialKind::dirac)
        require(initial.v0 == 0.0, "initial.v0 must be 0 for a dirac law");
    else
        require(initial.v0 > 0.0, "initial.v0 must be > 0 for a gaussian law");
}

} // namespace mfgm
