#pragma once

// Recovery of constant cost parameters (a, b) and the variance production
// rate K from observed moment series. The expectation fixes a through its
// frequency (a > 0), rate (a < 0) or curvature (a = 0); the variance then
// yields K with a held fixed.

#include "mfgm/detail/numerics.hpp"
#include "mfgm/errors.hpp"
#include "mfgm/model.hpp"
#include "mfgm/moments.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace mfgm {

struct ObservedSeries {
    Vec t;
    std::vector<Vec> E;  ///< per sample, length n
    Vec V;
    std::optional<double> noise_level;

    std::size_t size() const { return t.size(); }
    std::size_t dimension() const { return E.empty() ? 0 : E.front().size(); }

    void validate() const {
        if (t.size() < 8) throw ValidationError("series needs at least 8 samples");
        if (E.size() != t.size() || V.size() != t.size()) throw ValidationError("series columns differ in length");
        const std::size_t n = dimension();
        if (n == 0) throw ValidationError("series has no expectation column");
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (!std::isfinite(t[i]) || !std::isfinite(V[i])) throw ValidationError("series values must be finite");
            if (i > 0 && !(t[i] > t[i - 1])) throw ValidationError("series times must be strictly increasing");
            if (E[i].size() != n || !detail::all_finite(E[i])) throw ValidationError("series values must be finite");
        }
    }
};

struct RecoveredParams {
    Branch branch = Branch::polynomial;
    double a = 0.0;
    Vec b;
    double K = 0.0;
    /// Expectation constants per coordinate, in the layout of ClosedFormMoments.
    Vec C1, C2;
    double D_V = 0.0, C1_V = 0.0, C2_V = 0.0;
    double rms_residual_E = 0.0;
    double rms_residual_V = 0.0;
    /// Gauss-Newton covariance of (a, b_1..b_n); +inf entries when the
    /// direction is not identifiable.
    std::vector<Vec> covariance;
    bool identifiable = true;
    double criterion = 0.0;

    double freq() const { return std::sqrt(2.0 * std::abs(a)); }

    /// Expectation for coordinate i at time t.
    double E_at(double t, std::size_t i = 0) const {
        ClosedFormMoments cf;
        cf.branch = branch;
        cf.a = a;
        cf.b = b[i];
        cf.C1_E = C1[i];
        cf.C2_E = C2[i];
        return cf.E(t)[0];
    }

    double V_at(double t) const {
        ClosedFormMoments cf;
        cf.branch = branch;
        cf.a = a;
        cf.D_V = D_V;
        cf.C1_V = C1_V;
        cf.C2_V = C2_V;
        return cf.V(t)[0];
    }
};

struct BranchScore {
    Branch branch;
    double criterion;
    double rss;
    bool degenerate;
};

struct Classification {
    Branch branch = Branch::polynomial;
    /// Criterion gap to the runner-up.
    double confidence = 0.0;
    std::array<BranchScore, 3> scores{};
};

/// Extra criterion units a curved branch must gain over the polynomial branch.
inline constexpr double curved_branch_margin = 10.0;
inline constexpr std::size_t recover_starts = 16;

namespace detail {

using Mat = Eigen::MatrixXd;

struct ShapeFit {
    double theta = 0.0;  ///< frequency or rate; 0 for the polynomial branch
    double rss = std::numeric_limits<double>::infinity();
    Mat coef;            ///< 3 x n linear coefficients in the scaled basis
    bool degenerate = true;
};

// Expectation basis for a branch. Exponential columns are scaled to avoid
// overflow: exp(theta (t - t_max)), exp(-theta t), 1.
inline Mat e_basis(Branch br, double theta, const Vec& t, Mat* dtheta = nullptr) {
    const auto m = static_cast<Eigen::Index>(t.size());
    Mat X(m, 3);
    if (dtheta) dtheta->setZero(m, 3);
    const double tmax = t.back();
    for (Eigen::Index i = 0; i < m; ++i) {
        const double s = t[static_cast<std::size_t>(i)];
        switch (br) {
        case Branch::oscillatory:
            X(i, 0) = std::sin(theta * s);
            X(i, 1) = std::cos(theta * s);
            X(i, 2) = 1.0;
            if (dtheta) {
                (*dtheta)(i, 0) = s * std::cos(theta * s);
                (*dtheta)(i, 1) = -s * std::sin(theta * s);
            }
            break;
        case Branch::exponential: {
            const double ep = std::exp(theta * (s - tmax)), em = std::exp(-theta * s);
            X(i, 0) = ep;
            X(i, 1) = em;
            X(i, 2) = 1.0;
            if (dtheta) {
                (*dtheta)(i, 0) = (s - tmax) * ep;
                (*dtheta)(i, 1) = -s * em;
            }
            break;
        }
        case Branch::polynomial:
            X(i, 0) = s;
            X(i, 1) = 1.0;
            X(i, 2) = s * s;
            break;
        }
    }
    return X;
}

inline Mat series_matrix(const ObservedSeries& s) {
    const auto m = static_cast<Eigen::Index>(s.size());
    const auto n = static_cast<Eigen::Index>(s.dimension());
    Mat Y(m, n);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j) Y(i, j) = s.E[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return Y;
}

struct Projection {
    Mat coef;
    Mat resid;
    double rss = std::numeric_limits<double>::infinity();
    bool full_rank = false;
};

inline Projection project(const Mat& X, const Mat& Y) {
    Projection p;
    if (!X.allFinite()) return p;
    Eigen::ColPivHouseholderQR<Mat> qr(X);
    qr.setThreshold(1e-13);
    p.full_rank = qr.rank() == X.cols();
    p.coef = qr.solve(Y);
    p.resid = Y - X * p.coef;
    p.rss = p.resid.squaredNorm();
    if (!std::isfinite(p.rss)) p.rss = std::numeric_limits<double>::infinity();
    return p;
}

// Levenberg-Marquardt on log(theta) with the linear coefficients projected
// out (Kaufman's Jacobian).
inline ShapeFit lm_from(Branch br, double theta0, const Vec& t, const Mat& Y) {
    constexpr double log_lo = -9.210340371976182;  // log 1e-4
    constexpr double log_hi = 6.907755278982137;   // log 1e3
    double rho = std::log(theta0);
    Mat dX;
    Projection cur = project(e_basis(br, theta0, t), Y);
    ShapeFit fit;
    if (!std::isfinite(cur.rss)) return fit;
    double mu = 1e-3;
    for (int iter = 0; iter < 300; ++iter) {
        const double theta = std::exp(rho);
        const Mat X = e_basis(br, theta, t, &dX);
        // J = -(I - P) dX/drho C
        const Mat D = theta * dX * cur.coef;
        Eigen::ColPivHouseholderQR<Mat> qr(X);
        const Mat Jm = -(D - X * qr.solve(D));
        const double jtj = Jm.squaredNorm();
        const double jtr = (Jm.array() * cur.resid.array()).sum();
        if (!(jtj > 0.0) || !std::isfinite(jtj)) break;
        bool accepted = false;
        double step = 0.0;
        for (int inner = 0; inner < 40; ++inner) {
            step = -jtr / ((1.0 + mu) * jtj);
            const double trial = std::clamp(rho + step, log_lo, log_hi);
            Projection next = project(e_basis(br, std::exp(trial), t), Y);
            if (next.rss <= cur.rss) {
                step = trial - rho;
                rho = trial;
                cur = std::move(next);
                mu = std::max(mu / 3.0, 1e-12);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        if (!accepted || std::abs(step) < 1e-10) break;
    }
    fit.theta = std::exp(rho);
    fit.rss = cur.rss;
    fit.coef = cur.coef;
    fit.degenerate = !cur.full_rank;
    return fit;
}

inline ShapeFit fit_shape(Branch br, const ObservedSeries& s, unsigned workers) {
    const Mat Y = series_matrix(s);
    if (br == Branch::polynomial) {
        Projection p = project(e_basis(br, 0.0, s.t), Y);
        ShapeFit f;
        f.rss = p.rss;
        f.coef = p.coef;
        f.degenerate = !p.full_rank;
        return f;
    }
    std::vector<ShapeFit> fits(recover_starts);
    parallel_for(recover_starts, workers, [&](std::size_t k) {
        const double theta0 = std::pow(10.0, -2.0 + 4.0 * static_cast<double>(k) / static_cast<double>(recover_starts - 1));
        fits[k] = lm_from(br, theta0, s.t, Y);
    });
    // argmin with ties (equal up to round-off, e.g. sampling aliases) broken by start index
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : fits)
        if (!f.degenerate) best = std::min(best, f.rss);
    const double tie = best * (1.0 + 1e-6) + 1e-26 * std::max(1.0, Y.squaredNorm());
    for (const auto& f : fits)
        if (!f.degenerate && f.rss <= tie) return f;
    return fits.front();
}

inline double criterion(double rss, std::size_t m_tot, std::size_t p, double scale) {
    const double md = static_cast<double>(m_tot), pd = static_cast<double>(p);
    const double floor = md * (1e-13 * scale) * (1e-13 * scale);
    return md * std::log(std::max(rss, floor) / md) + 2.0 * pd + 2.0 * pd * (pd + 1.0) / (md - pd - 1.0);
}

inline std::size_t shape_params(Branch br, std::size_t n) { return br == Branch::polynomial ? 3 * n : 1 + 3 * n; }

// Shape constants in the unscaled layout of ClosedFormMoments.
inline void unpack_e(Branch br, const ShapeFit& f, double tmax, RecoveredParams& out) {
    const auto n = static_cast<std::size_t>(f.coef.cols());
    out.C1.assign(n, 0.0);
    out.C2.assign(n, 0.0);
    out.b.assign(n, 0.0);
    switch (br) {
    case Branch::oscillatory:
        out.a = 0.5 * f.theta * f.theta;
        for (std::size_t j = 0; j < n; ++j) {
            out.C1[j] = f.coef(0, static_cast<Eigen::Index>(j));
            out.C2[j] = f.coef(1, static_cast<Eigen::Index>(j));
            out.b[j] = -2.0 * out.a * f.coef(2, static_cast<Eigen::Index>(j));
        }
        break;
    case Branch::exponential:
        out.a = -0.5 * f.theta * f.theta;
        for (std::size_t j = 0; j < n; ++j) {
            const double plus = f.coef(0, static_cast<Eigen::Index>(j)) * std::exp(-f.theta * tmax);
            const double minus = f.coef(1, static_cast<Eigen::Index>(j));
            out.C1[j] = plus - minus;
            out.C2[j] = plus + minus;
            out.b[j] = -2.0 * out.a * f.coef(2, static_cast<Eigen::Index>(j));
        }
        break;
    case Branch::polynomial:
        out.a = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out.C1[j] = f.coef(0, static_cast<Eigen::Index>(j));
            out.C2[j] = f.coef(1, static_cast<Eigen::Index>(j));
            out.b[j] = -2.0 * f.coef(2, static_cast<Eigen::Index>(j));
        }
        break;
    }
}

// Solution of E'' + 2aE = -b as E0 c(t) + E0' s(t) - b q(t), smooth across a = 0.
struct IvpBasis {
    double c, s, q;
};

inline IvpBasis ivp_basis(double a, double t) {
    const double z = 2.0 * a * t * t;
    double C, S, Q;
    if (std::abs(z) < 1e-2) {
        C = 1 - z / 2 + z * z / 24 - z * z * z / 720 + z * z * z * z / 40320;
        S = 1 - z / 6 + z * z / 120 - z * z * z / 5040 + z * z * z * z / 362880;
        Q = 0.5 - z / 24 + z * z / 720 - z * z * z / 40320 + z * z * z * z / 3628800;
    } else if (z > 0) {
        const double r = std::sqrt(z);
        C = std::cos(r);
        S = std::sin(r) / r;
        Q = (1 - C) / z;
    } else {
        const double r = std::sqrt(-z);
        C = std::cosh(r);
        S = std::sinh(r) / r;
        Q = (1 - C) / z;
    }
    return {C, t * S, t * t * Q};
}

// Gauss-Newton covariance of (a, b_1..b_n) in the initial-value
// parameterization (a, {b_j, E0_j, E0'_j}).
inline void ab_covariance(const ObservedSeries& s, RecoveredParams& out, double rss) {
    const std::size_t n = s.dimension(), m = s.size();
    const std::size_t p = 1 + 3 * n;
    Vec E0(n), E0p(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto e = [&] {
            ClosedFormMoments cf;
            cf.branch = out.branch;
            cf.a = out.a;
            cf.b = out.b[j];
            cf.C1_E = out.C1[j];
            cf.C2_E = out.C2[j];
            return cf.E(0.0);
        }();
        E0[j] = e[0];
        E0p[j] = e[1];
    }
    Mat J = Mat::Zero(static_cast<Eigen::Index>(m * n), static_cast<Eigen::Index>(p));
    const double ha = 1e-6 * std::max(1.0, std::abs(out.a));
    for (std::size_t i = 0; i < m; ++i) {
        const double ti = s.t[i];
        const auto g = ivp_basis(out.a, ti), gp = ivp_basis(out.a + ha, ti), gm = ivp_basis(out.a - ha, ti);
        for (std::size_t j = 0; j < n; ++j) {
            const auto row = static_cast<Eigen::Index>(i * n + j);
            auto val = [&](const IvpBasis& q) { return E0[j] * q.c + E0p[j] * q.s - out.b[j] * q.q; };
            J(row, 0) = (val(gp) - val(gm)) / (2.0 * ha);
            J(row, static_cast<Eigen::Index>(1 + 3 * j)) = -g.q;
            J(row, static_cast<Eigen::Index>(2 + 3 * j)) = g.c;
            J(row, static_cast<Eigen::Index>(3 + 3 * j)) = g.s;
        }
    }
    const Mat JtJ = J.transpose() * J;
    Eigen::VectorXd d = JtJ.diagonal();
    for (Eigen::Index k = 0; k < d.size(); ++k) d(k) = d(k) > 0 ? 1.0 / std::sqrt(d(k)) : 0.0;
    const Mat corr = d.asDiagonal() * JtJ * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Mat> eig(corr);
    const double min_eig = eig.eigenvalues().minCoeff();
    const bool zero_col = (d.array() == 0.0).any();
    out.identifiable = !zero_col && min_eig > 1e-10;

    const std::size_t q = 1 + n;
    out.covariance.assign(q, Vec(q, std::numeric_limits<double>::infinity()));
    if (!out.identifiable) return;
    const double dof = static_cast<double>(m * n) - static_cast<double>(p);
    const double sigma2 = dof > 0 ? rss / dof : 0.0;
    const Mat inv = JtJ.ldlt().solve(Mat::Identity(JtJ.rows(), JtJ.cols()));
    std::vector<Eigen::Index> idx{0};
    for (std::size_t j = 0; j < n; ++j) idx.push_back(static_cast<Eigen::Index>(1 + 3 * j));
    for (std::size_t r = 0; r < q; ++r)
        for (std::size_t c = 0; c < q; ++c) out.covariance[r][c] = sigma2 * inv(idx[r], idx[c]);
}

inline void fit_variance(const ObservedSeries& s, RecoveredParams& out) {
    for (double v : s.V)
        if (v < 0.0) throw ValidationError("variance series contains negative values");
    const auto m = static_cast<Eigen::Index>(s.size());
    const double w = 2.0 * out.freq();
    const double tmax = s.t.back();
    Mat X(m, 3), Y(m, 1);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double t = s.t[static_cast<std::size_t>(i)];
        Y(i, 0) = s.V[static_cast<std::size_t>(i)];
        X(i, 0) = 1.0;
        switch (out.branch) {
        case Branch::oscillatory:
            X(i, 1) = std::sin(w * t);
            X(i, 2) = std::cos(w * t);
            break;
        case Branch::exponential:
            X(i, 1) = std::exp(w * (t - tmax));
            X(i, 2) = std::exp(-w * t);
            break;
        case Branch::polynomial:
            X(i, 1) = t;
            X(i, 2) = t * t;
            break;
        }
    }
    const Projection p = project(X, Y);
    out.D_V = p.coef(0, 0);
    out.C1_V = p.coef(1, 0);
    out.C2_V = p.coef(2, 0);
    if (out.branch == Branch::exponential) out.C1_V *= std::exp(-w * tmax);
    out.rms_residual_V = std::sqrt(p.rss / static_cast<double>(m));

    double K2 = 0.0;
    switch (out.branch) {
    case Branch::oscillatory:
        K2 = 8.0 * out.a * (out.C1_V * out.C1_V + out.C2_V * out.C2_V - out.D_V * out.D_V);
        break;
    case Branch::exponential:
        K2 = -8.0 * out.a * (out.D_V * out.D_V - 4.0 * out.C1_V * out.C2_V);
        break;
    case Branch::polynomial:
        K2 = out.C1_V * out.C1_V - 4.0 * out.C2_V * out.D_V;
        break;
    }
    out.K = std::sqrt(std::max(K2, 0.0));
}

} // namespace detail

/// Fits all three branches and picks the smallest small-sample corrected AIC,
///   AICc = m ln(RSS/m) + 2p + 2p(p+1)/(m-p-1),
/// where curved branches carry an extra `curved_branch_margin` so that a
/// polynomial series is not explained by a near-zero frequency or rate.
inline Classification classify_branch(const ObservedSeries& series, unsigned workers = 0) {
    series.validate();
    workers = detail::worker_count(workers);
    const std::size_t n = series.dimension(), m_tot = series.size() * n;
    double scale = 0.0;
    for (const auto& e : series.E)
        for (double x : e) scale = std::max(scale, std::abs(x));
    if (scale == 0.0) scale = 1.0;

    Classification c;
    const Branch order[3] = {Branch::oscillatory, Branch::exponential, Branch::polynomial};
    for (std::size_t k = 0; k < 3; ++k) {
        const auto fit = detail::fit_shape(order[k], series, workers);
        double crit = std::numeric_limits<double>::infinity();
        if (!fit.degenerate && std::isfinite(fit.rss)) {
            crit = detail::criterion(fit.rss, m_tot, detail::shape_params(order[k], n), scale);
            if (order[k] != Branch::polynomial) crit += curved_branch_margin;
        }
        c.scores[k] = {order[k], crit, fit.rss, fit.degenerate};
    }
    std::size_t best = 2;
    for (std::size_t k = 0; k < 3; ++k)
        if (c.scores[k].criterion < c.scores[best].criterion) best = k;
    if (!std::isfinite(c.scores[best].criterion)) throw NumericalError("indeterminate: every branch fit is degenerate");
    double runner = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < 3; ++k)
        if (k != best) runner = std::min(runner, c.scores[k].criterion);
    c.branch = order[best];
    c.confidence = runner - c.scores[best].criterion;
    return c;
}

inline RecoveredParams fit_parameters(const ObservedSeries& series, std::optional<Branch> branch = std::nullopt,
                                      unsigned workers = 0) {
    series.validate();
    workers = detail::worker_count(workers);
    RecoveredParams out;
    out.branch = branch ? *branch : classify_branch(series, workers).branch;
    const auto fit = detail::fit_shape(out.branch, series, workers);
    if (!std::isfinite(fit.rss)) throw NumericalError("no start converged for the " + std::string(branch_name(out.branch)) + " branch");
    detail::unpack_e(out.branch, fit, series.t.back(), out);
    const std::size_t n = series.dimension(), m_tot = series.size() * n;
    out.rms_residual_E = std::sqrt(fit.rss / static_cast<double>(m_tot));
    double scale = 0.0;
    for (const auto& e : series.E)
        for (double x : e) scale = std::max(scale, std::abs(x));
    out.criterion = detail::criterion(fit.rss, m_tot, detail::shape_params(out.branch, n), scale == 0.0 ? 1.0 : scale);
    detail::ab_covariance(series, out, fit.rss);
    detail::fit_variance(series, out);
    return out;
}

struct FitDiagnostics {
    Vec t;
    std::vector<Vec> residual_E;  ///< observed minus model, per sample
    Vec residual_V;
    double rms_E = 0.0;
    double rms_V = 0.0;
    double max_deviation = 0.0;  ///< over both E and V
};

inline FitDiagnostics evaluate_fit(const RecoveredParams& params, const ObservedSeries& series) {
    FitDiagnostics d;
    const std::size_t n = series.dimension(), m = series.size();
    if (params.b.size() != n) throw ValidationError("parameter and series dimensions differ");
    double se = 0.0, sv = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double t = series.t[i];
        d.t.push_back(t);
        Vec r(n);
        for (std::size_t j = 0; j < n; ++j) {
            r[j] = series.E[i][j] - params.E_at(t, j);
            se += r[j] * r[j];
            d.max_deviation = std::max(d.max_deviation, std::abs(r[j]));
        }
        d.residual_E.push_back(r);
        const double rv = series.V[i] - params.V_at(t);
        d.residual_V.push_back(rv);
        sv += rv * rv;
        d.max_deviation = std::max(d.max_deviation, std::abs(rv));
    }
    d.rms_E = std::sqrt(se / static_cast<double>(m * n));
    d.rms_V = std::sqrt(sv / static_cast<double>(m));
    return d;
}

/// Noise-free series generated from recovered (or reference) parameters.
inline ObservedSeries synthesize(const RecoveredParams& params, const Vec& times) {
    ObservedSeries s;
    s.t = times;
    for (double t : times) {
        Vec e(params.b.size());
        for (std::size_t j = 0; j < e.size(); ++j) e[j] = params.E_at(t, j);
        s.E.push_back(e);
        s.V.push_back(params.V_at(t));
    }
    return s;
}

} // namespace mfgm
