#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <cstdlib>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mfgm::detail {

/// Cubic Hermite interpolation on [t0, t0 + h] from endpoint values and slopes.
inline double hermite(double y0, double d0, double y1, double d1, double h, double s) {
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1;
    const double h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2;
    const double h11 = s3 - s2;
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
}

/// Locates t on a uniform grid t_k = k h, k = 0..N. Returns (k, s) with s in [0, 1].
inline std::pair<std::size_t, double> locate(double t, double h, std::size_t N) {
    double pos = t / h;
    if (pos <= 0.0) return {0, 0.0};
    if (pos >= static_cast<double>(N)) return {N - 1, 1.0};
    auto k = static_cast<std::size_t>(pos);
    if (k >= N) k = N - 1;
    return {k, pos - static_cast<double>(k)};
}

/// Four-point Lagrange interpolation on a uniform grid.
inline double lagrange4(std::span<const double> y, double h, double t) {
    const std::size_t N = y.size() - 1;
    auto [k, s] = locate(t, h, N);
    if (s == 0.0) return y[k];
    if (s == 1.0) return y[k + 1];
    std::size_t j0 = k == 0 ? 0 : k - 1;
    if (j0 + 3 > N) j0 = N - 3;
    const double x = t / h - static_cast<double>(j0);
    double r = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        double w = 1.0;
        for (std::size_t j = 0; j < 4; ++j)
            if (j != i) w *= (x - static_cast<double>(j)) / (static_cast<double>(i) - static_cast<double>(j));
        r += w * y[j0 + i];
    }
    return r;
}

/// Composite Simpson on a uniform grid. An odd interval count closes with the
/// 3/8 rule on the last three intervals.
template <class T>
T simpson(std::span<const T> f, double h) {
    const std::size_t n = f.size() - 1;
    if (n == 0) return T{};
    if (n == 1) return 0.5 * h * (f[0] + f[1]);
    const std::size_t m = (n % 2 == 0) ? n : n - 3;
    T s{};
    if (m > 0) {
        T acc = f[0] + f[m];
        for (std::size_t i = 1; i < m; ++i) acc += (i % 2 == 1 ? 4.0 : 2.0) * f[i];
        s = acc * (h / 3.0);
    }
    if (m != n) s += (3.0 * h / 8.0) * (f[m] + 3.0 * f[m + 1] + 3.0 * f[m + 2] + f[m + 3]);
    return s;
}

/// Pairwise summation; the result depends only on the input order.
inline double pairwise_sum(std::span<const double> x) {
    if (x.size() <= 16) {
        double s = 0.0;
        for (double v : x) s += v;
        return s;
    }
    const std::size_t half = x.size() / 2;
    return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for an independent stream, a pure function of (seed, index).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Worker count: MFG_MOMENTS_THREADS when set, else hardware concurrency.
inline unsigned worker_count(unsigned requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("MFG_MOMENTS_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n) on up to `workers` threads in contiguous blocks.
template <class F>
void parallel_for(std::size_t n, unsigned workers, F&& body) {
    workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), std::max<std::size_t>(n, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t block = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = w * block, hi = std::min(n, lo + block);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body, &err = errors[w]] {
            try {
                for (std::size_t i = lo; i < hi; ++i) body(i);
            } catch (...) {
                err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// 17 significant digits; non-finite values as inf, -inf, nan.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline double parse_double(const std::string& s) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters in number '" + s + "'");
    return v;
}

} // namespace mfgm::detail
