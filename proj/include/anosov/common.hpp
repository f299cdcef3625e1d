#pragma once

// Shared vocabulary for the anosov-spectra library: numeric aliases, the error
// hierarchy, deterministic parallel loops and compensated summation.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace anosov {

using Complex = std::complex<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// Errors. Every failure mode named by an operation contract has its own type so
// callers (and the CLI's failure records) can tell them apart.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& w) : Error("InvalidArgument", w) {}
};
struct NotHyperbolic : Error {
    explicit NotHyperbolic(const std::string& w) : Error("NotHyperbolic", w) {}
};
struct NewtonDivergence : Error {
    NewtonDivergence(int period_, double eps_reached_)
        : Error("NewtonDivergence", "period " + std::to_string(period_) + ", epsilon reached " +
                                        std::to_string(eps_reached_)),
          period(period_), eps_reached(eps_reached_) {}
    int period;
    double eps_reached;
};
struct HyperbolicityLoss : Error {
    explicit HyperbolicityLoss(int period_)
        : Error("HyperbolicityLoss", "orbit of period " + std::to_string(period_) +
                                         " has a multiplier near the unit circle"),
          period(period_) {}
    int period;
};
struct ConeEscape : Error {
    explicit ConeEscape(const std::string& w) : Error("ConeEscape", w) {}
};
struct QuadratureNonconvergence : Error {
    explicit QuadratureNonconvergence(const std::string& w)
        : Error("QuadratureNonconvergence", w) {}
};
struct WindowTooSmall : Error {
    explicit WindowTooSmall(const std::string& w) : Error("WindowTooSmall", w) {}
};
struct ConvergenceMargin : Error {
    explicit ConvergenceMargin(const std::string& w) : Error("ConvergenceMargin", w) {}
};
struct NearPole : Error {
    NearPole(int k_, long j_)
        : Error("NearPole", "within 1e-8 of lattice pole (k=" + std::to_string(k_) +
                                ", j=" + std::to_string(j_) + ")"),
          k(k_), j(j_) {}
    int k;
    long j;
};
struct PoleOnContour : Error {
    explicit PoleOnContour(const std::string& w) : Error("PoleOnContour", w) {}
};
struct SupportExceedsTable : Error {
    explicit SupportExceedsTable(const std::string& w) : Error("SupportExceedsTable", w) {}
};
struct EmptyWindow : Error {
    explicit EmptyWindow(const std::string& w) : Error("EmptyWindow", w) {}
};

// ---------------------------------------------------------------------------
// Parallelism. Work is split into contiguous index blocks and every task writes
// into its own output slot, so results never depend on the width.
// ---------------------------------------------------------------------------

namespace parallel {

inline std::atomic<int>& width_storage() {
    static std::atomic<int> w{0};
    return w;
}

inline int width() {
    int w = width_storage().load();
    if (w > 0) return w;
    if (const char* env = std::getenv("ANOSOV_SPECTRA_THREADS")) {
        int e = std::atoi(env);
        if (e > 0) return e;
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

inline void set_width(int w) { width_storage().store(w); }

// Calls body(i) for i in [0, n). Exceptions are rethrown on the calling thread;
// when several tasks fail, the one with the smallest index wins.
template <class Body>
void for_each_index(std::size_t n, Body&& body) {
    const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(width()), n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            const std::size_t lo = t * chunk;
            const std::size_t hi = std::min(n, lo + chunk);
            for (std::size_t i = lo; i < hi; ++i) {
                try {
                    body(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (std::size_t t = 0; t < threads; ++t)
        if (errors[t]) std::rethrow_exception(errors[t]);
}

}  // namespace parallel

// Neumaier compensated sum; order of accumulation is the caller's order.
template <class T>
class CompensatedSum {
public:
    void add(T x) {
        T t = sum_ + x;
        comp_ += (std::abs(sum_) >= std::abs(x)) ? (sum_ - t) + x : (x - t) + sum_;
        sum_ = t;
    }
    T value() const { return sum_ + comp_; }

private:
    T sum_{};
    T comp_{};
};

// Least-squares line through (x_i, y_i).
struct LineFit {
    double slope = 0;
    double intercept = 0;
    double rms_residual = 0;
    double slope_stderr = 0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw InvalidArgument("line fit needs at least two paired samples");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0) throw InvalidArgument("line fit needs distinct abscissae");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double r = y[i] - (f.intercept + f.slope * x[i]);
        ss += r * r;
    }
    f.rms_residual = std::sqrt(ss / n);
    f.slope_stderr = x.size() > 2 ? std::sqrt(ss / (n - 2) / sxx) : 0.0;
    return f;
}

}  // namespace anosov
