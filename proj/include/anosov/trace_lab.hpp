#pragma once

// Test functions and both sides of the global trace formula for suspensions,
// plus the pressure estimators and the Gaussian second-moment experiment.

#include "anosov/suspension.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <functional>
#include <optional>

namespace anosov {

inline constexpr double quadrature_tolerance = 1e-12;

// integral_a^b f(t) e^{-i lambda t} dt by 61-point Gauss-Kronrod on equal
// panels, doubling the panel count until the summed Kronrod-Gauss gap is
// below 1e-12. Real and imaginary parts are integrated separately.
inline Complex fourier_transform(const std::function<double(double)>& f, double a, double b, Complex lambda) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    auto kernel = [&](double t) { return std::exp(Complex(0, -1) * lambda * t); };
    int panels = 8 + static_cast<int>(std::ceil(std::abs(lambda) * (b - a) / 25));
    for (; panels <= (1 << 14); panels *= 2) {
        const double h = (b - a) / panels;
        double re = 0, im = 0, err = 0;
        for (int q = 0; q < panels; ++q) {
            const double lo = a + q * h, hi = q + 1 == panels ? b : a + (q + 1) * h;
            double e_re = 0, e_im = 0;
            re += GK::integrate([&](double t) { return f(t) * kernel(t).real(); }, lo, hi, 0, 0.0, &e_re);
            im += GK::integrate([&](double t) { return f(t) * kernel(t).imag(); }, lo, hi, 0, 0.0, &e_im);
            err += e_re + e_im;
        }
        if (err <= quadrature_tolerance) return {re, im};
    }
    throw QuadratureNonconvergence("Fourier quadrature error estimate stayed above 1e-12");
}

// exp(-1/(1 - s^2)) on (-1, 1).
inline double standard_bump(double s) {
    if (std::abs(s) >= 1) return 0;
    return std::exp(-1 / (1 - s * s));
}

inline double bump_integral() {
    static const double v = [] {
        using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
        return GK::integrate(standard_bump, -1.0, 1.0, 15, 1e-13);
    }();
    return v;
}

// Transform of the standard bump, integral of phi(s) e^{-i w s} over (-1, 1).
inline Complex standard_bump_transform(Complex w) { return fourier_transform(standard_bump, -1, 1, w); }

// psi = 1_[-1.5,1.5] convolved with the unit-mass bump of half width 0.4:
// psi = 1 on |s| <= 1.1, support (-1.9, 1.9).
inline constexpr double plateau_half_width = 1.5;
inline constexpr double plateau_mollifier = 0.4;

inline double bump_cdf(double x) {
    if (x <= -1) return 0;
    if (x >= 1) return 1;
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    return GK::integrate(standard_bump, -1.0, x, 15, 1e-13) / bump_integral();
}

inline double plateau(double s) {
    return bump_cdf((s + plateau_half_width) / plateau_mollifier) -
           bump_cdf((s - plateau_half_width) / plateau_mollifier);
}

// Transform of the plateau: the box transform times the mollifier transform.
inline Complex plateau_transform(Complex lambda) {
    const Complex box = std::abs(lambda) < 1e-8 ? Complex(2 * plateau_half_width)
                                                : 2.0 * std::sin(plateau_half_width * lambda) / lambda;
    return box * standard_bump_transform(plateau_mollifier * lambda) / bump_integral();
}

struct TestFunction {
    enum class Kind { Bump, ModulatedPlateau };
    Kind kind = Kind::Bump;
    double center = 0; // d for bumps, t for plateaus
    double scale = 1;  // l for bumps
    double xi = 0;     // modulation of psi_{t, xi}

    double support_lo() const {
        return kind == Kind::Bump ? center - scale : center - plateau_half_width - plateau_mollifier;
    }
    double support_hi() const {
        return kind == Kind::Bump ? center + scale : center + plateau_half_width + plateau_mollifier;
    }

    Complex value(double t) const {
        if (kind == Kind::Bump) return standard_bump((t - center) / scale);
        return std::exp(Complex(0, t * xi)) * plateau(t - center);
    }

    // hat f(lambda) = integral f(t) e^{-i lambda t} dt.
    Complex fourier(Complex lambda) const {
        const Complex I(0, 1);
        if (kind == Kind::Bump)
            return scale * std::exp(-I * lambda * center) * standard_bump_transform(scale * lambda);
        return std::exp(I * center * (xi - lambda)) * plateau_transform(lambda - xi);
    }
};

inline TestFunction bump(double l, double d) {
    if (!(l > 0)) throw InvalidArgument("bump scale must be positive");
    return {TestFunction::Kind::Bump, d, l, 0};
}

inline TestFunction modulated_plateau(double t, double xi) {
    return {TestFunction::Kind::ModulatedPlateau, t, 1, xi};
}

// --- Paley-Wiener envelope ------------------------------------------------------

// |hat phi(w)| <= C_N e^{|Im w|} (1 + |w|)^{-N} for the standard bump, with C_N
// fitted on a grid of |Re w| <= 200 and Im w in [-4, 0].
struct PaleyWienerFit {
    std::vector<int> orders;
    std::vector<double> constants;

    double constant(int N) const {
        for (std::size_t i = 0; i < orders.size(); ++i)
            if (orders[i] == N) return constants[i];
        throw InvalidArgument("no Paley-Wiener constant for order " + std::to_string(N));
    }
};

inline constexpr double paley_wiener_fit_range = 200;

inline const PaleyWienerFit& paley_wiener_fit() {
    static const PaleyWienerFit fit = [] {
        PaleyWienerFit f;
        for (int N = 4; N <= 8; ++N) f.orders.push_back(N);
        f.constants.assign(f.orders.size(), 0);
        for (double im : {0.0, -0.5, -1.0, -2.0, -4.0}) {
            for (int q = 0; q <= 800; ++q) {
                const Complex w(paley_wiener_fit_range * q / 800, im);
                const double env = std::abs(standard_bump_transform(w)) * std::exp(-std::abs(im));
                for (std::size_t i = 0; i < f.orders.size(); ++i)
                    f.constants[i] = std::max(f.constants[i], env * std::pow(1 + std::abs(w), f.orders[i]));
            }
        }
        return f;
    }();
    return fit;
}

// Envelope for a bump phi_{l,d} at zeta.
inline double paley_wiener_bound(const TestFunction& phi, Complex zeta, int N) {
    const double im = zeta.imag();
    const double shift = im <= 0 ? (phi.center - phi.scale) * im : (phi.center + phi.scale) * im;
    return phi.scale * paley_wiener_fit().constant(N) * std::exp(shift) *
           std::pow(1 + phi.scale * std::abs(zeta), -N);
}

// Bound on sum over |j| > J of |hat phi((2 pi j + lambda_k)/r)| for all k, using
// |(2 pi j + lambda)/r| >= (2 pi |j| - pi)/r and an integral comparison.
inline double resonance_window_tail(const TestFunction& phi, const std::vector<Complex>& lambdas, double r,
                                    long J) {
    if (phi.kind != TestFunction::Kind::Bump)
        throw InvalidArgument("resonance-side tails are available for bumps only");
    const double a = phi.scale * two_pi / r;
    double best = std::numeric_limits<double>::infinity();
    for (int N : paley_wiener_fit().orders) {
        double t = 0;
        for (Complex lam : lambdas) {
            const double im = lam.imag() / r;
            const double shift = im <= 0 ? (phi.center - phi.scale) * im : (phi.center + phi.scale) * im;
            const double base = 1 + a * (static_cast<double>(J) - 0.5);
            t += 2 * phi.scale * paley_wiener_fit().constant(N) * std::exp(shift) * std::pow(base, 1 - N) /
                 (a * (N - 1));
        }
        best = std::min(best, t);
    }
    return best;
}

inline constexpr double resonance_tail_target = 1e-10;

// Smallest J whose window tail is below 1e-10.
inline long required_window(const TestFunction& phi, const std::vector<Complex>& lambdas, double r) {
    long J = 1;
    while (resonance_window_tail(phi, lambdas, r, J) > resonance_tail_target) {
        J *= 2;
        if (J > (1L << 24)) throw WindowTooSmall("no practical window reaches the 1e-10 tail target");
    }
    long lo = J / 2, hi = J;
    while (hi - lo > 1) {
        long mid = (lo + hi) / 2;
        (resonance_window_tail(phi, lambdas, r, mid) > resonance_tail_target ? lo : hi) = mid;
    }
    return hi;
}

// --- the two sides ------------------------------------------------------------------

// Sum over closed orbits and iterates of T^# phi(T) / |det(I - P)|.
inline double orbit_side(const TestFunction& phi, const OrbitTable& table, const SuspensionFlow& flow) {
    if (!(phi.support_lo() > 0)) throw InvalidArgument("test function support must lie in (0, inf)");
    if (phi.support_hi() > table.p_max * flow.r * (1 + 1e-12))
        throw SupportExceedsTable("test function support extends beyond the tabulated periods");
    CompensatedSum<double> s;
    for (const auto& g : closed_orbits(table, flow, table.p_max))
        if (g.period > phi.support_lo() && g.period < phi.support_hi())
            s.add(g.primitive_period * g.weight * phi.value(g.period).real());
    return s.value();
}

struct ResonanceSide {
    Complex value;
    double tail = 0;
};

namespace detail {

// Composite 61-point Kronrod rule on [-1, 1] with the standard bump folded
// into the weights.
struct BumpRule {
    std::vector<double> s;
    std::vector<double> weighted;
};

inline BumpRule bump_rule(int panels) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    const auto& x = GK::abscissa();
    const auto& w = GK::weights();
    BumpRule rule;
    const double h = 2.0 / panels;
    for (int q = 0; q < panels; ++q) {
        const double mid = -1 + (q + 0.5) * h;
        for (std::size_t i = 0; i < x.size(); ++i) {
            for (int sign : {1, -1}) {
                if (i == 0 && sign < 0) continue;
                const double s = mid + sign * x[i] * h / 2;
                rule.s.push_back(s);
                rule.weighted.push_back(w[i] * h / 2 * standard_bump(s));
            }
        }
    }
    return rule;
}

// Sum over entries of multiplicity * hat phi(entry). Entries are visited in
// (k, j) order so e^{-i zeta l s} advances by a fixed phase from j to j + 1;
// the phases are recomputed directly every 32 steps.
inline Complex lattice_sum(const TestFunction& phi, const FlowResonanceLattice& lattice, const BumpRule& rule) {
    const std::size_t n = lattice.entries.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ea = lattice.entries[a];
        const auto& eb = lattice.entries[b];
        return ea.k != eb.k ? ea.k < eb.k : ea.j < eb.j;
    });
    std::vector<std::size_t> starts;
    for (std::size_t i = 0; i < n; ++i)
        if (i == 0 || lattice.entries[order[i]].k != lattice.entries[order[i - 1]].k) starts.push_back(i);
    starts.push_back(n);
    const Complex I(0, 1);
    const double l = phi.scale;
    const std::size_t m = rule.s.size();
    std::vector<Complex> terms(n);
    parallel::for_each_index(starts.size() - 1, [&](std::size_t g) {
        std::vector<Complex> phase(m), step(m);
        for (std::size_t i = 0; i < m; ++i) step[i] = std::exp(-I * (two_pi / lattice.r) * l * rule.s[i]);
        long prev_j = 0;
        int run = 0;
        for (std::size_t q = starts[g]; q < starts[g + 1]; ++q) {
            const auto& e = lattice.entries[order[q]];
            const Complex z = e.value;
            if (q > starts[g] && e.j == prev_j + 1 && run < 32) {
                for (std::size_t i = 0; i < m; ++i) phase[i] *= step[i];
                ++run;
            } else {
                for (std::size_t i = 0; i < m; ++i) phase[i] = std::exp(-I * z * l * rule.s[i]);
                run = 0;
            }
            prev_j = e.j;
            Complex acc = 0;
            for (std::size_t i = 0; i < m; ++i) acc += rule.weighted[i] * phase[i];
            terms[order[q]] = static_cast<double>(e.multiplicity) * l * std::exp(-I * z * phi.center) * acc;
        }
    });
    CompensatedSum<Complex> s;
    for (const auto& t : terms) s.add(t);
    return s.value();
}

inline constexpr double lattice_sum_tolerance = 1e-11;

}  // namespace detail

// Sum over lattice entries of hat phi(entry), with multiplicity. The panel
// count doubles until two successive sums agree to 1e-11.
inline ResonanceSide resonance_side(const TestFunction& phi, const FlowResonanceLattice& lattice) {
    const double tail = resonance_window_tail(phi, lattice.lambdas, lattice.r, lattice.J);
    if (tail > resonance_tail_target)
        throw WindowTooSmall("window J = " + std::to_string(lattice.J) + " leaves a tail of " +
                             format_double(tail) + "; need J >= " +
                             std::to_string(required_window(phi, lattice.lambdas, lattice.r)));
    double w_max = 0;
    for (const auto& e : lattice.entries) w_max = std::max(w_max, phi.scale * std::abs(e.value));
    int panels = 8 + static_cast<int>(std::ceil(w_max * 2 / 25));
    Complex prev = detail::lattice_sum(phi, lattice, detail::bump_rule(panels));
    for (; panels <= (1 << 12); panels *= 2) {
        const Complex cur = detail::lattice_sum(phi, lattice, detail::bump_rule(2 * panels));
        if (std::abs(cur - prev) <= detail::lattice_sum_tolerance) return {cur, tail};
        prev = cur;
    }
    throw QuadratureNonconvergence("lattice sum did not settle under panel doubling");
}

// r sum_p |phi(p r)| sum_rejected |mu|^p: what the rejected eigenvalues could add.
inline double rejected_resonance_budget(const TestFunction& phi, const FlowResonanceLattice& lattice) {
    if (lattice.rejected_power_sums.empty()) return 0;
    double s = 0;
    const int lo = std::max(1, static_cast<int>(std::floor(phi.support_lo() / lattice.r)));
    const int hi = static_cast<int>(std::ceil(phi.support_hi() / lattice.r));
    for (int p = lo; p <= hi; ++p) {
        const auto idx = static_cast<std::size_t>(std::min<int>(p, static_cast<int>(lattice.rejected_power_sums.size())));
        s += std::abs(phi.value(p * lattice.r)) * lattice.rejected_power_sums[idx - 1];
    }
    return lattice.r * s;
}

struct TraceReport {
    TestFunction phi;
    double lhs_orbit_side = 0;
    Complex rhs_resonance_side;
    double T_max = 0;
    long J = 0;
    int K = 0;
    double tail_budget = 0;
    double tolerance = 0;
    double difference = 0;
    bool pass = false;
};

inline std::vector<TraceReport> verify_global_trace(const SuspensionFlow& flow, const OrbitTable& table,
                                                    const FlowResonanceLattice& lattice,
                                                    const std::vector<TestFunction>& phis, double tol, int K = 0) {
    std::vector<TraceReport> out;
    for (const auto& phi : phis) {
        if (!(phi.support_lo() > 0)) throw InvalidArgument("test function support must lie in (0, inf)");
        TraceReport r;
        r.phi = phi;
        r.lhs_orbit_side = orbit_side(phi, table, flow);
        auto rhs = resonance_side(phi, lattice);
        r.rhs_resonance_side = rhs.value;
        r.T_max = table.p_max * flow.r;
        r.J = lattice.J;
        r.K = K;
        r.tail_budget = rhs.tail + rejected_resonance_budget(phi, lattice);
        r.tolerance = tol;
        r.difference = std::abs(r.lhs_orbit_side - rhs.value);
        r.pass = r.difference <= tol + r.tail_budget;
        out.push_back(r);
    }
    return out;
}

// Bumps phi_{l, d} at d = r, 2r, ..., count r.
inline std::vector<TestFunction> bump_suite(double r, int count, double l) {
    std::vector<TestFunction> out;
    for (int p = 1; p <= count; ++p) out.push_back(bump(l, p * r));
    return out;
}

// Smallest lattice window that serves every function of the suite.
inline long suite_window(const std::vector<TestFunction>& phis, const std::vector<Complex>& lambdas, double r) {
    long J = 1;
    for (const auto& phi : phis) J = std::max(J, required_window(phi, lambdas, r));
    return J;
}

// --- pressure ---------------------------------------------------------------

struct PressureEstimate {
    double P_hat = 0;
    double fit_residual = 0;
    double shift = 0;              // per-unit-time shift used in the final pass
    std::vector<double> T_grid;
    std::vector<double> log_window; // log W(T) of the final pass
};

// P(c psi^u) for a linear suspension: (1 - c) times the expansion rate per unit time.
inline double linear_pressure(const ToralAutomorphism& a, double r, double c) {
    return (1 - c) * a.expansion_rate() / r;
}

namespace detail {

inline LineFit windowed_fit(const std::vector<FlowOrbit>& orbits, double c, double shift,
                            const std::vector<double>& T_grid, std::vector<double>* logs) {
    std::vector<double> y;
    for (double T : T_grid) {
        // Log-sum-exp over the window, accumulated in period order.
        std::vector<double> e;
        for (const auto& g : orbits)
            if (g.period >= T - 1 - 1e-9 && g.period <= T + 1 + 1e-9)
                e.push_back(std::log(g.primitive_period * g.multiplicity) - c * g.unstable_log + shift * g.period);
        if (e.empty()) throw EmptyWindow("no closed orbit with period in [" + format_double(T - 1) + ", " +
                                         format_double(T + 1) + "]");
        const double m = *std::max_element(e.begin(), e.end());
        CompensatedSum<double> s;
        for (double v : e) s.add(std::exp(v - m));
        y.push_back(m + std::log(s.value()));
    }
    if (logs) *logs = y;
    return fit_line(T_grid, y);
}

}  // namespace detail

// Slope of log W(T), W(T) = sum over closed orbits with T - 1 <= T_gamma <= T + 1
// of T^# e^{int_gamma G}, G = c psi^u + shift_per_time. Nonpositive guesses are
// shifted by 1.1 |P| per unit time, twice.
inline PressureEstimate pressure_estimate(const OrbitTable& table, const SuspensionFlow& flow, double c,
                                          const std::vector<double>& T_grid, double shift_per_time = 0) {
    if (T_grid.size() < 2) throw InvalidArgument("pressure fit needs at least two window centres");
    for (std::size_t i = 1; i < T_grid.size(); ++i)
        if (!(T_grid[i] > T_grid[i - 1])) throw InvalidArgument("T_grid must be increasing");
    if (T_grid.back() + 1 > table.p_max * flow.r + 1e-9)
        throw SupportExceedsTable("pressure windows extend beyond the tabulated periods");
    const auto orbits = closed_orbits(table, flow, table.p_max);
    PressureEstimate est;
    est.T_grid = T_grid;
    LineFit fit = detail::windowed_fit(orbits, c, shift_per_time, T_grid, &est.log_window);
    double P = fit.slope;
    double shift = 0;
    for (int pass = 0; pass < 2 && P <= 0; ++pass) {
        shift = 1.1 * std::abs(P);
        fit = detail::windowed_fit(orbits, c, shift_per_time + shift, T_grid, &est.log_window);
        P = fit.slope - shift;
    }
    est.P_hat = P;
    est.shift = shift;
    est.fit_residual = fit.rms_residual;
    return est;
}

// --- Gaussian second moment ----------------------------------------------------------

struct GaussianRecord {
    double t = 0;
    double S_abs = 0;       // |S(t, 0)|
    double G_value = 0;     // G(t, sigma)
    double diag_lower = 0;  // diagonal part of G
    double pressure_bound = 0;
};

struct GaussianExperiment {
    std::vector<GaussianRecord> records;
    double sigma = 0;
    double P2psi_u = 0;     // estimated P(2 psi^u)
    LineFit diag_fit;       // log diag_lower against t
};

inline GaussianExperiment gaussian_average_experiment(const OrbitTable& table, const SuspensionFlow& flow,
                                                      const std::vector<double>& t_grid, double sigma) {
    if (!(sigma > 0)) throw InvalidArgument("sigma must be positive");
    if (t_grid.size() < 2) throw InvalidArgument("t grid needs at least two points");
    if (t_grid.back() + 2 > table.p_max * flow.r + 1e-9)
        throw SupportExceedsTable("orbits must cover [min t - 2, max t + 2]");
    const auto orbits = closed_orbits(table, flow, table.p_max);
    GaussianExperiment ex;
    ex.sigma = sigma;
    std::vector<double> pg;
    for (double t : t_grid) pg.push_back(t);
    ex.P2psi_u = pressure_estimate(table, flow, 2, pg).P_hat;
    ex.records.resize(t_grid.size());
    parallel::for_each_index(t_grid.size(), [&](std::size_t ti) {
        const double t = t_grid[ti];
        // Orbits of equal period share the Gaussian factor, so group by period.
        std::vector<double> periods, amp;
        CompensatedSum<double> diag, s0;
        for (const auto& g : orbits) {
            const double psi = plateau(g.period - t);
            if (psi == 0) continue;
            const double each = g.primitive_period * psi * g.weight / g.multiplicity;
            diag.add(g.multiplicity * each * each);
            s0.add(g.multiplicity * each);
            if (!periods.empty() && std::abs(periods.back() - g.period) < 1e-9) {
                amp.back() += g.multiplicity * each;
            } else {
                periods.push_back(g.period);
                amp.push_back(g.multiplicity * each);
            }
        }
        CompensatedSum<double> gsum;
        for (std::size_t a = 0; a < periods.size(); ++a)
            for (std::size_t b = 0; b < periods.size(); ++b) {
                const double dt = periods[a] - periods[b];
                gsum.add(amp[a] * amp[b] * std::exp(-dt * dt / (2 * sigma)));
            }
        const double root = std::sqrt(two_pi);
        ex.records[ti] = {t, std::abs(s0.value()), root * gsum.value(), root * diag.value(), 0};
    });
    const double c = ex.records.front().diag_lower / std::exp(ex.P2psi_u * t_grid.front());
    std::vector<double> ly;
    for (auto& r : ex.records) {
        r.pressure_bound = c * std::exp(ex.P2psi_u * r.t);
        ly.push_back(std::log(r.diag_lower));
    }
    ex.diag_fit = fit_line(t_grid, ly);
    return ex;
}

// S(t, xi) = sum over closed orbits of T^# psi_{t,xi}(T) / |det(I - P)|.
inline Complex plateau_orbit_sum(const std::vector<FlowOrbit>& orbits, double t, double xi) {
    const auto psi = modulated_plateau(t, xi);
    CompensatedSum<Complex> s;
    for (const auto& g : orbits)
        if (g.period > psi.support_lo() && g.period < psi.support_hi())
            s.add(g.primitive_period * g.weight * psi.value(g.period));
    return s.value();
}

inline void write_gaussian_csv(std::ostream& os, const GaussianExperiment& ex) {
    os << "t,S_abs,G_value,diag_lower,pressure_bound\n";
    for (const auto& r : ex.records)
        os << format_double(r.t) << ',' << format_double(r.S_abs) << ',' << format_double(r.G_value) << ','
           << format_double(r.diag_lower) << ',' << format_double(r.pressure_bound) << '\n';
}

}  // namespace anosov
