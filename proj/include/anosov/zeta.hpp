#pragma once

// The zeta function zeta_1 of a suspension flow: orbit-sum and resonance forms
// of its log-derivative, contour residues, and zeta_1 itself.

#include "anosov/suspension.hpp"

#include <ostream>

namespace anosov {

struct ValueWithTail {
    Complex value;
    double tail_bound = 0;
};

class ZetaEvaluator {
public:
    ZetaEvaluator(SuspensionFlow flow, OrbitTable table, MapResonances res, double T_max = 0)
        : flow_(std::move(flow)), table_(std::move(table)), res_(std::move(res)) {
        T_max_ = T_max > 0 ? T_max : table_.p_max * flow_.r;
        if (T_max_ < 3 * flow_.r * (1 - 1e-12))
            throw InvalidArgument("T_max must cover at least three base periods");
        if (T_max_ > table_.p_max * flow_.r * (1 + 1e-12))
            throw SupportExceedsTable("T_max exceeds the periods covered by the orbit table");
        p_cut_ = static_cast<int>(std::floor(T_max_ / flow_.r + 1e-9));
        orbits_ = closed_orbits(table_, flow_, p_cut_);
        for (int p = 1; p <= p_cut_; ++p) trace_max_ = std::max(trace_max_, table_.period(p).trace_sum);
    }

    const SuspensionFlow& flow() const { return flow_; }
    const OrbitTable& table() const { return table_; }
    const MapResonances& resonances() const { return res_; }
    double T_max() const { return T_max_; }
    const std::vector<FlowOrbit>& flow_orbits() const { return orbits_; }

    // Bound on sum over p > T_max/r of e^{-Im(lambda) p r} C / p^s, with
    // C = 2 max trace_sum standing in for the unseen trace sums.
    double orbit_tail(double im, bool with_prefactor_r) const {
        const double q = std::exp(-im * flow_.r);
        const double c = 2 * trace_max_;
        double t = c * std::pow(q, p_cut_ + 1) / (1 - q);
        return with_prefactor_r ? flow_.r * t : t;
    }

    // (1/i) sum over closed orbits of T^# e^{i lambda T} / |det(I - P)|.
    ValueWithTail log_deriv_orbit_sum(Complex lambda) const {
        if (lambda.imag() < 0.05)
            throw ConvergenceMargin("orbit sum needs Im(lambda) >= 0.05");
        CompensatedSum<Complex> s;
        const Complex i(0, 1);
        for (const auto& g : orbits_) s.add(g.primitive_period * g.weight * std::exp(i * lambda * g.period));
        return {s.value() / i, orbit_tail(lambda.imag(), true)};
    }

    // (r/i) sum_k mu_k z / (1 - mu_k z), z = e^{i lambda r}.
    Complex log_deriv_resonance_form(Complex lambda) const {
        const Complex i(0, 1);
        const Complex z = std::exp(i * lambda * flow_.r);
        Complex s = 0;
        for (std::size_t k = 0; k < res_.mu.size(); ++k) {
            const Complex den = 1.0 - res_.mu[k] * z;
            if (std::abs(den) < 1e-8) {
                const double j = std::round((lambda.real() * flow_.r - res_.lambda[k].real()) / two_pi);
                throw NearPole(static_cast<int>(k), static_cast<long>(j));
            }
            s += res_.mu[k] * z / den;
        }
        return flow_.r * s / i;
    }

    // Bound on the contribution of eigenvalues rejected by the resonance filter:
    // r sum_p |z|^p sum_rejected |mu|^p.
    double resonance_tail(Complex lambda) const {
        const double a = std::exp(-lambda.imag() * flow_.r);
        if (res_.discarded_power_sums.empty()) return 0;
        if (a >= 1) return std::numeric_limits<double>::infinity();
        double s = 0, ap = a;
        const int terms = static_cast<int>(res_.discarded_power_sums.size());
        for (int p = 1; p <= terms; ++p, ap *= a) s += ap * res_.discarded_bound(p);
        s += res_.discarded_bound(terms) * ap / (1 - a);
        return flow_.r * s;
    }

    struct Residue {
        Complex residue;
        long winding_integer = 0;
        int nodes = 0;
    };

    // (1/2 pi i) times the contour integral of the resonance form around a circle.
    Residue residue_at(Complex center, double radius) const {
        if (!(radius > 0)) throw InvalidArgument("radius must be positive");
        for (std::size_t k = 0; k < res_.lambda.size(); ++k) {
            const double j0 = (center.real() * flow_.r - res_.lambda[k].real()) / two_pi;
            const long span = static_cast<long>(std::ceil(2 * radius * flow_.r / two_pi)) + 1;
            for (long j = static_cast<long>(std::floor(j0)) - span; j <= static_cast<long>(std::ceil(j0)) + span; ++j) {
                const Complex pole = (two_pi * static_cast<double>(j) + res_.lambda[k]) / flow_.r;
                if (std::abs(std::abs(pole - center) - radius) < radius / 2)
                    throw PoleOnContour("lattice point (k=" + std::to_string(k) + ", j=" + std::to_string(j) +
                                        ") lies within radius/2 of the contour");
            }
        }
        auto integrate = [&](int n) {
            CompensatedSum<Complex> s;
            for (int m = 0; m < n; ++m) {
                const Complex w = std::polar(1.0, two_pi * m / n);
                s.add(log_deriv_resonance_form(center + radius * w) * radius * w);
            }
            return s.value() / static_cast<double>(n);
        };
        int n = 256;
        Complex prev = integrate(n);
        for (;;) {
            if (n >= (1 << 20)) throw QuadratureNonconvergence("contour quadrature did not settle");
            n *= 2;
            Complex cur = integrate(n);
            const bool done = std::abs(cur - prev) < 1e-8;
            prev = cur;
            if (done) break;
        }
        Residue r{prev, std::lround(prev.real()), n};
        if (std::abs(r.residue - static_cast<double>(r.winding_integer)) >= 1e-6)
            throw QuadratureNonconvergence("contour integral is not within 1e-6 of an integer");
        return r;
    }

    // log zeta_1 = -sum over closed orbits of T^# e^{i lambda T} / (T |det(I - P)|).
    ValueWithTail log_zeta1(Complex lambda) const {
        if (lambda.imag() < 0.5) throw ConvergenceMargin("zeta_1 orbit sum needs Im(lambda) >= 0.5");
        CompensatedSum<Complex> s;
        const Complex i(0, 1);
        for (const auto& g : orbits_)
            s.add(g.weight * std::exp(i * lambda * g.period) / static_cast<double>(g.iterate));
        return {-s.value(), orbit_tail(lambda.imag(), false)};
    }

    ValueWithTail zeta1_value(Complex lambda) const {
        auto l = log_zeta1(lambda);
        const Complex v = std::exp(l.value);
        return {v, std::abs(v) * std::expm1(l.tail_bound)};
    }

private:
    SuspensionFlow flow_;
    OrbitTable table_;
    MapResonances res_;
    double T_max_ = 0;
    int p_cut_ = 0;
    double trace_max_ = 0;
    std::vector<FlowOrbit> orbits_;
};

struct ScanRecord {
    Complex lambda;
    Complex value;
    double tail_bound = 0;
};

// Log-derivative on a grid: the orbit sum where it converges, otherwise the
// resonance form (tail = rejected-eigenvalue bound when finite, else 0).
inline std::vector<ScanRecord> zeta_scan(const ZetaEvaluator& z, const std::vector<Complex>& grid) {
    std::vector<ScanRecord> out(grid.size());
    parallel::for_each_index(grid.size(), [&](std::size_t i) {
        const Complex l = grid[i];
        if (l.imag() >= 0.05) {
            auto v = z.log_deriv_orbit_sum(l);
            out[i] = {l, v.value, v.tail_bound};
        } else {
            double t = z.resonance_tail(l);
            out[i] = {l, z.log_deriv_resonance_form(l), std::isfinite(t) ? t : 0.0};
        }
    });
    return out;
}

inline void write_scan_csv(std::ostream& os, const std::vector<ScanRecord>& scan) {
    os << "re_lambda,im_lambda,re_value,im_value,tail_bound\n";
    for (const auto& s : scan)
        os << format_double(s.lambda.real()) << ',' << format_double(s.lambda.imag()) << ','
           << format_double(s.value.real()) << ',' << format_double(s.value.imag()) << ','
           << format_double(s.tail_bound) << '\n';
}

}  // namespace anosov
