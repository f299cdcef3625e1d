#pragma once

// Constant-roof suspension of a toral map, its resonance lattice
// {(2 pi j + lambda_k)/r}, lattice counting functions and the strip constants.

#include "anosov/transfer.hpp"

#include <cstdio>
#include <ostream>

namespace anosov {

struct SuspensionFlow {
    PerturbedMap base;
    double r = 1;

    SuspensionFlow() = default;
    SuspensionFlow(PerturbedMap f, double roof) : base(std::move(f)), r(roof) {
        if (!(r > 0) || !std::isfinite(r)) throw InvalidArgument("roof r must be positive");
    }
    int flow_dim() const { return base.dim() + 1; }
};

// One closed flow orbit: the n-th iterate of a primitive base orbit class.
struct FlowOrbit {
    double period = 0;        // T_gamma = n k r
    double primitive_period = 0; // T_gamma^# = k r
    int iterate = 1;
    std::size_t orbit_id = 0; // index into OrbitTable::orbits
    double weight = 0;        // multiplicity / |det(I - P_gamma)|
    double multiplicity = 1;  // number of orbits in the class
    double unstable_log = 0;  // -(integral of psi^u over the orbit)
};

// Closed orbits of the suspension with period <= p_cut r: every iterate of
// every primitive class, sorted by (period, orbit id).
inline std::vector<FlowOrbit> closed_orbits(const OrbitTable& table, const SuspensionFlow& flow, int p_cut) {
    std::vector<FlowOrbit> out;
    for (std::size_t id = 0; id < table.orbits.size(); ++id) {
        const auto& o = table.orbits[id];
        for (int n = 1; n * o.least_period <= p_cut; ++n)
            out.push_back({n * o.least_period * flow.r, o.least_period * flow.r, n, id,
                           o.multiplicity * o.iterate_weight(n), o.multiplicity, n * o.unstable_log});
    }
    std::stable_sort(out.begin(), out.end(), [](const FlowOrbit& a, const FlowOrbit& b) {
        if (a.period != b.period) return a.period < b.period;
        return a.orbit_id < b.orbit_id;
    });
    return out;
}

struct LatticeEntry {
    Complex value;
    int k = 0;      // resonance index of the first contributing (k, j)
    long j = 0;
    int multiplicity = 1;
};

struct FlowResonanceLattice {
    std::vector<LatticeEntry> entries; // sorted by real part, then imaginary part
    long J = 0;
    double r = 1;
    std::size_t resonance_count = 0;   // number of lambda_k used
    std::vector<Complex> lambdas;      // the lambda_k themselves
    std::vector<double> rejected_power_sums; // copied from MapResonances

    std::size_t size() const { return entries.size(); }
    long total_multiplicity() const {
        long s = 0;
        for (const auto& e : entries) s += e.multiplicity;
        return s;
    }
};

inline constexpr double lattice_dedup_tolerance = 1e-9;

inline FlowResonanceLattice resonance_lattice(const SuspensionFlow& flow, const MapResonances& res, long J) {
    if (J < 1) throw InvalidArgument("lattice window J must be at least 1");
    if (res.lambda.empty()) throw InvalidArgument("resonance set is empty");
    std::vector<LatticeEntry> raw;
    raw.reserve(res.lambda.size() * static_cast<std::size_t>(2 * J + 1));
    for (long j = -J; j <= J; ++j)
        for (std::size_t k = 0; k < res.lambda.size(); ++k)
            raw.push_back({(two_pi * static_cast<double>(j) + res.lambda[k]) / flow.r, static_cast<int>(k), j, 1});
    std::stable_sort(raw.begin(), raw.end(), [](const LatticeEntry& a, const LatticeEntry& b) {
        if (a.value.real() != b.value.real()) return a.value.real() < b.value.real();
        return a.value.imag() < b.value.imag();
    });
    FlowResonanceLattice out;
    out.J = J;
    out.r = flow.r;
    out.resonance_count = res.lambda.size();
    out.lambdas = res.lambda;
    out.rejected_power_sums = res.discarded_power_sums;
    for (const auto& e : raw) {
        bool merged = false;
        for (auto it = out.entries.rbegin(); it != out.entries.rend(); ++it) {
            if (e.value.real() - it->value.real() > lattice_dedup_tolerance) break;
            if (std::abs(e.value - it->value) <= lattice_dedup_tolerance) {
                ++it->multiplicity;
                merged = true;
                break;
            }
        }
        if (!merged) out.entries.push_back(e);
    }
    return out;
}

// #{mu in lattice : |mu| <= R, Im mu > -A}, with multiplicity.
inline long counting_function(const FlowResonanceLattice& lattice, double R, double A) {
    if (!(R > 0) || !(A > 0)) throw InvalidArgument("R and A must be positive");
    if (!(two_pi * static_cast<double>(lattice.J) / lattice.r > R))
        throw WindowTooSmall("lattice window J = " + std::to_string(lattice.J) + " does not cover radius " +
                             std::to_string(R));
    long n = 0;
    for (const auto& e : lattice.entries)
        if (std::abs(e.value) <= R && e.value.imag() > -A) n += e.multiplicity;
    return n;
}

// Smallest J with 2 pi J / r > R.
inline long window_for_radius(double R, double r) {
    return static_cast<long>(std::floor(R * r / two_pi)) + 1;
}

// Each lambda_k contributes at most 2 R r / (2 pi) + 1 points of modulus <= R.
inline double counting_upper_bound(const FlowResonanceLattice& lattice, double R) {
    return static_cast<double>(lattice.resonance_count) * (R * lattice.r / std::numbers::pi + 1);
}

struct CountingFit {
    std::vector<double> radii;
    std::vector<long> counts;
    LineFit fit; // log N against log R
};

inline CountingFit counting_exponent(const FlowResonanceLattice& lattice, const std::vector<double>& radii,
                                     double A) {
    CountingFit c;
    c.radii = radii;
    std::vector<double> lx, ly;
    for (double R : radii) {
        long n = counting_function(lattice, R, A);
        c.counts.push_back(n);
        lx.push_back(std::log(R));
        ly.push_back(std::log(static_cast<double>(n)));
    }
    c.fit = fit_line(lx, ly);
    return c;
}

struct StripConstants {
    double theta0 = 0;
    double A_delta = 0;
    double A0 = 0;
    double naud_strip = 0;
    double P2psi_u = 0;
    double delta = 0;
    int flow_dim = 0;
    int gamma0_period = 0;
};

// theta0 from the shortest primitive orbit (the table order already breaks ties
// by lexicographic representative); P2psi_u is P(2 psi^u) from the closed form
// or the estimator.
inline StripConstants strip_constants(const SuspensionFlow& flow, const OrbitTable& table, double delta,
                                      double P2psi_u) {
    if (!(delta > 0 && delta < 1)) throw InvalidArgument("delta must lie in (0, 1)");
    if (table.orbits.empty()) throw InvalidArgument("orbit table has no primitive orbit");
    const OrbitRecord* g0 = &table.orbits.front();
    for (const auto& o : table.orbits)
        if (o.least_period < g0->least_period) g0 = &o;
    StripConstants s;
    const int n = flow.flow_dim();
    s.flow_dim = n;
    s.delta = delta;
    s.gamma0_period = g0->least_period;
    s.theta0 = g0->unstable_log / (g0->least_period * flow.r);
    s.A_delta = s.theta0 * (1 + (2.0 * n + 1) / (1 - delta));
    s.A0 = s.theta0 * (2.0 * n + 2);
    s.P2psi_u = P2psi_u;
    s.naud_strip = (2.0 * n + 1.5) * P2psi_u;
    return s;
}

// d_u * log(largest one-step cone expansion) per unit time: an upper bound for
// theta0 coming from the cone condition.
inline double theta0_cone_bound(const SuspensionFlow& flow, const ConeReport& cones) {
    return flow.base.base().unstable_dim() * std::log(cones.max_expansion) / flow.r;
}

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void write_lattice_csv(std::ostream& os, const FlowResonanceLattice& lattice) {
    os << "re,im,k_index,j_index,multiplicity\n";
    for (const auto& e : lattice.entries)
        os << format_double(e.value.real()) << ',' << format_double(e.value.imag()) << ',' << e.k << ',' << e.j
           << ',' << e.multiplicity << '\n';
}

}  // namespace anosov
