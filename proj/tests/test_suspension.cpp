#include "anosov/suspension.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace anosov;

namespace {

const ToralAutomorphism cat = ToralAutomorphism::cat_map();
const double log_lp = std::log((3 + std::sqrt(5.0)) / 2);

SuspensionFlow linear_flow(double r) { return {PerturbedMap::linear(cat), r}; }

const MapResonances& perturbed_resonances() {
    static const MapResonances r = extract_resonances(PerturbedMap::default_perturbation(cat, 0.01), 12, 1e-4);
    return r;
}

}  // namespace

TEST(SuspensionFlow, RejectsNonPositiveRoof) {
    EXPECT_THROW(linear_flow(0), InvalidArgument);
    EXPECT_THROW(linear_flow(-1), InvalidArgument);
    EXPECT_EQ(linear_flow(1).flow_dim(), 3);
}

TEST(ResonanceLattice, LinearIsTwoPiOverRIntegers) {
    auto lat = resonance_lattice(linear_flow(1), extract_resonances(PerturbedMap::linear(cat), 4), 3);
    ASSERT_EQ(lat.size(), 7u);
    for (std::size_t i = 0; i < 7; ++i) {
        long j = static_cast<long>(i) - 3;
        EXPECT_DOUBLE_EQ(lat.entries[i].value.real(), two_pi * j);
        EXPECT_EQ(lat.entries[i].value.imag(), 0);
        EXPECT_EQ(lat.entries[i].j, j);
        EXPECT_EQ(lat.entries[i].k, 0);
        EXPECT_EQ(lat.entries[i].multiplicity, 1);
    }
}

TEST(ResonanceLattice, RoofScaling) {
    auto lat = resonance_lattice(linear_flow(2), extract_resonances(PerturbedMap::linear(cat), 4), 1);
    ASSERT_EQ(lat.size(), 3u);
    EXPECT_DOUBLE_EQ(lat.entries[0].value.real(), -std::numbers::pi);
    EXPECT_DOUBLE_EQ(lat.entries[1].value.real(), 0);
    EXPECT_DOUBLE_EQ(lat.entries[2].value.real(), std::numbers::pi);
}

TEST(ResonanceLattice, DeduplicatesCoincidentEntries) {
    MapResonances res;
    res.mu = {1, 1};
    res.lambda = {0, 0};
    auto lat = resonance_lattice(linear_flow(1), res, 2);
    ASSERT_EQ(lat.size(), 5u);
    for (const auto& e : lat.entries) EXPECT_EQ(e.multiplicity, 2);
    EXPECT_EQ(lat.total_multiplicity(), 10);
}

TEST(ResonanceLattice, PerturbedEntriesInLowerHalfPlane) {
    const auto& res = perturbed_resonances();
    ASSERT_GE(res.mu.size(), 3u);
    const double r = 1.5;
    const long J = 20;
    auto lat = resonance_lattice({PerturbedMap::default_perturbation(cat, 0.01), r}, res, J);
    for (const auto& e : lat.entries) {
        EXPECT_LE(e.value.imag(), 1e-8);
        EXPECT_NEAR(e.value.imag(), std::log(std::abs(res.mu[static_cast<std::size_t>(e.k)])) / r, 1e-14);
        if (e.k > 0) EXPECT_LT(e.value.imag(), 0);
    }
    // Real lattice points from lambda_0.
    for (long j = -J; j <= J; ++j) {
        bool found = false;
        for (const auto& e : lat.entries)
            if (e.k == 0 && e.j == j) found = std::abs(e.value - Complex(two_pi * j / r, 0)) < 1e-14;
        EXPECT_TRUE(found) << j;
    }
    // z -> -conj(z) symmetry inside the window (negative real mu shifts j by one).
    const double edge = (two_pi * (J - 1)) / r;
    for (const auto& e : lat.entries) {
        if (std::abs(e.value.real()) > edge) continue;
        double best = 1;
        for (const auto& f : lat.entries) best = std::min(best, std::abs(f.value + std::conj(e.value)));
        EXPECT_LT(best, 1e-6);
    }
}

TEST(ResonanceLattice, PeriodicUnderTwoPiOverRShift) {
    const double r = 1.3;
    auto lat = resonance_lattice({PerturbedMap::default_perturbation(cat, 0.01), r}, perturbed_resonances(), 10);
    for (const auto& e : lat.entries) {
        if (e.j >= 10) continue;
        Complex shifted = e.value + two_pi / r;
        double best = 1;
        for (const auto& f : lat.entries) best = std::min(best, std::abs(f.value - shifted));
        EXPECT_LT(best, 1e-12);
    }
}

TEST(CountingFunction, LinearExamples) {
    auto res = extract_resonances(PerturbedMap::linear(cat), 4);
    auto lat = resonance_lattice(linear_flow(1), res, 20);
    EXPECT_EQ(counting_function(lat, 100, 1), 31);
    EXPECT_EQ(counting_function(lat, 100, 7.5), 31);
    EXPECT_EQ(counting_function(lat, two_pi - 0.01, 1), 1);
    EXPECT_THROW(counting_function(lat, 200, 1), WindowTooSmall);
    EXPECT_THROW(counting_function(lat, -1, 1), InvalidArgument);
}

TEST(CountingFunction, LinearGrowthExponent) {
    auto lat = resonance_lattice(linear_flow(1), extract_resonances(PerturbedMap::linear(cat), 4),
                                 window_for_radius(1e4, 1));
    auto c = counting_exponent(lat, {1e2, 1e3, 1e4}, 1);
    EXPECT_GE(c.fit.slope, 0.95);
    EXPECT_LE(c.fit.slope, 1.05);
    for (std::size_t i = 0; i < c.radii.size(); ++i) {
        EXPECT_EQ(c.counts[i], 2 * static_cast<long>(std::floor(c.radii[i] / two_pi)) + 1);
        EXPECT_LE(static_cast<double>(c.counts[i]), counting_upper_bound(lat, c.radii[i]));
    }
}

TEST(CountingFunction, PerturbedUpperBoundAndStrip) {
    const double r = 1;
    const auto& res = perturbed_resonances();
    auto lat = resonance_lattice({PerturbedMap::default_perturbation(cat, 0.01), r}, res, 200);
    const double A = 10;
    for (double R : {10.0, 100.0, 1000.0}) {
        long n = counting_function(lat, R, A);
        EXPECT_LE(static_cast<double>(n), counting_upper_bound(lat, R));
        EXPECT_GE(n, counting_function(lat, R, 0.5));
    }
}

TEST(StripConstants, LinearCatClosedForms) {
    auto flow = linear_flow(1);
    auto table = linear_orbit_table(cat, 3);
    auto s = strip_constants(flow, table, 0.5, -log_lp);
    EXPECT_NEAR(s.theta0, 0.9624236501192069, 1e-12);
    EXPECT_NEAR(s.A_delta, 15 * log_lp, 1e-12);
    EXPECT_NEAR(s.A_delta, 14.4364, 1e-4);
    EXPECT_NEAR(s.A0, 8 * log_lp, 1e-12);
    EXPECT_NEAR(s.naud_strip, -7.5 * log_lp, 1e-12);
    EXPECT_NEAR(s.naud_strip, -7.2182, 1e-4);
    EXPECT_EQ(s.flow_dim, 3);
    EXPECT_EQ(s.gamma0_period, 1);
    EXPECT_THROW(strip_constants(flow, table, 1.0, 0), InvalidArgument);
}

TEST(StripConstants, RoofScalesTheta) {
    auto s = strip_constants(linear_flow(2), linear_orbit_table(cat, 2), 0.5, 0);
    EXPECT_NEAR(s.theta0, log_lp / 2, 1e-12);
}

TEST(StripConstants, ThetaBelowConeBound) {
    for (double eps : {0.0, 0.01}) {
        auto f = PerturbedMap::default_perturbation(cat, eps);
        SuspensionFlow flow(f, 1);
        auto s = strip_constants(flow, continue_orbits(f, 3), 0.5, 0);
        auto cones = cone_check(f, 16, 10);
        EXPECT_LE(s.theta0, theta0_cone_bound(flow, cones) * (1 + 1e-9)) << eps;
    }
}

TEST(LatticeCsv, Columns) {
    auto lat = resonance_lattice(linear_flow(1), extract_resonances(PerturbedMap::linear(cat), 4), 1);
    std::ostringstream os;
    write_lattice_csv(os, lat);
    EXPECT_EQ(os.str(),
              "re,im,k_index,j_index,multiplicity\n"
              "-6.2831853071795862,0,0,-1,1\n0,0,0,0,1\n6.2831853071795862,0,0,1,1\n");
}
