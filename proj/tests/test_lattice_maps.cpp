#include "anosov/lattice_maps.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <set>

using namespace anosov;

namespace {

const ToralAutomorphism cat = ToralAutomorphism::cat_map();

// Independent oracle: every x = (a/q, b/q) on the q-grid with A^p x = x mod 1.
std::set<std::pair<Rational, Rational>> brute_force_fixed(const ToralAutomorphism& a, int p, long q) {
    IntMatrix ap = a.matrix().pow(p);
    std::set<std::pair<Rational, Rational>> out;
    for (long i = 0; i < q; ++i)
        for (long j = 0; j < q; ++j) {
            BigInt x = ap(0, 0) * i + ap(0, 1) * j;
            BigInt y = ap(1, 0) * i + ap(1, 1) * j;
            if ((x - i) % q == 0 && (y - j) % q == 0) out.insert({Rational(i, q), Rational(j, q)});
        }
    return out;
}

long long trace_count(int p) {
    const double lp = (3 + std::sqrt(5.0)) / 2;
    return std::llround(std::pow(lp, p) + std::pow(lp, -p) - 2);
}

}  // namespace

TEST(ToralAutomorphism, CatMapSpectralData) {
    EXPECT_EQ(cat.dim(), 2);
    EXPECT_EQ(cat.det_sign(), 1);
    const double lp = (3 + std::sqrt(5.0)) / 2;
    EXPECT_NEAR(std::abs(cat.eigenvalues()[0]), lp, 1e-12);
    EXPECT_NEAR(std::abs(cat.eigenvalues()[1]), 1 / lp, 1e-12);
    EXPECT_NEAR(cat.expansion_rate(), std::log(lp), 1e-12);
    EXPECT_EQ(cat.unstable_dim(), 1);
}

TEST(ToralAutomorphism, RejectsNonHyperbolicAndNonUnimodular) {
    EXPECT_THROW(ToralAutomorphism::from_rows({{1, 1}, {0, 1}}), NotHyperbolic);
    EXPECT_THROW(ToralAutomorphism::from_rows({{0, -1}, {1, 0}}), NotHyperbolic);
    EXPECT_THROW(ToralAutomorphism::from_rows({{2, 1}, {1, 2}}), InvalidArgument);
    EXPECT_THROW(ToralAutomorphism::from_rows({{1}}), NotHyperbolic);
}

TEST(ToralAutomorphism, OrientationReversingAndThreeTorus) {
    auto b = ToralAutomorphism::from_rows({{0, 1}, {1, 1}});
    EXPECT_EQ(b.det_sign(), -1);
    auto c = ToralAutomorphism::from_rows({{0, 0, 1}, {1, 0, -1}, {0, 1, 2}});
    EXPECT_EQ(c.dim(), 3);
}

TEST(CountFixedPoints, CatMapSmallPeriods) {
    EXPECT_EQ(count_fixed_points(cat, 1), 1);
    EXPECT_EQ(count_fixed_points(cat, 2), 5);
    EXPECT_EQ(count_fixed_points(cat, 3), 16);
    EXPECT_THROW(count_fixed_points(cat, 0), InvalidArgument);
}

TEST(CountFixedPoints, MatchesTraceFormulaUpToTwenty) {
    for (int p = 1; p <= 20; ++p) EXPECT_EQ(count_fixed_points(cat, p), trace_count(p)) << p;
}

TEST(CountFixedPoints, BeyondSixtyFourBits) {
    // A^p - I for p = 100 has a determinant of about 1.5e41.
    BigInt c = count_fixed_points(cat, 100);
    EXPECT_GT(c, BigInt(1) << 130);
    // Lucas-number identity: |det(A^p - I)| = L_{2p} - 2 for the cat map.
    BigInt l0 = 2, l1 = 1;
    for (int i = 0; i < 200; ++i) {
        BigInt next = l0 + l1;
        l0 = l1;
        l1 = next;
    }
    EXPECT_EQ(c, l0 - 2);
}

TEST(SmithNormalForm, DiagonalizesWithUnimodularMultipliers) {
    for (int p = 1; p <= 8; ++p) {
        IntMatrix m = cat.matrix().pow(p).minus_identity();
        auto s = smith_normal_form(m);
        IntMatrix d = s.U * m * s.V;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                EXPECT_EQ(d(i, j), i == j ? s.diagonal[i] : BigInt(0));
        EXPECT_EQ(abs(s.U.determinant()), 1);
        EXPECT_EQ(abs(s.V.determinant()), 1);
        EXPECT_EQ(s.V * s.V_inverse, IntMatrix::identity(2));
        EXPECT_EQ(s.diagonal[1] % s.diagonal[0], 0);
    }
    auto s3 = smith_normal_form(IntMatrix::from_rows({{2, 4, 4}, {-6, 6, 12}, {10, -4, -16}}));
    EXPECT_EQ(s3.diagonal[0], 2);
    EXPECT_EQ(s3.diagonal[1], 6);
    EXPECT_EQ(s3.diagonal[2], 12);
}

TEST(EnumerateFixedPoints, PeriodOneIsTheOrigin) {
    auto pts = enumerate_fixed_points(cat, 1);
    ASSERT_EQ(pts.size(), 1u);
    EXPECT_EQ(pts[0].num[0], 0);
    EXPECT_EQ(pts[0].num[1], 0);
}

TEST(EnumerateFixedPoints, PeriodTwoMatchesBruteForceGrid) {
    auto pts = enumerate_fixed_points(cat, 2);
    ASSERT_EQ(pts.size(), 5u);
    std::set<std::pair<Rational, Rational>> got;
    int with_den5 = 0;
    for (const auto& p : pts) {
        got.insert({p.coordinate(0), p.coordinate(1)});
        if (p.den == 5) ++with_den5;
    }
    EXPECT_EQ(got, brute_force_fixed(cat, 2, 5));
    EXPECT_EQ(with_den5, 4);
}

TEST(EnumerateFixedPoints, MatchesBruteForceForPeriodThreeAndFour) {
    // Denominators divide the largest invariant factor: 8 for p = 3 and 15 for p = 4.
    for (auto [p, q] : {std::pair{3, 8L}, std::pair{4, 15L}}) {
        auto pts = enumerate_fixed_points(cat, p);
        std::set<std::pair<Rational, Rational>> got;
        for (const auto& x : pts) got.insert({x.coordinate(0), x.coordinate(1)});
        EXPECT_EQ(got.size(), pts.size());
        EXPECT_EQ(got, brute_force_fixed(cat, p, q));
    }
}

TEST(EnumerateFixedPoints, LengthEqualsCountAndPointsAreFixed) {
    for (int p = 1; p <= 12; ++p) {
        auto pts = enumerate_fixed_points(cat, p);
        EXPECT_EQ(BigInt(pts.size()), count_fixed_points(cat, p));
        IntMatrix ap = cat.matrix().pow(p);
        for (std::size_t i = 0; i < pts.size(); i += 997) {
            auto img = ap.apply(pts[i].num);
            for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ((img[c] - pts[i].num[c]) % pts[i].den, 0);
        }
    }
    EXPECT_THROW(enumerate_fixed_points(cat, 0), InvalidArgument);
}

TEST(EnumerateFixedPoints, ThreeTorus) {
    auto a = ToralAutomorphism::from_rows({{0, 0, 1}, {1, 0, -1}, {0, 1, 2}});
    for (int p = 1; p <= 5; ++p)
        EXPECT_EQ(BigInt(enumerate_fixed_points(a, p).size()), count_fixed_points(a, p));
}

TEST(DecomposeOrbits, CensusForSmallPeriods) {
    auto d1 = decompose_orbits(cat, 1);
    EXPECT_EQ(d1.primitive_counts[0], 1);
    auto d3 = decompose_orbits(cat, 3);
    EXPECT_EQ(d3.primitive_counts[0], 1);
    EXPECT_EQ(d3.primitive_counts[1], 2);
    EXPECT_EQ(d3.primitive_counts[2], 5);
    EXPECT_THROW(decompose_orbits(cat, 0), InvalidArgument);
}

TEST(DecomposeOrbits, CensusIdentityAndOrbitInvariants) {
    const int p_max = 9;
    auto dec = decompose_orbits(cat, p_max);
    for (int p = 1; p <= p_max; ++p) {
        BigInt s = 0;
        for (int k = 1; k <= p; ++k)
            if (p % k == 0) s += BigInt(k) * dec.primitive_counts[k - 1];
        EXPECT_EQ(s, count_fixed_points(cat, p));
    }
    EXPECT_EQ(dec.primitive_counts, primitive_orbit_counts(cat, p_max));
    for (const auto& o : dec.orbits) {
        ASSERT_EQ(static_cast<int>(o.points.size()), o.least_period);
        std::set<std::pair<Rational, Rational>> distinct;
        for (const auto& x : o.points) distinct.insert({x.coordinate(0), x.coordinate(1)});
        EXPECT_EQ(static_cast<int>(distinct.size()), o.least_period);
        // Translation vector on the cover, and no proper divisor fixes the point.
        auto img = cat.matrix().pow(o.least_period).apply(o.representative.num);
        for (int c = 0; c < 2; ++c)
            EXPECT_EQ(img[c], o.representative.num[c] + o.translation[c] * o.representative.den);
        for (int k = 1; k < o.least_period; ++k) {
            if (o.least_period % k) continue;
            auto im = cat.matrix().pow(k).apply(o.representative.num);
            bool fixed = (im[0] - o.representative.num[0]) % o.representative.den == 0 &&
                         (im[1] - o.representative.num[1]) % o.representative.den == 0;
            EXPECT_FALSE(fixed);
        }
    }
}

TEST(LinearOrbitWeight, Values) {
    EXPECT_DOUBLE_EQ(linear_orbit_weight(cat, 1), 1.0);
    EXPECT_DOUBLE_EQ(linear_orbit_weight(cat, 2), 0.2);
    EXPECT_DOUBLE_EQ(linear_orbit_weight(cat, 3), 0.0625);
}

TEST(LinearOrbitWeight, ExactTraceIsOne) {
    for (int p = 1; p <= 12; ++p) {
        Rational sum = 0;
        auto pts = enumerate_fixed_points(cat, p);
        const Rational w = linear_orbit_weight_exact(cat, p);
        for (std::size_t i = 0; i < pts.size(); ++i) sum += w;
        EXPECT_EQ(sum, Rational(1)) << p;
    }
}

TEST(DecomposeOrbits, TwelvePeriodsRunInReasonableTime) {
    auto t0 = std::chrono::steady_clock::now();
    auto dec = decompose_orbits(cat, 12);
    double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_EQ(dec.fixed_point_counts[11], count_fixed_points(cat, 12));
    EXPECT_LT(s, 5.0);
}
