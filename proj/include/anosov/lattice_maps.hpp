#pragma once

// Exact integer arithmetic for hyperbolic toral automorphisms x -> Ax mod Z^d:
// fixed-point counts |det(A^p - I)|, their enumeration through the Smith normal
// form of A^p - I, and the decomposition of periodic points into primitive orbits.

#include "anosov/common.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <map>
#include <sstream>

namespace anosov {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

inline constexpr int max_torus_dim = 4;
inline constexpr double hyperbolicity_tolerance = 1e-9;

// Dense square matrix over arbitrary-precision integers, row major.
class IntMatrix {
public:
    IntMatrix() = default;
    explicit IntMatrix(int n) : n_(n), a_(static_cast<std::size_t>(n * n)) {}

    static IntMatrix identity(int n) {
        IntMatrix m(n);
        for (int i = 0; i < n; ++i) m(i, i) = 1;
        return m;
    }

    static IntMatrix from_rows(const std::vector<std::vector<long long>>& rows) {
        const int n = static_cast<int>(rows.size());
        IntMatrix m(n);
        for (int i = 0; i < n; ++i) {
            if (static_cast<int>(rows[i].size()) != n)
                throw InvalidArgument("matrix must be square");
            for (int j = 0; j < n; ++j) m(i, j) = rows[i][j];
        }
        return m;
    }

    int dim() const { return n_; }
    BigInt& operator()(int i, int j) { return a_[static_cast<std::size_t>(i * n_ + j)]; }
    const BigInt& operator()(int i, int j) const {
        return a_[static_cast<std::size_t>(i * n_ + j)];
    }

    friend IntMatrix operator*(const IntMatrix& x, const IntMatrix& y) {
        IntMatrix r(x.n_);
        for (int i = 0; i < x.n_; ++i)
            for (int k = 0; k < x.n_; ++k) {
                if (x(i, k) == 0) continue;
                for (int j = 0; j < x.n_; ++j) r(i, j) += x(i, k) * y(k, j);
            }
        return r;
    }
    friend bool operator==(const IntMatrix&, const IntMatrix&) = default;

    IntMatrix minus_identity() const {
        IntMatrix r = *this;
        for (int i = 0; i < n_; ++i) r(i, i) -= 1;
        return r;
    }

    IntMatrix transpose() const {
        IntMatrix r(n_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    IntMatrix pow(int p) const {
        IntMatrix result = identity(n_), base = *this;
        while (p > 0) {
            if (p & 1) result = result * base;
            base = base * base;
            p >>= 1;
        }
        return result;
    }

    std::vector<BigInt> apply(const std::vector<BigInt>& v) const {
        std::vector<BigInt> r(static_cast<std::size_t>(n_));
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) r[i] += (*this)(i, j) * v[j];
        return r;
    }

    // Fraction-free Gaussian elimination (Bareiss); exact for integer input.
    BigInt determinant() const {
        if (n_ == 0) return 1;
        IntMatrix m = *this;
        BigInt sign = 1, prev = 1;
        for (int k = 0; k < n_ - 1; ++k) {
            if (m(k, k) == 0) {
                int swap = -1;
                for (int i = k + 1; i < n_; ++i)
                    if (m(i, k) != 0) {
                        swap = i;
                        break;
                    }
                if (swap < 0) return 0;
                for (int j = 0; j < n_; ++j) std::swap(m(k, j), m(swap, j));
                sign = -sign;
            }
            for (int i = k + 1; i < n_; ++i)
                for (int j = k + 1; j < n_; ++j)
                    m(i, j) = (m(i, j) * m(k, k) - m(i, k) * m(k, j)) / prev;
            prev = m(k, k);
        }
        return sign * m(n_ - 1, n_ - 1);
    }

    Mat to_double() const {
        Mat r(n_, n_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) r(i, j) = static_cast<double>((*this)(i, j));
        return r;
    }

private:
    int n_ = 0;
    std::vector<BigInt> a_;
};

// U * M * V = diag(d_1, ..., d_n) with U, V unimodular and d_i | d_{i+1}, d_i >= 0.
struct SmithDecomposition {
    IntMatrix U;
    IntMatrix V;
    IntMatrix V_inverse;
    std::vector<BigInt> diagonal;
};

namespace detail {

inline void row_combine(IntMatrix& m, int target, int source, const BigInt& q) {
    for (int j = 0; j < m.dim(); ++j) m(target, j) -= q * m(source, j);
}
inline void col_combine(IntMatrix& m, int target, int source, const BigInt& q) {
    for (int i = 0; i < m.dim(); ++i) m(i, target) -= q * m(i, source);
}
inline void row_swap(IntMatrix& m, int a, int b) {
    if (a == b) return;
    for (int j = 0; j < m.dim(); ++j) std::swap(m(a, j), m(b, j));
}
inline void col_swap(IntMatrix& m, int a, int b) {
    if (a == b) return;
    for (int i = 0; i < m.dim(); ++i) std::swap(m(i, a), m(i, b));
}

// Floor division for the sign conventions used by the reduction.
inline BigInt floor_div(const BigInt& a, const BigInt& b) {
    BigInt q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}
inline BigInt floor_mod(const BigInt& a, const BigInt& b) { return a - b * floor_div(a, b); }

}  // namespace detail

// Elementary row/column reduction with explicit unimodular multipliers.
// V_inverse accumulates the inverse column operations so that V * V_inverse = I.
inline SmithDecomposition smith_normal_form(const IntMatrix& m) {
    using namespace detail;
    const int n = m.dim();
    SmithDecomposition s{IntMatrix::identity(n), IntMatrix::identity(n),
                         IntMatrix::identity(n), {}};
    IntMatrix a = m;
    // Column op "col_t -= q col_s" on V is undone on V_inverse by "row_s += q row_t".
    auto col_op = [&](int target, int source, const BigInt& q) {
        col_combine(a, target, source, q);
        col_combine(s.V, target, source, q);
        row_combine(s.V_inverse, source, target, -q);
    };
    auto col_sw = [&](int x, int y) {
        col_swap(a, x, y);
        col_swap(s.V, x, y);
        row_swap(s.V_inverse, x, y);
    };
    auto row_op = [&](int target, int source, const BigInt& q) {
        row_combine(a, target, source, q);
        row_combine(s.U, target, source, q);
    };
    auto row_sw = [&](int x, int y) {
        row_swap(a, x, y);
        row_swap(s.U, x, y);
    };

    for (int t = 0; t < n; ++t) {
        while (true) {
            // Pivot: smallest nonzero magnitude in the trailing block.
            int pi = -1, pj = -1;
            for (int i = t; i < n; ++i)
                for (int j = t; j < n; ++j)
                    if (a(i, j) != 0 && (pi < 0 || abs(a(i, j)) < abs(a(pi, pj)))) {
                        pi = i;
                        pj = j;
                    }
            if (pi < 0) break;  // trailing block is zero
            row_sw(t, pi);
            col_sw(t, pj);
            bool clean = true;
            for (int i = t + 1; i < n; ++i) {
                if (a(i, t) == 0) continue;
                row_op(i, t, floor_div(a(i, t), a(t, t)));
                if (a(i, t) != 0) clean = false;
            }
            for (int j = t + 1; j < n; ++j) {
                if (a(t, j) == 0) continue;
                col_op(j, t, floor_div(a(t, j), a(t, t)));
                if (a(t, j) != 0) clean = false;
            }
            if (!clean) continue;
            // Divisibility of the trailing block by the pivot.
            int bad_row = -1;
            for (int i = t + 1; i < n && bad_row < 0; ++i)
                for (int j = t + 1; j < n; ++j)
                    if (a(i, j) % a(t, t) != 0) {
                        bad_row = i;
                        break;
                    }
            if (bad_row < 0) break;
            row_op(t, bad_row, BigInt(-1));
        }
        if (a(t, t) < 0) {
            for (int j = 0; j < n; ++j) {
                a(t, j) = -a(t, j);
                s.U(t, j) = -s.U(t, j);
            }
        }
    }
    s.diagonal.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) s.diagonal[i] = a(i, i);
    return s;
}

// ---------------------------------------------------------------------------

class ToralAutomorphism {
public:
    ToralAutomorphism() = default;

    explicit ToralAutomorphism(IntMatrix m) : matrix_(std::move(m)) {
        const int d = matrix_.dim();
        if (d < 1 || d > max_torus_dim)
            throw InvalidArgument("torus dimension must be between 1 and 4");
        BigInt det = matrix_.determinant();
        if (det != 1 && det != -1) throw InvalidArgument("matrix is not unimodular (|det| != 1)");
        det_sign_ = det == 1 ? 1 : -1;

        Eigen::EigenSolver<Mat> es(matrix_.to_double(), false);
        eigenvalues_.resize(static_cast<std::size_t>(d));
        double log_product = 0;
        for (int i = 0; i < d; ++i) {
            eigenvalues_[i] = es.eigenvalues()[i];
            const double mod = std::abs(eigenvalues_[i]);
            if (std::abs(mod - 1.0) <= hyperbolicity_tolerance)
                throw NotHyperbolic("eigenvalue of modulus " + std::to_string(mod) +
                                    " lies on the unit circle");
            if (mod > 1) expansion_rate_ += std::log(mod);
            log_product += std::log(mod);
        }
        if (std::abs(std::expm1(log_product)) > 1e-10)
            throw InvalidArgument("eigenvalue moduli do not multiply to one");
        std::sort(eigenvalues_.begin(), eigenvalues_.end(), [](Complex x, Complex y) {
            if (std::abs(x) != std::abs(y)) return std::abs(x) > std::abs(y);
            return x.imag() > y.imag();
        });
    }

    static ToralAutomorphism from_rows(const std::vector<std::vector<long long>>& rows) {
        return ToralAutomorphism(IntMatrix::from_rows(rows));
    }

    // Arnold's cat map [[1,1],[1,2]].
    static ToralAutomorphism cat_map() { return from_rows({{1, 1}, {1, 2}}); }

    int dim() const { return matrix_.dim(); }
    const IntMatrix& matrix() const { return matrix_; }
    Mat matrix_double() const { return matrix_.to_double(); }
    int det_sign() const { return det_sign_; }
    const std::vector<Complex>& eigenvalues() const { return eigenvalues_; }
    // Sum of log|lambda| over eigenvalues outside the unit circle.
    double expansion_rate() const { return expansion_rate_; }
    int unstable_dim() const {
        return static_cast<int>(std::count_if(eigenvalues_.begin(), eigenvalues_.end(),
                                              [](Complex z) { return std::abs(z) > 1; }));
    }

    std::string to_string() const {
        std::ostringstream os;
        os << '[';
        for (int i = 0; i < dim(); ++i) {
            os << (i ? ",[" : "[");
            for (int j = 0; j < dim(); ++j) os << (j ? "," : "") << matrix_(i, j);
            os << ']';
        }
        os << ']';
        return os.str();
    }

private:
    IntMatrix matrix_;
    int det_sign_ = 1;
    std::vector<Complex> eigenvalues_;
    double expansion_rate_ = 0;
};

// A point of the torus with exact rational coordinates num_i/den in [0,1),
// stored in lowest common terms.
struct RationalPoint {
    std::vector<BigInt> num;
    BigInt den = 1;

    static RationalPoint canonical(std::vector<BigInt> num, BigInt den) {
        for (auto& x : num) x = detail::floor_mod(x, den);
        BigInt g = den;
        for (const auto& x : num) g = gcd(g, x);
        if (g > 1) {
            for (auto& x : num) x /= g;
            den /= g;
        }
        return {std::move(num), std::move(den)};
    }

    Rational coordinate(std::size_t i) const { return Rational(num[i], den); }

    Vec to_vector() const {
        Vec v(static_cast<Eigen::Index>(num.size()));
        for (std::size_t i = 0; i < num.size(); ++i)
            v[static_cast<Eigen::Index>(i)] = static_cast<double>(coordinate(i));
        return v;
    }

    friend bool operator==(const RationalPoint&, const RationalPoint&) = default;

    // Lexicographic order on coordinate values.
    friend bool operator<(const RationalPoint& a, const RationalPoint& b) {
        for (std::size_t i = 0; i < a.num.size(); ++i) {
            BigInt l = a.num[i] * b.den, r = b.num[i] * a.den;
            if (l != r) return l < r;
        }
        return false;
    }
};

struct PrimitiveOrbit {
    int least_period = 0;
    RationalPoint representative;
    std::vector<RationalPoint> points;  // points[0] == representative, then A-images
    std::vector<BigInt> translation;    // A^k x~ = x~ + m on the universal cover
};

struct LinearOrbitDecomposition {
    int p_max = 0;
    std::vector<PrimitiveOrbit> orbits;          // sorted by (least period, representative)
    std::vector<BigInt> primitive_counts;        // N_k, index k-1
    std::vector<BigInt> fixed_point_counts;      // #Fix(A^p), index p-1
};

// |det(A^p - I)|, exact.
inline BigInt count_fixed_points(const ToralAutomorphism& a, int p) {
    if (p < 1) throw InvalidArgument("period must be at least 1");
    BigInt det = abs(a.matrix().pow(p).minus_identity().determinant());
    if (det == 0) throw NotHyperbolic("A^p - I is singular");
    return det;
}

// 1/|det(I - A^p)|; identical at every fixed point of A^p.
inline double linear_orbit_weight(const ToralAutomorphism& a, int p) {
    return 1.0 / static_cast<double>(count_fixed_points(a, p));
}

inline Rational linear_orbit_weight_exact(const ToralAutomorphism& a, int p) {
    return Rational(BigInt(1), count_fixed_points(a, p));
}

namespace detail {

// Solutions of (A^p - I)x in Z^d in a common-denominator form x = num/den,
// together with the indexing data that maps a solution back to its slot.
struct FixedPointLattice {
    SmithDecomposition snf;
    BigInt den;    // largest invariant factor; every solution has denominator dividing it
    BigInt count;  // product of invariant factors

    std::vector<BigInt> point(BigInt index) const {
        const std::size_t d = snf.diagonal.size();
        std::vector<BigInt> y(d);
        for (std::size_t i = 0; i < d; ++i) {
            const BigInt& di = snf.diagonal[i];
            y[i] = (index % di) * (den / di);
            index /= di;
        }
        auto x = snf.V.apply(y);
        for (auto& c : x) c = floor_mod(c, den);
        return x;
    }

    BigInt index_of(const std::vector<BigInt>& num) const {
        auto y = snf.V_inverse.apply(num);
        BigInt index = 0, stride = 1;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const BigInt& di = snf.diagonal[i];
            BigInt mi = floor_mod(y[i] / (den / di), di);
            index += mi * stride;
            stride *= di;
        }
        return index;
    }
};

inline FixedPointLattice fixed_point_lattice(const ToralAutomorphism& a, int p) {
    if (p < 1) throw InvalidArgument("period must be at least 1");
    FixedPointLattice lat{smith_normal_form(a.matrix().pow(p).minus_identity()), 0, 1};
    for (const auto& di : lat.snf.diagonal) {
        if (di == 0) throw NotHyperbolic("Smith form of A^p - I has a zero invariant factor");
        lat.count *= di;
    }
    lat.den = lat.snf.diagonal.back();
    return lat;
}

inline std::vector<BigInt> apply_mod(const IntMatrix& a, const std::vector<BigInt>& v,
                                     const BigInt& den) {
    auto r = a.apply(v);
    for (auto& c : r) c = floor_mod(c, den);
    return r;
}

}  // namespace detail

inline constexpr long long max_enumerated_points = 50'000'000;

// All x in [0,1)^d with A^p x = x mod 1, in Smith-index order.
inline std::vector<RationalPoint> enumerate_fixed_points(const ToralAutomorphism& a, int p) {
    auto lat = detail::fixed_point_lattice(a, p);
    if (lat.count > max_enumerated_points)
        throw InvalidArgument("too many fixed points to enumerate: " + lat.count.str());
    const auto n = static_cast<long long>(lat.count);
    std::vector<RationalPoint> pts;
    pts.reserve(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i)
        pts.push_back(RationalPoint::canonical(lat.point(i), lat.den));
    return pts;
}

// N_k for k <= p_max by Moebius inversion of the counts; no enumeration.
inline std::vector<BigInt> primitive_orbit_counts(const ToralAutomorphism& a, int p_max) {
    std::vector<BigInt> fix(static_cast<std::size_t>(p_max)), n(static_cast<std::size_t>(p_max));
    for (int p = 1; p <= p_max; ++p) fix[p - 1] = count_fixed_points(a, p);
    for (int p = 1; p <= p_max; ++p) {
        BigInt rest = fix[p - 1];
        for (int k = 1; k < p; ++k)
            if (p % k == 0) rest -= BigInt(k) * n[k - 1];
        if (rest % p != 0) throw std::logic_error("orbit census is not divisible");
        n[p - 1] = rest / p;
    }
    return n;
}

inline LinearOrbitDecomposition decompose_orbits(const ToralAutomorphism& a, int p_max) {
    if (p_max < 1) throw InvalidArgument("p_max must be at least 1");
    LinearOrbitDecomposition out;
    out.p_max = p_max;
    out.primitive_counts.assign(static_cast<std::size_t>(p_max), 0);
    for (int p = 1; p <= p_max; ++p) {
        auto lat = detail::fixed_point_lattice(a, p);
        out.fixed_point_counts.push_back(lat.count);
        if (lat.count > max_enumerated_points)
            throw InvalidArgument("too many fixed points to enumerate at period " +
                                  std::to_string(p));
        const auto n = static_cast<std::size_t>(lat.count);
        std::vector<bool> seen(n, false);
        std::vector<PrimitiveOrbit> level;
        for (std::size_t i = 0; i < n; ++i) {
            if (seen[i]) continue;
            std::vector<std::vector<BigInt>> cycle{lat.point(i)};
            seen[i] = true;
            while (true) {
                auto next = detail::apply_mod(a.matrix(), cycle.back(), lat.den);
                if (next == cycle.front()) break;
                seen[static_cast<std::size_t>(lat.index_of(next))] = true;
                cycle.push_back(std::move(next));
            }
            if (static_cast<int>(cycle.size()) != p) continue;  // counted at its least period
            PrimitiveOrbit orbit;
            orbit.least_period = p;
            for (auto& c : cycle) orbit.points.push_back(RationalPoint::canonical(c, lat.den));
            auto first = std::min_element(orbit.points.begin(), orbit.points.end());
            std::rotate(orbit.points.begin(), first, orbit.points.end());
            orbit.representative = orbit.points.front();
            // m = (A^p - I) x~ for the representative in [0,1)^d.
            const auto& rep = orbit.representative;
            auto image = a.matrix().pow(p).minus_identity().apply(rep.num);
            for (auto& c : image) c /= rep.den;
            orbit.translation = std::move(image);
            level.push_back(std::move(orbit));
        }
        std::sort(level.begin(), level.end(), [](const PrimitiveOrbit& x, const PrimitiveOrbit& y) {
            return x.representative < y.representative;
        });
        out.primitive_counts[p - 1] = static_cast<long long>(level.size());
        for (auto& o : level) out.orbits.push_back(std::move(o));
    }
    return out;
}

}  // namespace anosov
