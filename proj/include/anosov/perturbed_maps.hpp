#pragma once

// Analytic perturbations F(x) = Ax + eps*Psi(x) mod 1 of a hyperbolic toral
// automorphism, with Psi a real trigonometric polynomial. Periodic orbits are
// obtained by Newton continuation in eps from the exact orbits of A.

#include "anosov/lattice_maps.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <array>
#include <limits>
#include <optional>

namespace anosov {

// c*cos(2 pi n.x) + s*sin(2 pi n.x), vector valued.
struct TrigTerm {
    std::vector<int> freq;
    std::vector<double> cos_coef;
    std::vector<double> sin_coef;
};

class PerturbedMap {
public:
    PerturbedMap() = default;
    PerturbedMap(ToralAutomorphism base, double epsilon, std::vector<TrigTerm> psi)
        : base_(std::move(base)), epsilon_(epsilon), psi_(std::move(psi)), a_(base_.matrix_double()) {
        if (!(epsilon_ >= 0)) throw InvalidArgument("epsilon must be nonnegative");
        const auto d = static_cast<std::size_t>(base_.dim());
        for (const auto& t : psi_)
            if (t.freq.size() != d || t.cos_coef.size() != d || t.sin_coef.size() != d)
                throw InvalidArgument("perturbation term dimension does not match the torus");
    }

    // The shipped perturbation Psi(x1, x2) = (sin 2 pi x2, 0).
    static PerturbedMap default_perturbation(ToralAutomorphism base, double epsilon = 0.01) {
        if (base.dim() != 2) throw InvalidArgument("default perturbation is defined for d = 2");
        return PerturbedMap(std::move(base), epsilon, {TrigTerm{{0, 1}, {0, 0}, {1, 0}}});
    }

    static PerturbedMap linear(ToralAutomorphism base) { return PerturbedMap(std::move(base), 0, {}); }

    const ToralAutomorphism& base() const { return base_; }
    double epsilon() const { return epsilon_; }
    const std::vector<TrigTerm>& psi() const { return psi_; }
    int dim() const { return base_.dim(); }
    const Mat& linear_part() const { return a_; }
    bool is_linear() const { return epsilon_ == 0 || psi_.empty(); }

    int max_frequency() const {
        int m = 0;
        for (const auto& t : psi_)
            for (int n : t.freq) m = std::max(m, std::abs(n));
        return m;
    }

    // Largest |coefficient| over all terms and components.
    double max_coefficient() const {
        double m = 0;
        for (const auto& t : psi_)
            for (std::size_t i = 0; i < t.cos_coef.size(); ++i)
                m = std::max({m, std::abs(t.cos_coef[i]), std::abs(t.sin_coef[i])});
        return m;
    }

    PerturbedMap with_epsilon(double e) const { return PerturbedMap(base_, e, psi_); }

    Vec psi_at(const Vec& x) const {
        Vec v = Vec::Zero(dim());
        for (const auto& t : psi_) {
            const double th = two_pi * phase(t, x);
            const double c = std::cos(th), s = std::sin(th);
            for (int i = 0; i < dim(); ++i) v[i] += t.cos_coef[i] * c + t.sin_coef[i] * s;
        }
        return v;
    }

    Mat dpsi_at(const Vec& x) const {
        Mat m = Mat::Zero(dim(), dim());
        for (const auto& t : psi_) {
            const double th = two_pi * phase(t, x);
            const double c = std::cos(th), s = std::sin(th);
            for (int i = 0; i < dim(); ++i) {
                const double g = two_pi * (t.sin_coef[i] * c - t.cos_coef[i] * s);
                for (int j = 0; j < dim(); ++j) m(i, j) += g * t.freq[j];
            }
        }
        return m;
    }

    // The lift Ax + eps Psi(x) to R^d.
    Vec lift(const Vec& x) const {
        Vec y = a_ * x;
        if (!is_linear()) y += epsilon_ * psi_at(x);
        return y;
    }

    Mat jacobian(const Vec& x) const {
        if (is_linear()) return a_;
        return a_ + epsilon_ * dpsi_at(x);
    }

    std::string description() const {
        std::ostringstream os;
        os.precision(17);
        os << "A=" << base_.to_string() << " eps=" << epsilon_ << " psi_terms=" << psi_.size();
        return os.str();
    }

private:
    static double phase(const TrigTerm& t, const Vec& x) {
        double p = 0;
        for (std::size_t j = 0; j < t.freq.size(); ++j) p += t.freq[j] * x[static_cast<Eigen::Index>(j)];
        return p;
    }

    ToralAutomorphism base_;
    double epsilon_ = 0;
    std::vector<TrigTerm> psi_;
    Mat a_;
};

inline Vec wrap_unit(Vec x) {
    for (auto& c : x) {
        c -= std::floor(c);
        if (c >= 1.0) c = 0.0;
    }
    return x;
}

struct MapImage {
    Vec image;
    Mat jacobian;
};

// Image mod 1 and the analytic Jacobian A + eps DPsi(x).
inline MapImage evaluate(const PerturbedMap& f, const Vec& x) {
    return {wrap_unit(f.lift(x)), f.jacobian(x)};
}

// --- perturbation file ------------------------------------------------------

inline PerturbedMap perturbation_from_json(const nlohmann::json& j) {
    std::vector<std::vector<long long>> rows = j.at("matrix").get<std::vector<std::vector<long long>>>();
    auto base = ToralAutomorphism::from_rows(rows);
    double eps = j.value("epsilon", 0.0);
    std::vector<TrigTerm> terms;
    for (const auto& t : j.value("psi", nlohmann::json::array())) {
        TrigTerm term;
        term.freq = t.at("freq").get<std::vector<int>>();
        const auto d = term.freq.size();
        term.cos_coef = t.value("cos", std::vector<double>(d, 0.0));
        term.sin_coef = t.value("sin", std::vector<double>(d, 0.0));
        terms.push_back(std::move(term));
    }
    return PerturbedMap(std::move(base), eps, std::move(terms));
}

inline nlohmann::json perturbation_to_json(const PerturbedMap& f) {
    nlohmann::json j;
    std::vector<std::vector<long long>> rows(static_cast<std::size_t>(f.dim()));
    for (int i = 0; i < f.dim(); ++i)
        for (int k = 0; k < f.dim(); ++k)
            rows[i].push_back(static_cast<long long>(f.base().matrix()(i, k)));
    j["matrix"] = rows;
    j["epsilon"] = f.epsilon();
    j["psi"] = nlohmann::json::array();
    for (const auto& t : f.psi())
        j["psi"].push_back({{"freq", t.freq}, {"cos", t.cos_coef}, {"sin", t.sin_coef}});
    return j;
}

inline PerturbedMap load_perturbation(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open perturbation file " + path);
    return perturbation_from_json(nlohmann::json::parse(in));
}

// --- orbit tables -------------------------------------------------------------

// One primitive orbit, or for aggregated linear tables a class of `multiplicity`
// primitive orbits sharing least period and Jacobian data.
struct OrbitRecord {
    int least_period = 0;
    double multiplicity = 1;
    std::vector<Vec> points;
    Vec representative;
    std::vector<long long> translation;
    Mat jacobian_product;               // D_x F^k at the representative
    std::vector<Complex> multipliers;   // eigenvalues of jacobian_product
    double weight = 0;                  // 1/|det(I - D_x F^k)|
    double unstable_log = 0;            // log|det D_x F^k restricted to E_u|

    // 1/|det(I - (D_x F^k)^n)| from the multipliers.
    double iterate_weight(int n) const {
        if (n == 1 && weight > 0) return weight;
        double det = 1;
        for (Complex z : multipliers) det *= std::abs(1.0 - std::pow(z, n));
        return 1.0 / det;
    }
};

struct PeriodAggregate {
    int p = 0;
    double fixed_point_count = 0;
    double trace_sum = 0;  // sum over Fix(F^p) of 1/|det(I - D_x F^p)|
};

struct OrbitTable {
    std::string system;
    int p_max = 0;
    bool aggregated = false;
    std::vector<OrbitRecord> orbits;
    std::vector<PeriodAggregate> periods;

    const PeriodAggregate& period(int p) const {
        if (p < 1 || p > p_max) throw InvalidArgument("period outside the table");
        return periods[static_cast<std::size_t>(p - 1)];
    }
};

inline std::vector<Complex> sorted_eigenvalues(const Mat& m) {
    Eigen::EigenSolver<Mat> es(m, false);
    std::vector<Complex> ev(es.eigenvalues().begin(), es.eigenvalues().end());
    std::sort(ev.begin(), ev.end(), [](Complex x, Complex y) {
        if (std::abs(x) != std::abs(y)) return std::abs(x) > std::abs(y);
        return x.imag() > y.imag();
    });
    return ev;
}

inline double unstable_log_of(const std::vector<Complex>& multipliers) {
    double s = 0;
    for (Complex z : multipliers)
        if (std::abs(z) > 1) s += std::log(std::abs(z));
    return s;
}

inline void fill_period_aggregates(OrbitTable& t) {
    t.periods.clear();
    for (int p = 1; p <= t.p_max; ++p) {
        CompensatedSum<double> count, trace;
        for (const auto& o : t.orbits) {
            if (p % o.least_period != 0) continue;
            count.add(o.multiplicity * o.least_period);
            trace.add(o.multiplicity * o.least_period * o.iterate_weight(p / o.least_period));
        }
        t.periods.push_back({p, count.value(), trace.value()});
    }
}

namespace detail {

inline OrbitRecord linear_record(const ToralAutomorphism& a, int k, double multiplicity) {
    OrbitRecord r;
    r.least_period = k;
    r.multiplicity = multiplicity;
    r.jacobian_product = a.matrix().pow(k).to_double();
    for (Complex z : a.eigenvalues()) r.multipliers.push_back(std::pow(z, k));
    r.weight = 1.0 / static_cast<double>(count_fixed_points(a, k));
    r.unstable_log = k * a.expansion_rate();
    return r;
}

}  // namespace detail

// Orbit table of the linear map. With enumerate = true every primitive orbit is
// listed with its exact points; otherwise one record per least period carries the
// orbit count as multiplicity, which keeps p_max ~ 40 cheap.
inline OrbitTable linear_orbit_table(const ToralAutomorphism& a, int p_max, bool enumerate = true) {
    if (p_max < 1) throw InvalidArgument("p_max must be at least 1");
    OrbitTable t;
    t.system = "A=" + a.to_string() + " eps=0";
    t.p_max = p_max;
    t.aggregated = !enumerate;
    if (enumerate) {
        auto dec = decompose_orbits(a, p_max);
        std::vector<OrbitRecord> cache;
        for (int k = 1; k <= p_max; ++k) cache.push_back(detail::linear_record(a, k, 1));
        for (const auto& o : dec.orbits) {
            OrbitRecord r = cache[static_cast<std::size_t>(o.least_period - 1)];
            for (const auto& pt : o.points) r.points.push_back(pt.to_vector());
            r.representative = r.points.front();
            for (const auto& m : o.translation) r.translation.push_back(static_cast<long long>(m));
            t.orbits.push_back(std::move(r));
        }
    } else {
        auto counts = primitive_orbit_counts(a, p_max);
        for (int k = 1; k <= p_max; ++k)
            t.orbits.push_back(detail::linear_record(a, k, static_cast<double>(counts[k - 1])));
    }
    fill_period_aggregates(t);
    return t;
}

// --- Newton continuation --------------------------------------------------------

inline constexpr double newton_tolerance = 1e-12;
inline constexpr int newton_max_iterations = 50;
inline constexpr int continuation_max_halvings = 3;
inline constexpr double orbit_hyperbolicity_tolerance = 1e-6;

namespace detail {

// Multiple-shooting form of the periodicity equation on the cover:
//   R_i = F~(z_i) - z_{i+1} - c_i = 0,  i = 0..k-1, z_k = z_0,
// with integer offsets c_i inherited from the linear orbit.
struct ShootingOrbit {
    std::vector<Vec> z;
    std::vector<Vec> offsets;

    std::size_t length() const { return z.size(); }

    double residual(const PerturbedMap& f) const {
        double r = 0;
        const std::size_t k = length();
        for (std::size_t i = 0; i < k; ++i)
            r = std::max(r, (f.lift(z[i]) - z[(i + 1) % k] - offsets[i]).cwiseAbs().maxCoeff());
        return r;
    }

    bool newton(const PerturbedMap& f) {
        const std::size_t k = length();
        const int d = f.dim();
        const auto n = static_cast<Eigen::Index>(k) * d;
        for (int it = 0; it <= newton_max_iterations; ++it) {
            Vec rhs(n);
            Mat jac = Mat::Zero(n, n);
            double res = 0;
            for (std::size_t i = 0; i < k; ++i) {
                const auto row = static_cast<Eigen::Index>(i) * d;
                const auto next = static_cast<Eigen::Index>((i + 1) % k) * d;
                Vec r = f.lift(z[i]) - z[(i + 1) % k] - offsets[i];
                res = std::max(res, r.cwiseAbs().maxCoeff());
                rhs.segment(row, d) = -r;
                jac.block(row, row, d, d) += f.jacobian(z[i]);
                jac.block(row, next, d, d) -= Mat::Identity(d, d);
            }
            if (!std::isfinite(res)) return false;
            if (res <= newton_tolerance) return true;
            if (it == newton_max_iterations) break;
            Eigen::FullPivLU<Mat> lu(jac);
            if (!lu.isInvertible()) return false;
            Vec step = lu.solve(rhs);
            for (std::size_t i = 0; i < k; ++i)
                z[i] += step.segment(static_cast<Eigen::Index>(i) * d, d);
        }
        return false;
    }

    // Move every z_i into [0,1)^d and compensate the offsets.
    void wrap(const PerturbedMap& f, std::vector<Vec>* companion = nullptr) {
        const std::size_t k = length();
        std::vector<Vec> shift(k);
        for (std::size_t i = 0; i < k; ++i) {
            shift[i] = z[i].array().floor().matrix();
            z[i] -= shift[i];
            if (companion) (*companion)[i] -= shift[i];
        }
        for (std::size_t i = 0; i < k; ++i)
            offsets[i] += shift[(i + 1) % k] - f.linear_part() * shift[i];
    }
};

inline OrbitRecord continue_one(const PerturbedMap& target, const OrbitRecord& seed, int steps) {
    const int k = seed.least_period;
    const Mat& a = target.linear_part();
    ShootingOrbit orb;
    orb.z = seed.points;
    for (int i = 0; i < k; ++i) {
        Vec c = a * seed.points[i] - seed.points[(i + 1) % k];
        orb.offsets.push_back(c.array().round().matrix());
    }

    const double eps_target = target.epsilon();
    double eps = 0, h = eps_target / steps;
    int halvings = 0;
    std::vector<Vec> prev = orb.z;
    double prev_eps = 0;
    bool have_prev = false;
    while (eps < eps_target) {
        const double next = std::min(eps_target, eps + h);
        ShootingOrbit trial = orb;
        if (have_prev && eps > prev_eps) {
            const double s = (next - eps) / (eps - prev_eps);
            for (int i = 0; i < k; ++i) trial.z[i] += s * (orb.z[i] - prev[i]);
        }
        if (trial.newton(target.with_epsilon(next))) {
            prev = orb.z;
            prev_eps = eps;
            have_prev = true;
            orb = std::move(trial);
            orb.wrap(target, &prev);
            eps = next;
        } else {
            if (++halvings > continuation_max_halvings) throw NewtonDivergence(k, eps);
            h /= 2;
        }
    }

    OrbitRecord r;
    r.least_period = k;
    r.multiplicity = 1;
    r.points = orb.z;
    for (auto& p : r.points) p = wrap_unit(p);
    r.representative = r.points.front();
    Mat prod = Mat::Identity(target.dim(), target.dim());
    for (int i = 0; i < k; ++i) prod = target.jacobian(r.points[i]) * prod;
    r.jacobian_product = prod;
    r.multipliers = sorted_eigenvalues(prod);
    for (Complex z : r.multipliers)
        if (std::abs(std::abs(z) - 1.0) < orbit_hyperbolicity_tolerance) throw HyperbolicityLoss(k);
    r.weight = r.iterate_weight(1);
    r.unstable_log = unstable_log_of(r.multipliers);
    Vec x = r.representative;
    for (int i = 0; i < k; ++i) x = target.lift(x);
    Vec m = (x - r.representative).array().round().matrix();
    for (auto c : m) r.translation.push_back(static_cast<long long>(c));
    return r;
}

}  // namespace detail

// Periodic orbits of F with least period <= p_max. Each linear orbit is continued
// separately; output order follows the linear orbits (least period, then
// lexicographic representative), independent of the parallel schedule.
inline OrbitTable continue_orbits(const PerturbedMap& f, int p_max, int steps = 10) {
    if (steps < 1) throw InvalidArgument("continuation needs at least one step");
    OrbitTable linear = linear_orbit_table(f.base(), p_max, true);
    if (f.is_linear()) {
        linear.system = f.description();
        return linear;
    }
    OrbitTable t;
    t.system = f.description();
    t.p_max = p_max;
    t.orbits.resize(linear.orbits.size());
    parallel::for_each_index(linear.orbits.size(), [&](std::size_t i) {
        t.orbits[i] = detail::continue_one(f, linear.orbits[i], steps);
    });
    fill_period_aggregates(t);
    return t;
}

// --- cone condition ---------------------------------------------------------------

struct ConeReport {
    double min_expansion = 0;   // smallest one-step factor over the pushed unstable cones
    double max_expansion = 0;   // largest one-step factor over the pushed unstable cones
    double min_contraction = 0; // weakest contraction: largest one-step factor over stable cones
    double max_contraction = 0; // strongest contraction: smallest factor over stable cones
    bool pass = false;
};

namespace detail {

inline double line_angle(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    double c = std::abs(a.dot(b)) / (a.norm() * b.norm());
    return std::acos(std::min(1.0, c));
}

// Range of |M v|/|v| over the sector spanned by u and w (the short arc).
inline std::pair<double, double> sector_gain(const Eigen::Matrix2d& m, const Eigen::Vector2d& u,
                                             const Eigen::Vector2d& w) {
    double t0 = std::atan2(u.y(), u.x());
    double t1 = std::atan2(w.y(), w.x());
    double delta = std::remainder(t1 - t0, std::numbers::pi);
    Eigen::Matrix2d g = m.transpose() * m;
    auto gain = [&](double th) {
        Eigen::Vector2d v(std::cos(th), std::sin(th));
        return std::sqrt(v.dot(g * v));
    };
    double lo = std::min(gain(t0), gain(t0 + delta));
    double hi = std::max(gain(t0), gain(t0 + delta));
    // Stationary directions of the quadratic form.
    double crit = 0.5 * std::atan2(2 * g(0, 1), g(0, 0) - g(1, 1));
    for (int q = -4; q <= 4; ++q) {
        double th = crit + q * std::numbers::pi / 2;
        double rel = th - t0;
        if ((delta >= 0 && rel >= 0 && rel <= delta) || (delta < 0 && rel <= 0 && rel >= delta)) {
            lo = std::min(lo, gain(th));
            hi = std::max(hi, gain(th));
        }
    }
    return {lo, hi};
}

inline Vec inverse_image(const PerturbedMap& f, const Vec& y) {
    Vec x = f.linear_part().fullPivLu().solve(y);
    for (int it = 0; it < newton_max_iterations; ++it) {
        Vec r = f.lift(x) - y;
        if (r.cwiseAbs().maxCoeff() <= 1e-13) return wrap_unit(x);
        Eigen::FullPivLU<Mat> lu(f.jacobian(x));
        if (!lu.isInvertible()) break;
        x -= lu.solve(r);
        if (!x.allFinite()) break;
    }
    throw ConeEscape("inverse map did not converge; perturbation outside the Anosov regime");
}

}  // namespace detail

// Pushes the linear map's unstable (stable) cones forward (backward) along the
// orbits of a grid x grid lattice of points and measures the one-step expansion
// (contraction) on the final cones.
inline ConeReport cone_check(const PerturbedMap& f, int grid, int iterations) {
    if (f.dim() != 2) throw InvalidArgument("cone check is implemented for d = 2");
    if (grid < 1 || iterations < 1) throw InvalidArgument("grid and iterations must be positive");
    using V2 = Eigen::Vector2d;
    using M2 = Eigen::Matrix2d;
    Eigen::EigenSolver<Mat> es(f.linear_part());
    V2 eu, es_dir;
    for (int i = 0; i < 2; ++i) {
        V2 v = es.eigenvectors().col(i).real();
        if (std::abs(es.eigenvalues()[i]) > 1) eu = v.normalized();
        else es_dir = v.normalized();
    }
    const double half_angle = 0.4 * detail::line_angle(eu, es_dir);
    auto rotate = [](const V2& v, double a) {
        return V2(std::cos(a) * v.x() - std::sin(a) * v.y(), std::sin(a) * v.x() + std::cos(a) * v.y());
    };

    const auto n = static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid);
    std::vector<std::array<double, 4>> gains(n);
    parallel::for_each_index(n, [&](std::size_t idx) {
        Vec x0(2);
        x0 << static_cast<double>(idx / grid) / grid, static_cast<double>(idx % grid) / grid;

        // Unstable cone, forward.
        V2 b1 = rotate(eu, half_angle), b2 = rotate(eu, -half_angle);
        Vec x = x0;
        for (int it = 0; it < iterations; ++it) {
            M2 m = f.jacobian(x);
            b1 = (m * b1).normalized();
            b2 = (m * b2).normalized();
            x = wrap_unit(f.lift(x));
            if (detail::line_angle(b1, eu) > half_angle || detail::line_angle(b2, eu) > half_angle)
                throw ConeEscape("unstable cone left the seeded family");
        }
        auto [ulo, uhi] = detail::sector_gain(f.jacobian(x), b1, b2);

        // Stable cone, backward.
        V2 s1 = rotate(es_dir, half_angle), s2 = rotate(es_dir, -half_angle);
        x = x0;
        for (int it = 0; it < iterations; ++it) {
            Vec pre = detail::inverse_image(f, x);
            M2 m = f.jacobian(pre);
            Eigen::FullPivLU<M2> lu(m);
            s1 = lu.solve(s1).normalized();
            s2 = lu.solve(s2).normalized();
            x = pre;
            if (detail::line_angle(s1, es_dir) > half_angle || detail::line_angle(s2, es_dir) > half_angle)
                throw ConeEscape("stable cone left the seeded family");
        }
        auto [slo, shi] = detail::sector_gain(f.jacobian(x), s1, s2);
        gains[idx] = {ulo, uhi, slo, shi};
    });

    ConeReport r;
    r.min_expansion = r.max_contraction = std::numeric_limits<double>::infinity();
    r.max_expansion = r.min_contraction = 0;
    for (const auto& g : gains) {
        r.min_expansion = std::min(r.min_expansion, g[0]);
        r.max_expansion = std::max(r.max_expansion, g[1]);
        r.max_contraction = std::min(r.max_contraction, g[2]);
        r.min_contraction = std::max(r.min_contraction, g[3]);
    }
    r.pass = r.min_expansion > 1 + 1e-3 && r.min_contraction < 1 - 1e-3;
    return r;
}

}  // namespace anosov
