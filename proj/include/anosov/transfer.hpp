#pragma once

// Fourier truncation of the composition operator T f = f o F on the torus.
// Basis e_k(x) = exp(2 pi i k.x), ||k||_inf <= K; column k' holds the Fourier
// coefficients of e_{k'} o F.

#include "anosov/perturbed_maps.hpp"

#include <fftw3.h>
#include <lapacke.h>

#include <map>
#include <memory>

namespace anosov {

// Flattened index set {k in Z^d : ||k||_inf <= K}, first coordinate most
// significant. Negation k -> -k maps index i to size - 1 - i.
class FourierBox {
public:
    FourierBox() = default;
    FourierBox(int d, int K) : d_(d), K_(K), side_(2 * K + 1) {
        size_ = 1;
        for (int i = 0; i < d; ++i) size_ *= static_cast<std::size_t>(side_);
    }
    int dim() const { return d_; }
    int K() const { return K_; }
    std::size_t size() const { return size_; }
    std::size_t center() const { return (size_ - 1) / 2; }

    std::vector<int> mode(std::size_t idx) const {
        std::vector<int> k(static_cast<std::size_t>(d_));
        for (int i = d_ - 1; i >= 0; --i) {
            k[static_cast<std::size_t>(i)] = static_cast<int>(idx % static_cast<std::size_t>(side_)) - K_;
            idx /= static_cast<std::size_t>(side_);
        }
        return k;
    }
    bool contains(const std::vector<long long>& k) const {
        for (auto c : k)
            if (c < -K_ || c > K_) return false;
        return true;
    }
    std::size_t index(const std::vector<long long>& k) const {
        std::size_t idx = 0;
        for (auto c : k) idx = idx * static_cast<std::size_t>(side_) + static_cast<std::size_t>(c + K_);
        return idx;
    }

private:
    int d_ = 0;
    int K_ = 0;
    int side_ = 1;
    std::size_t size_ = 1;
};

struct TransferMatrix {
    PerturbedMap system;
    int K = 0;
    FourierBox box;
    CMat entries;      // M(k, k') = integral of exp(2 pi i (k'.F(x) - k.x)) dx
    int grid_size = 0; // largest FFT grid used (0 when the exact Kronecker form was emitted)

    std::size_t dimension() const { return box.size(); }
};

inline constexpr std::size_t transfer_max_dimension = 6000;
inline constexpr double transfer_quadrature_tolerance = 1e-12;
inline constexpr int transfer_max_grid = 1 << 14;

namespace detail {

// FFTW plans are created once per grid size; execution with fresh
// fftw_malloc'd buffers is thread safe.
class FftPlans {
public:
    fftw_plan get(int d, int n) {
        std::lock_guard<std::mutex> lock(mu_);
        auto key = std::pair{d, n};
        auto it = plans_.find(key);
        if (it != plans_.end()) return it->second;
        std::vector<int> dims(static_cast<std::size_t>(d), n);
        std::size_t total = 1;
        for (int i = 0; i < d; ++i) total *= static_cast<std::size_t>(n);
        fftw_complex* buf = fftw_alloc_complex(total);
        fftw_plan p = fftw_plan_dft(d, dims.data(), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
        fftw_free(buf);
        plans_[key] = p;
        return p;
    }
    ~FftPlans() {
        for (auto& [k, p] : plans_) fftw_destroy_plan(p);
    }

private:
    std::mutex mu_;
    std::map<std::pair<int, int>, fftw_plan> plans_;
};

inline FftPlans& fft_plans() {
    static FftPlans plans;
    return plans;
}

struct FftBuffer {
    explicit FftBuffer(std::size_t n) : data(fftw_alloc_complex(n)), size(n) {}
    ~FftBuffer() { fftw_free(data); }
    FftBuffer(const FftBuffer&) = delete;
    FftBuffer& operator=(const FftBuffer&) = delete;
    fftw_complex* data;
    std::size_t size;
};

// Psi sampled on the n^d grid x = idx/n, row major, d values per point.
inline std::vector<double> psi_samples(const PerturbedMap& f, int n) {
    const int d = f.dim();
    std::size_t total = 1;
    for (int i = 0; i < d; ++i) total *= static_cast<std::size_t>(n);
    std::vector<double> out(total * static_cast<std::size_t>(d));
    Vec x(d);
    for (std::size_t s = 0; s < total; ++s) {
        std::size_t r = s;
        for (int i = d - 1; i >= 0; --i) {
            x[i] = static_cast<double>(r % static_cast<std::size_t>(n)) / n;
            r /= static_cast<std::size_t>(n);
        }
        Vec psi = f.psi_at(x);
        for (int i = 0; i < d; ++i) out[s * static_cast<std::size_t>(d) + static_cast<std::size_t>(i)] = psi[i];
    }
    return out;
}

class PsiGridCache {
public:
    explicit PsiGridCache(const PerturbedMap& f) : f_(f) {}
    std::shared_ptr<const std::vector<double>> get(int n) {
        std::lock_guard<std::mutex> lock(mu_);
        auto& slot = grids_[n];
        if (!slot) slot = std::make_shared<const std::vector<double>>(psi_samples(f_, n));
        return slot;
    }

private:
    const PerturbedMap& f_;
    std::mutex mu_;
    std::map<int, std::shared_ptr<const std::vector<double>>> grids_;
};

// Fourier coefficients of exp(2 pi i eps k'.Psi(x)) at the modes m = k - A^T k',
// k in the box, from an n^d sample grid. Modes outside the resolvable band
// |m_i| < n/2 are returned as zero.
inline std::vector<Complex> column_coefficients(const PerturbedMap& f, const FourierBox& box,
                                                const std::vector<long long>& atk, const std::vector<int>& kp,
                                                int n, const std::vector<double>& psi) {
    const int d = f.dim();
    const std::size_t total = psi.size() / static_cast<std::size_t>(d);
    FftBuffer buf(total);
    const double scale_phase = two_pi * f.epsilon();
    for (std::size_t s = 0; s < total; ++s) {
        double ph = 0;
        for (int i = 0; i < d; ++i)
            ph += kp[static_cast<std::size_t>(i)] * psi[s * static_cast<std::size_t>(d) + static_cast<std::size_t>(i)];
        ph *= scale_phase;
        buf.data[s][0] = std::cos(ph);
        buf.data[s][1] = std::sin(ph);
    }
    fftw_execute_dft(fft_plans().get(d, n), buf.data, buf.data);
    const double scale = 1.0 / static_cast<double>(total);
    std::vector<Complex> out(box.size(), Complex(0, 0));
    for (std::size_t row = 0; row < box.size(); ++row) {
        auto k = box.mode(row);
        std::size_t pos = 0;
        bool inside = true;
        for (int i = 0; i < d; ++i) {
            long long m = k[static_cast<std::size_t>(i)] - atk[static_cast<std::size_t>(i)];
            if (2 * std::llabs(m) >= n) {
                inside = false;
                break;
            }
            pos = pos * static_cast<std::size_t>(n) + static_cast<std::size_t>((m + n) % n);
        }
        if (inside) out[row] = Complex(buf.data[pos][0], buf.data[pos][1]) * scale;
    }
    return out;
}

inline std::vector<long long> transpose_apply(const ToralAutomorphism& a, const std::vector<int>& k) {
    std::vector<long long> out(k.size(), 0);
    const auto& m = a.matrix();
    for (std::size_t i = 0; i < k.size(); ++i)
        for (std::size_t j = 0; j < k.size(); ++j)
            out[i] += static_cast<long long>(m(static_cast<int>(j), static_cast<int>(i))) * k[j];
    return out;
}

}  // namespace detail

inline TransferMatrix assemble(const PerturbedMap& f, int K) {
    if (K < 1) throw InvalidArgument("truncation K must be at least 1");
    FourierBox box(f.dim(), K);
    if (box.size() > transfer_max_dimension)
        throw InvalidArgument("(2K+1)^d = " + std::to_string(box.size()) + " exceeds the dense limit 6000");
    TransferMatrix t{f, K, box, CMat::Zero(static_cast<Eigen::Index>(box.size()), static_cast<Eigen::Index>(box.size())), 0};
    const std::size_t n = box.size();

    if (f.is_linear()) {
        for (std::size_t col = 0; col < n; ++col) {
            auto atk = detail::transpose_apply(f.base(), box.mode(col));
            if (box.contains(atk)) t.entries(static_cast<Eigen::Index>(box.index(atk)), static_cast<Eigen::Index>(col)) = 1;
        }
        return t;
    }

    std::vector<int> grids(n, 0);
    detail::PsiGridCache psi(f);
    parallel::for_each_index(n, [&](std::size_t col) {
        auto kp = box.mode(col);
        auto atk = detail::transpose_apply(f.base(), kp);
        int grid = 16;
        auto prev = detail::column_coefficients(f, box, atk, kp, grid, *psi.get(grid));
        for (;;) {
            const int next = 2 * grid;
            std::size_t samples = 1;
            for (int i = 0; i < f.dim(); ++i) samples *= static_cast<std::size_t>(next);
            if (next > transfer_max_grid || samples > (std::size_t{1} << 26))
                throw QuadratureNonconvergence("transfer column did not converge below grid " + std::to_string(grid));
            auto cur = detail::column_coefficients(f, box, atk, kp, next, *psi.get(next));
            double change = 0;
            for (std::size_t r = 0; r < n; ++r) change = std::max(change, std::abs(cur[r] - prev[r]));
            prev = std::move(cur);
            grid = next;
            if (change < transfer_quadrature_tolerance) break;
        }
        for (std::size_t r = 0; r < n; ++r)
            t.entries(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = prev[r];
        grids[col] = grid;
    });
    t.grid_size = *std::max_element(grids.begin(), grids.end());
    return t;
}

// tr(M^p) for p = 1..p_max. Powers up to ceil(p_max/2) are formed and the rest
// follow from tr(M^(a+b)) = sum_ij (M^a)_ij (M^b)_ji.
inline std::vector<Complex> truncated_traces(const TransferMatrix& m, int p_max) {
    if (p_max < 1) throw InvalidArgument("p_max must be at least 1");
    const int half = (p_max + 1) / 2;
    std::vector<CMat> pw;
    pw.push_back(m.entries);
    for (int a = 2; a <= half; ++a) pw.push_back(pw.back() * m.entries);
    std::vector<Complex> tr;
    for (int p = 1; p <= p_max; ++p) {
        if (p <= half) {
            tr.push_back(pw[static_cast<std::size_t>(p - 1)].trace());
        } else {
            const auto& a = pw[static_cast<std::size_t>(half - 1)];
            const auto& b = pw[static_cast<std::size_t>(p - half - 1)];
            tr.push_back((a.array() * b.transpose().array()).sum());
        }
    }
    return tr;
}

// Real matrix unitarily similar to M in the basis e_0, (e_k + e_-k)/sqrt 2,
// i(e_k - e_-k)/sqrt 2. F is real, so conj M(k,k') = M(-k,-k') and the result
// is real.
inline Mat real_form(const TransferMatrix& m) {
    const auto n = static_cast<Eigen::Index>(m.dimension());
    const Eigen::Index c = (n - 1) / 2;
    const double s = 1 / std::sqrt(2.0);
    const Complex I(0, 1);
    CMat y(n, n);
    for (Eigen::Index i = 0; i < c; ++i) {
        const Eigen::Index j = n - 1 - i;
        y.col(2 * i) = (m.entries.col(i) + m.entries.col(j)) * s;
        y.col(2 * i + 1) = (m.entries.col(i) - m.entries.col(j)) * (I * s);
    }
    y.col(n - 1) = m.entries.col(c);
    Mat r(n, n);
    for (Eigen::Index i = 0; i < c; ++i) {
        const Eigen::Index j = n - 1 - i;
        r.row(2 * i) = ((y.row(i) + y.row(j)) * s).real();
        r.row(2 * i + 1) = ((y.row(i) - y.row(j)) * (-I * s)).real();
    }
    r.row(n - 1) = y.row(c).real();
    return r;
}

// All eigenvalues of the truncated operator (dense real Hessenberg QR).
inline std::vector<Complex> truncated_eigenvalues(const TransferMatrix& m) {
    Mat r = real_form(m);
    const auto n = static_cast<lapack_int>(r.rows());
    std::vector<double> wr(static_cast<std::size_t>(n)), wi(static_cast<std::size_t>(n));
    lapack_int info = LAPACKE_dgeev(LAPACK_COL_MAJOR, 'N', 'N', n, r.data(), n, wr.data(), wi.data(), nullptr,
                                    1, nullptr, 1);
    if (info != 0) throw Error("EigensolverFailure", "dgeev returned " + std::to_string(info));
    std::vector<Complex> ev(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < ev.size(); ++i) ev[i] = Complex(wr[i], wi[i]);
    return ev;
}

inline constexpr double resonance_match_radius = 1e-6;
inline constexpr double default_mu_min = 0.05;
inline constexpr int discarded_power_sum_terms = 16;

struct MapResonances {
    std::vector<Complex> mu;                // mu[0] = 1, then decreasing modulus
    std::vector<Complex> lambda;            // i Log mu, Re in (-pi, pi]
    std::vector<double> stability_radius;   // distance to the matching eigenvalue at K + 4
    int K = 0;
    double mu_min = default_mu_min;
    double mu0_error = 0;                   // |computed eigenvalue nearest 1 - 1|
    std::vector<double> discarded_power_sums; // sum of |mu|^p over rejected eigenvalues, p = 1..16
    double decay_constant = 0;              // min over k >= 1 of -Im(lambda_k) / k^(1/d)
    std::vector<std::string> diagnostics;

    double discarded_bound(int p) const {
        if (discarded_power_sums.empty()) return 0;
        if (p <= static_cast<int>(discarded_power_sums.size()))
            return discarded_power_sums[static_cast<std::size_t>(p - 1)];
        return discarded_power_sums.back();
    }
    Complex power_sum(int p) const {
        Complex s = 0;
        for (Complex z : mu) s += std::pow(z, p);
        return s;
    }
};

inline Complex map_lambda(Complex mu) {
    if (mu == Complex(1, 0)) return 0;
    double re = -std::arg(mu);
    if (re <= -std::numbers::pi) re = std::numbers::pi;
    return {re, std::log(std::abs(mu))};
}

namespace detail {

inline bool resonance_order(Complex a, Complex b) {
    if (std::abs(a) != std::abs(b)) return std::abs(a) > std::abs(b);
    if (a.imag() != b.imag()) return a.imag() > b.imag();
    return a.real() > b.real();
}

inline std::size_t nearest_index(const std::vector<Complex>& v, Complex z) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (std::abs(v[i] - z) < std::abs(v[best] - z)) best = i;
    return best;
}

inline MapResonances filter_resonances(std::vector<Complex> small, std::vector<Complex> large, int K, int d,
                                       double mu_min, double epsilon) {
    MapResonances r;
    r.K = K;
    r.mu_min = mu_min;
    r.mu = {Complex(1, 0)};
    r.lambda = {Complex(0, 0)};
    const std::size_t one = nearest_index(small, Complex(1, 0));
    r.mu0_error = std::abs(small[one] - 1.0);
    const std::size_t one_large = nearest_index(large, Complex(1, 0));
    r.stability_radius = {std::abs(small[one] - large[one_large])};
    small.erase(small.begin() + static_cast<std::ptrdiff_t>(one));
    large.erase(large.begin() + static_cast<std::ptrdiff_t>(one_large));

    std::sort(small.begin(), small.end(), resonance_order);
    std::vector<std::pair<Complex, double>> accepted;
    r.discarded_power_sums.assign(discarded_power_sum_terms, 0.0);
    for (Complex z : small) {
        bool ok = false;
        double dist = 0;
        if (std::abs(z) >= mu_min && !large.empty()) {
            dist = std::abs(large[nearest_index(large, z)] - z);
            ok = dist < resonance_match_radius;
        }
        if (ok) {
            accepted.push_back({z, dist});
        } else {
            double a = std::abs(z), ap = a;
            for (int p = 0; p < discarded_power_sum_terms; ++p, ap *= a)
                r.discarded_power_sums[static_cast<std::size_t>(p)] += ap;
        }
    }
    std::stable_sort(accepted.begin(), accepted.end(),
                     [](const auto& x, const auto& y) { return resonance_order(x.first, y.first); });
    double cmin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < accepted.size(); ++i) {
        r.mu.push_back(accepted[i].first);
        r.lambda.push_back(map_lambda(accepted[i].first));
        r.stability_radius.push_back(accepted[i].second);
        const double k = static_cast<double>(i + 1);
        cmin = std::min(cmin, -r.lambda.back().imag() / std::pow(k, 1.0 / d));
    }
    r.decay_constant = accepted.empty() ? 0.0 : cmin;
    if (accepted.empty() && epsilon > 0 && mu_min < 0.5) r.diagnostics.push_back("NoStableEigenvalues");
    return r;
}

}  // namespace detail

// Resonances mu_k of F: eigenvalues of the truncation at K with modulus >=
// mu_min that reappear within 1e-6 at truncation K + 4. For linear maps the
// spectrum is exactly {1} and no eigensolve is run unless dense = true.
inline MapResonances extract_resonances(const PerturbedMap& f, int K, double mu_min = default_mu_min,
                                        bool dense = false) {
    if (!(mu_min > 0 && mu_min < 1)) throw InvalidArgument("mu_min must lie in (0, 1)");
    if (K < 1) throw InvalidArgument("truncation K must be at least 1");
    if (f.is_linear() && !dense) {
        MapResonances r;
        r.K = K;
        r.mu_min = mu_min;
        r.mu = {Complex(1, 0)};
        r.lambda = {Complex(0, 0)};
        r.stability_radius = {0.0};
        r.discarded_power_sums.assign(discarded_power_sum_terms, 0.0);
        return r;
    }
    auto small = truncated_eigenvalues(assemble(f, K));
    auto large = truncated_eigenvalues(assemble(f, K + 4));
    return detail::filter_resonances(std::move(small), std::move(large), K, f.dim(), mu_min, f.epsilon());
}

}  // namespace anosov
