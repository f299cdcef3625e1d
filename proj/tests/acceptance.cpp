// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include "anosov/trace_lab.hpp"
#include "anosov/zeta.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

using namespace anosov;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const ToralAutomorphism cat = ToralAutomorphism::cat_map();
const double lambda_plus = (3 + std::sqrt(5.0)) / 2;
const double log_lambda = std::log(lambda_plus);

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void criterion(int n, const std::string& title, const std::function<void(Verdict&)>& body) {
    Verdict v;
    const auto t0 = Clock::now();
    try {
        body(v);
    } catch (const std::exception& e) {
        v.pass = false;
        v.detail << " [exception: " << e.what() << "]";
    }
    std::printf("%s criterion %d: %s (%.1f s)%s\n", v.pass ? "PASS" : "FAIL", n, title.c_str(), seconds_since(t0),
                v.detail.str().c_str());
    std::fflush(stdout);
    if (!v.pass) ++failures;
}

struct Perturbed {
    PerturbedMap f;
    SuspensionFlow flow;
    OrbitTable table;
    MapResonances res;
};

const Perturbed& perturbed() {
    static const Perturbed p = [] {
        auto f = PerturbedMap::default_perturbation(cat, 0.01);
        return Perturbed{f, SuspensionFlow(f, 1), continue_orbits(f, 9), extract_resonances(f, 16, 1e-4)};
    }();
    return p;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(ANOSOV_CLI_PATH) + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main() {
    criterion(1, "fixed-point census p = 1..12", [](Verdict& v) {
        const auto t0 = Clock::now();
        for (int p = 1; p <= 12; ++p) {
            const auto pts = enumerate_fixed_points(cat, p);
            const double closed = std::round(std::pow(lambda_plus, p) + std::pow(lambda_plus, -p) - 2);
            const auto exact = count_fixed_points(cat, p);
            v.require(static_cast<double>(pts.size()) == static_cast<double>(exact),
                      "enumerated count p=" + std::to_string(p));
            v.require(closed == static_cast<double>(exact), "eigenvalue formula p=" + std::to_string(p));
            if (p == 12) v.detail << " #Fix(A^12)=" << pts.size();
        }
        const double t = seconds_since(t0);
        v.detail << " runtime " << t << " s";
        v.require(t < 5, "runtime below 5 s");
    });

    criterion(2, "exact linear trace law p <= 12", [](Verdict& v) {
        for (int p = 1; p <= 12; ++p) {
            const auto pts = enumerate_fixed_points(cat, p);
            const Rational w = linear_orbit_weight_exact(cat, p);
            Rational total = 0;
            for (std::size_t i = 0; i < pts.size(); ++i) total += w;
            v.require(total == 1, "sum of weights p=" + std::to_string(p));
        }
    });

    criterion(3, "transfer-operator bridge eps = 0.01, K = 24", [](Verdict& v) {
        const auto t0 = Clock::now();
        auto f = PerturbedMap::default_perturbation(cat, 0.01);
        const auto table = continue_orbits(f, 3);
        const auto m = assemble(f, 24);
        const auto traces = truncated_traces(m, 3);
        const auto eig = truncated_eigenvalues(m);
        const double tol[] = {1e-6, 1e-4, 1e-4};
        for (int p = 1; p <= 3; ++p) {
            const double gap = std::abs(traces[static_cast<std::size_t>(p - 1)] - table.period(p).trace_sum);
            v.detail << " p=" << p << " |diff|=" << gap;
            v.require(gap <= tol[p - 1], "trace p=" + std::to_string(p));
        }
        Complex s = 0;
        for (Complex z : eig) s += z;
        v.require(std::abs(s - traces[0]) <= 1e-9, "eigenvalue sum equals trace");
        const double t = seconds_since(t0);
        v.detail << " runtime " << t << " s";
        v.require(t < 120, "runtime below 2 min");
    });

    criterion(4, "resonance lattice", [](Verdict& v) {
        auto lin = PerturbedMap::linear(cat);
        const long J = 50;
        const auto lat = resonance_lattice(SuspensionFlow(lin, 1), extract_resonances(lin, 4), J);
        v.require(lat.size() == static_cast<std::size_t>(2 * J + 1), "linear lattice size");
        for (std::size_t i = 0; i < lat.size(); ++i) {
            const Complex expected(two_pi * (static_cast<double>(i) - J), 0);
            v.require(std::abs(lat.entries[i].value - expected) <= 1e-12 && lat.entries[i].value.imag() == 0,
                      "linear entry " + std::to_string(i));
        }
        const auto& p = perturbed();
        const long Jp = 10;
        const auto plat = resonance_lattice(p.flow, p.res, Jp);
        const double edge = two_pi * Jp - std::numbers::pi;
        double im_max = -1e300, asym = 0;
        for (const auto& e : plat.entries) {
            im_max = std::max(im_max, e.value.imag());
            if (std::abs(e.value.real()) > edge - 1e-9) continue;
            double best = 1e300;
            for (const auto& g : plat.entries) best = std::min(best, std::abs(g.value - Complex(-e.value.real(), e.value.imag())));
            asym = std::max(asym, best);
        }
        v.detail << " perturbed: " << p.res.mu.size() << " resonances, max Im " << im_max << ", asymmetry " << asym;
        v.require(im_max <= 1e-8, "Im <= 1e-8");
        v.require(asym <= 1e-6, "conjugation symmetry");
    });

    criterion(5, "global trace formula, five-bump suites and corrupted control", [](Verdict& v) {
        auto lin = PerturbedMap::linear(cat);
        SuspensionFlow lflow(lin, 1);
        const auto ltable = linear_orbit_table(cat, 6, false);
        const auto lres = extract_resonances(lin, 4);
        const auto phis = bump_suite(1, 5, 0.4);
        auto llat = resonance_lattice(lflow, lres, suite_window(phis, lres.lambda, 1));
        double worst = 0;
        for (const auto& r : verify_global_trace(lflow, ltable, llat, phis, 1e-8)) {
            worst = std::max(worst, r.difference);
            v.require(r.difference <= 1e-8, "linear bump d=" + std::to_string(r.phi.center));
        }
        v.detail << " linear max diff " << worst;
        const auto& p = perturbed();
        const auto plat = resonance_lattice(p.flow, p.res, suite_window(phis, p.res.lambda, 1));
        double pworst = 0;
        for (const auto& r : verify_global_trace(p.flow, p.table, plat, phis, 1e-3, 16)) {
            pworst = std::max(pworst, r.difference);
            v.require(r.pass, "perturbed bump d=" + std::to_string(r.phi.center));
        }
        v.detail << "; perturbed max diff " << pworst;
        auto it = std::find_if(llat.entries.begin(), llat.entries.end(),
                               [](const LatticeEntry& e) { return e.k == 0 && e.j == 1; });
        const Complex removed = it->value;
        llat.entries.erase(it);
        double worst_rel = 0;
        for (const auto& r : verify_global_trace(lflow, ltable, llat, phis, 1e-8)) {
            const double expected = std::abs(r.phi.fourier(removed));
            worst_rel = std::max(worst_rel, std::abs(r.difference - expected) / expected);
            v.require(!r.pass, "control must fail");
        }
        v.detail << "; control relative gap " << worst_rel;
        v.require(worst_rel <= 0.1, "control difference within 10%");
    });

    criterion(6, "integer residues", [](Verdict& v) {
        auto lin = PerturbedMap::linear(cat);
        ZetaEvaluator zl(SuspensionFlow(lin, 1), linear_orbit_table(cat, 40, false), extract_resonances(lin, 4));
        const auto& p = perturbed();
        ZetaEvaluator zp(p.flow, p.table, p.res);
        for (const ZetaEvaluator* z : {&zl, &zp}) {
            const char* tag = z == &zl ? "linear" : "perturbed";
            for (double c : {0.0, two_pi}) {
                auto r = z->residue_at(c, 1);
                v.require(std::abs(r.residue - 1.0) <= 1e-6, std::string(tag) + " winding 1");
            }
            auto none = z->residue_at(std::numbers::pi, 1);
            v.require(std::abs(none.residue) <= 1e-8, std::string(tag) + " pole-free winding 0");
            v.detail << " " << tag << " |res(pi)|=" << std::abs(none.residue);
        }
    });

    criterion(7, "pressure estimates", [](Verdict& v) {
        const auto t0 = Clock::now();
        const auto table = linear_orbit_table(cat, 21, false);
        SuspensionFlow flow(PerturbedMap::linear(cat), 1);
        std::vector<double> grid;
        for (int t = 8; t <= 20; ++t) grid.push_back(t);
        const double p2 = pressure_estimate(table, flow, 2, grid).P_hat;
        const double p1 = pressure_estimate(table, flow, 1, grid).P_hat;
        const double p0 = pressure_estimate(table, flow, 0, grid).P_hat;
        v.detail << " P(2psi)=" << p2 << " P(psi)=" << p1 << " P(0)=" << p0;
        v.require(std::abs(p2 + log_lambda) <= 0.05 * log_lambda, "P(2 psi^u) within 5%");
        v.require(std::abs(p1) <= 0.05, "P(psi^u) within 0.05");
        v.require(std::abs(p0 - log_lambda) <= 0.05 * log_lambda, "P(0) within 5%");
        const double t = seconds_since(t0);
        v.require(t < 60, "runtime below 1 min");
    });

    criterion(8, "Gaussian second moment", [](Verdict& v) {
        const auto table = linear_orbit_table(cat, 22, false);
        SuspensionFlow flow(PerturbedMap::linear(cat), 1);
        std::vector<double> grid;
        for (int t = 6; t <= 20; ++t) grid.push_back(t);
        const auto ex = gaussian_average_experiment(table, flow, grid, 0.5);
        for (const auto& r : ex.records) v.require(r.G_value >= r.diag_lower, "G >= diagonal at t=" + std::to_string(r.t));
        v.detail << " diagonal slope " << ex.diag_fit.slope << " vs P(2psi) " << -log_lambda;
        v.require(std::abs(ex.diag_fit.slope + log_lambda) <= 0.1, "slope within 0.1");
    });

    criterion(9, "counting law", [](Verdict& v) {
        auto lin = PerturbedMap::linear(cat);
        SuspensionFlow flow(lin, 1);
        const auto lat = resonance_lattice(flow, extract_resonances(lin, 4), window_for_radius(1e4, 1));
        std::vector<double> radii;
        for (int q = 0; q <= 8; ++q) radii.push_back(std::pow(10.0, 2 + 0.25 * q));
        const auto fit = counting_exponent(lat, radii, 1);
        v.detail << " exponent " << fit.fit.slope;
        v.require(fit.fit.slope >= 0.95 && fit.fit.slope <= 1.05, "exponent in [0.95, 1.05]");
        for (double delta : {0.5, 0.9, 0.99}) {
            bool grows = true;
            for (std::size_t i = 1; i < radii.size(); ++i)
                grows = grows && fit.counts[i] / std::pow(radii[i], delta) >= fit.counts[i - 1] / std::pow(radii[i - 1], delta);
            v.require(grows && fit.fit.slope > delta, "N(R)/R^delta nondecreasing for delta=" + std::to_string(delta));
        }
    });

    criterion(10, "strip constants for the linear suspension", [](Verdict& v) {
        const auto table = linear_orbit_table(cat, 21, false);
        SuspensionFlow flow(PerturbedMap::linear(cat), 1);
        std::vector<double> grid;
        for (int t = 8; t <= 20; ++t) grid.push_back(t);
        const double P_closed = -log_lambda;
        const double P_est = pressure_estimate(table, flow, 2, grid).P_hat;
        const auto closed = strip_constants(flow, table, 0.5, P_closed);
        const auto est = strip_constants(flow, table, 0.5, P_est);
        const double theta = log_lambda;
        const double ref[] = {theta, 8 * theta, 15 * theta, 7.5 * P_closed};
        const double got_c[] = {closed.theta0, closed.A0, closed.A_delta, closed.naud_strip};
        const double got_e[] = {est.theta0, est.A0, est.A_delta, est.naud_strip};
        const char* names[] = {"theta0", "A0", "A_0.5", "naud_strip"};
        for (int i = 0; i < 4; ++i) {
            v.require(std::abs(got_c[i] - ref[i]) <= 1e-6, std::string(names[i]) + " closed form");
            v.require(std::abs(got_e[i] - ref[i]) <= 0.05 * std::abs(ref[i]), std::string(names[i]) + " estimated");
        }
        v.require(std::abs(closed.A0 - 7.699) < 1e-3 && std::abs(closed.A_delta - 14.436) < 1e-3 &&
                      std::abs(closed.naud_strip + 7.218) < 1e-3,
                  "reference values");
        v.detail << " A0=" << closed.A0 << " A_0.5=" << closed.A_delta << " naud=" << closed.naud_strip
                 << " (estimated " << est.naud_strip << ")";
    });

    criterion(11, "determinism of the all suite at parallelism 1 and 8", [](Verdict& v) {
        const auto dir = std::filesystem::temp_directory_path();
        const auto a = dir / ("anosov_all_1_" + std::to_string(::getpid()) + ".json");
        const auto b = dir / ("anosov_all_8_" + std::to_string(::getpid()) + ".json");
        const int ca = run_cli("all --threads 1 --out " + a.string());
        const int cb = run_cli("all --threads 8 --out " + b.string());
        v.require(ca == 0, "all passes at --threads 1");
        v.require(cb == 0, "all passes at --threads 8");
        const std::string sa = slurp(a), sb = slurp(b);
        v.require(!sa.empty() && sa == sb, "byte-identical JSON");
        v.detail << " " << sa.size() << " bytes";
        std::filesystem::remove(a);
        std::filesystem::remove(b);
    });

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
