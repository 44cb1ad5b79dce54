// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "qkr/ensemble.hpp"
#include "qkr/io.hpp"
#include "qkr/scaling.hpp"
#include "qkr/verify.hpp"

namespace fs = std::filesystem;
using namespace qkr;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void note(const std::string& s)
{
    std::fprintf(stderr, "  .. %s\n", s.c_str());
    std::fflush(stderr);
}

oracle::Model oracle_model(const ModelParams& p)
{
    oracle::Model m;
    m.h_e = p.h_e;
    m.mu = p.mu;
    m.omega = p.omega;
    m.dz = p.dz_factor;
    m.n_trunc = p.n_trunc;
    m.strength = p.kick_strength;
    return m;
}

oracle::VecX to_dense(const SpinorState& psi)
{
    const auto a = psi.data();
    oracle::VecX v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i];
    return v;
}

Outcome unitarity_and_oracle()
{
    ModelParams p;
    p.n_trunc = 16;
    p.h_e = 1.0 / 2.13;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    double worst = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
        SpinorState psi(16);
        for (int n = -2; n <= 2; ++n) {
            psi.at(Spin::up, n) = {g(rng), g(rng)};
            psi.at(Spin::down, n) = {g(rng), g(rng)};
        }
        psi.normalize();
        const DriveContext ctx{std::uniform_real_distribution<double>(0.0, 1.0)(rng),
                               std::uniform_real_distribution<double>(0.0, two_pi)(rng), p};
        const oracle::VecX ref = oracle::evolve(oracle_model(p), ctx.q, ctx.alpha, to_dense(psi), 64);
        const std::vector<long> record{64};
        const Trajectory tr = evolve(psi, ctx, 64, record, true);
        worst = std::max(worst, (to_dense(*tr.final_state) - ref).cwiseAbs().maxCoeff());
    }

    ModelParams big;
    big.n_trunc = 128;
    big.h_e = 1.0 / 2.13;
    const SpinAngles north{};
    SpinorState psi = init_state({}, std::span(&north, 1), 128);
    evolve(psi, {0.3, 1.7, big}, 128 * 128 / 4, {});
    const double drift = std::abs(psi.norm_sq() - 1.0);
    return {worst < 1e-10 && drift < 1e-10,
            fmt("dense N=16 t=64 max-norm diff %.2e (< 1e-10); norm drift N=128 t=4096 %.2e (< 1e-10)", worst,
                drift)};
}

Outcome algebraic_identities()
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> angle(0.0, two_pi);
    const ModelParams p;
    const oracle::Model m;
    const oracle::Mat2 id = oracle::Mat2::Identity();
    const oracle::cplx i_unit(0.0, 1.0);
    double tangent = 0.0;
    double cayley = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double a = angle(rng), b = angle(rng);
        const oracle::Mat2 w = verify::to_eigen(w_matrix(a, b, p));
        const oracle::Mat2 tan_half = oracle::matrix_function(
            oracle::potential(a, b, m), [](oracle::cplx x) { return std::tan(0.5 * x); });
        tangent = std::max(tangent, (tan_half - w).cwiseAbs().maxCoeff());
        const oracle::Mat2 kick = oracle::kick(a, b, m);
        cayley = std::max(cayley, (kick - (id - i_unit * w) * (id + i_unit * w).inverse()).cwiseAbs().maxCoeff());
    }
    return {tangent < 1e-10 && cayley < 1e-10,
            fmt("1e4 points: |tan(V/2) - 2d.sigma| %.2e, Cayley %.2e (< 1e-10)", tangent, cayley)};
}

Outcome anderson_mapping()
{
    double worst = 0.0;
    int failed = 0;
    int rows = 0;
    for (int n : {4, 8, 16}) {
        for (const auto& r : verify::verify_anderson(n, 50, 1)) {
            if (r.name != "secular") continue;
            ++rows;
            worst = std::max(worst, r.value);
            if (!r.pass) ++failed;
        }
    }
    return {failed == 0, fmt("N in {4,8,16}, %d static instances: worst secular residual %.2e (< 1e-8), %d failing",
                             rows, worst, failed)};
}

EnsembleSpec quarter_square(int samples)
{
    EnsembleSpec s;
    s.n_samples = samples;
    s.master_seed = 20220101;
    return s;
}

/// CSV bytes of a single-curve run; the criterion-8 comparison uses these.
std::string run_curve(double u, int samples, unsigned workers, DiffusionCurve* out)
{
    ModelParams p;
    p.n_trunc = 128;
    p.h_e = 1.0 / u;
    DiffusionCurve c = run_ensemble(p, quarter_square(samples), workers);
    c.u = u;
    std::ostringstream os;
    io::write_csv(os, io::curve_rows(c));
    if (out) *out = std::move(c);
    return os.str();
}

Outcome localization_plateau()
{
    DiffusionCurve c;
    run_curve(1.5, 100, 1, &c);
    const double d = c.final_D();
    return {d < 0.05, fmt("u=1.5 N=128 t=4096 100 samples: D = %.4f +- %.4f (< 0.05)", d, c.final_stderr())};
}

struct CriticalRun {
    std::string bytes;
    double d = 0.0;
    double err = 0.0;
};

CriticalRun critical_point(unsigned workers)
{
    DiffusionCurve c;
    CriticalRun r;
    r.bytes = run_curve(2.1294, 400, workers, &c);
    r.d = c.final_D();
    r.err = c.final_stderr();
    return r;
}

Outcome critical_diffusion(const CriticalRun& r)
{
    return {std::abs(r.d - 0.325) <= 0.03,
            fmt("u=2.1294 N=128 t=4096 400 samples: D = %.4f +- %.4f (0.325 +- 0.03)", r.d, r.err)};
}

Outcome fit_recovery()
{
    const scaling::ScalingParams truth{2.13, 2.6, {0.325, -0.2, 0.05}};
    auto synth = [&](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g;
        scaling::ScalingDataset d;
        for (int n : {64, 128, 256})
            for (int i = 0; i <= 40; ++i) {
                const double u = 2.10 + 0.0015 * i;
                d.points.push_back({u, n, scaling::scaling_model(u, n, truth) + 0.002 * g(rng), 0.002});
            }
        return d;
    };
    scaling::FitOptions opt;
    opt.k_max = 2;
    const scaling::ScalingFit a = scaling::fit(synth(1), opt);
    const scaling::ScalingFit b = scaling::fit(synth(1), opt);
    const bool same = scaling::flatten(a) == scaling::flatten(b) && a.chi2 == b.chi2;
    const double nu_rel = std::abs(a.nu - 2.6) / 2.6;
    const double uc_abs = std::abs(a.u_c - 2.13);
    return {nu_rel < 0.02 && uc_abs < 0.001 && same,
            fmt("truth (2.13, 2.6), noise 0.002: nu = %.4f (%.2f%%, < 2%%), u_c = %.5f (|du| %.1e < 1e-3), %s",
                a.nu, 100.0 * nu_rel, a.u_c, uc_abs, same ? "repeatable" : "NOT repeatable")};
}

struct DeskRun {
    std::string csv;
    std::string report;
    std::string error;
    scaling::ScalingFit fit;
};

struct SweepPlan {
    std::vector<int> sizes;
    int samples = 0;
    std::string tag;
};

const SweepPlan desk_plan{{64, 128, 256}, 200, "desk"};
const SweepPlan full_plan{{64, 128, 256, 512, 1024}, 400, "full"};

DeskRun desk_scaling(unsigned workers, const fs::path& out, const SweepPlan& plan = desk_plan)
{
    std::vector<double> grid;
    for (int i = 0; i <= 12; ++i) grid.push_back(std::round((2.10 + 0.005 * i) * 1e12) / 1e12);
    const auto t0 = std::chrono::steady_clock::now();
    const auto entries = sweep(ModelParams{}, grid, plan.sizes, quarter_square(plan.samples), workers, nullptr,
                               [&](const SweepEntry& e, std::size_t done, std::size_t total) {
                                   const double s = std::chrono::duration<double>(
                                                        std::chrono::steady_clock::now() - t0)
                                                        .count();
                                   note(fmt("[%zu/%zu] N=%d u=%.3f %s (%.0f s)", done, total, e.n_trunc, e.u,
                                            e.error.empty() ? "ok" : e.error.c_str(), s));
                               });
    DeskRun r;
    std::vector<DiffusionCurve> curves;
    std::vector<io::CurveRow> rows;
    for (const auto& e : entries) {
        if (!e.curve) {
            r.error += "N=" + std::to_string(e.n_trunc) + " u=" + io::format_double(e.u) + ": " + e.error + "; ";
            continue;
        }
        curves.push_back(*e.curve);
        const auto cr = io::curve_rows(*e.curve);
        rows.insert(rows.end(), cr.begin(), cr.end());
    }
    std::ostringstream os;
    io::write_csv(os, rows);
    r.csv = os.str();
    if (!r.error.empty()) return r;

    const auto data = scaling::dataset_from_curves(curves).window(2.10, 2.16);
    scaling::FitOptions opt;
    opt.workers = workers;
    try {
        opt.k_max = scaling::select_kmax(data, 1, 4, opt);
        r.fit = scaling::fit(data, opt);
        r.fit.bootstrap_err = scaling::bootstrap_errors(data, opt, r.fit, 200, 1);
        r.report = io::fit_report(r.fit, 1, 2.10, 2.16, 0.25).dump(2) + "\n";
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    if (!out.empty()) {
        fs::create_directories(out);
        io::write_text_atomic(out / (plan.tag + "_sweep_w" + std::to_string(workers) + ".csv"), r.csv);
        if (!r.report.empty())
            io::write_text_atomic(out / (plan.tag + "_fit_w" + std::to_string(workers) + ".json"), r.report);
    }
    return r;
}

Outcome desk_nu(const DeskRun& r)
{
    if (!r.error.empty()) return {false, "desk run failed: " + r.error};
    const auto& f = r.fit;
    const bool ok = f.nu >= 2.2 && f.nu <= 3.1 && f.u_c >= 2.125 && f.u_c <= 2.135;
    return {ok, fmt("N in {64,128,256}, 13 u, 200 samples: nu = %.3f +- %.3f in [2.2, 3.1], u_c = %.4f +- %.4f in "
                    "[2.125, 2.135], sigma* = %.4f, k_max %d, chi2/dof %.2f",
                    f.nu, f.bootstrap_err.size() > 1 ? f.bootstrap_err[1] : NAN, f.u_c,
                    f.bootstrap_err.empty() ? NAN : f.bootstrap_err[0], f.sigma_star, f.k_max, f.chi2_dof)};
}

Outcome full_nu(const DeskRun& r)
{
    if (!r.error.empty()) return {false, "full run failed: " + r.error};
    const auto& f = r.fit;
    return {std::abs(f.nu - 2.62) <= 0.18,
            fmt("N in {64..1024}, 13 u, 400 samples: nu = %.3f +- %.3f (2.62 +- 0.18), u_c = %.4f, sigma* = %.4f",
                f.nu, f.bootstrap_err.size() > 1 ? f.bootstrap_err[1] : NAN, f.u_c, f.sigma_star)};
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"acceptance criteria"};
    std::vector<int> only;
    std::string out = "acceptance_out";
    app.add_option("--only", only, "criteria to run (default all)")->delimiter(',')->check(CLI::Range(1, 8));
    app.add_option("--out", out, "directory for the desk-scale sweep and fit artifacts");
    bool full = false;
    unsigned full_workers = 1;
    app.add_flag("--full", full, "also run the large-size sweep (N up to 1024, 400 samples; days on one core)");
    app.add_option("--full-workers", full_workers, "worker threads for --full")->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8}
                                                : std::set<int>(only.begin(), only.end());

    std::map<unsigned, CriticalRun> critical;
    std::map<unsigned, DeskRun> desk;
    auto critical_at = [&](unsigned w) -> const CriticalRun& {
        if (!critical.count(w)) {
            note(fmt("critical-point ensemble, %u worker(s)", w));
            critical[w] = critical_point(w);
        }
        return critical[w];
    };
    auto desk_at = [&](unsigned w) -> const DeskRun& {
        if (!desk.count(w)) {
            note(fmt("desk-scale sweep and fit, %u worker(s)", w));
            desk[w] = desk_scaling(w, out);
        }
        return desk[w];
    };

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"unitarity and dense oracle", unitarity_and_oracle},
        {"algebraic identities", algebraic_identities},
        {"Anderson mapping", anderson_mapping},
        {"localization plateau", localization_plateau},
        {"critical diffusion", [&] { return critical_diffusion(critical_at(1)); }},
        {"fit recovery", fit_recovery},
        {"desk-scale nu", [&] { return desk_nu(desk_at(1)); }},
        {"determinism across workers",
         [&] {
             bool same = true;
             std::string detail = "byte-identical criterion 5 and 7 outputs for workers 1, 4, 16:";
             for (unsigned w : {4u, 16u}) {
                 const bool c5 = critical_at(w).bytes == critical_at(1).bytes;
                 const bool c7 = desk_at(w).csv == desk_at(1).csv && desk_at(w).report == desk_at(1).report &&
                                 desk_at(w).error == desk_at(1).error;
                 detail += fmt(" w=%u %s/%s", w, c5 ? "same" : "DIFFERENT", c7 ? "same" : "DIFFERENT");
                 same = same && c5 && c7;
             }
             return Outcome{same, detail};
         }},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failures;
        std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                    o.detail.c_str(), s);
        std::fflush(stdout);
    }
    if (full) {
        const auto t0 = std::chrono::steady_clock::now();
        note(fmt("large-size sweep and fit, %u worker(s)", full_workers));
        const Outcome o = full_nu(desk_scaling(full_workers, out, full_plan));
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failures;
        std::printf("%s full-scale nu: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", o.detail.c_str(), s);
    }
    return failures == 0 ? 0 : 1;
}
