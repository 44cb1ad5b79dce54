// qkr: sweep, fit, verify and collapse front end.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "qkr/ensemble.hpp"
#include "qkr/io.hpp"
#include "qkr/scaling.hpp"
#include "qkr/verify.hpp"
#include "qkr/version.hpp"

namespace fs = std::filesystem;
using qkr::io::json;

namespace {

enum Exit : int {
    ok = 0,
    sweep_failures = 1,
    usage = 2,
    unidentifiable = 3,
    no_convergence = 4,
    verification_failed = 5,
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flat JSON config: every key names a long option of the subcommand being run
/// ("u-min" or "u_min"). Objects keyed by a subcommand name apply to that subcommand.
class JsonConfig : public CLI::Config {
public:
    explicit JsonConfig(const CLI::App* root) : root_(root) {}

    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override
    {
        json j = json::object();
        for (const CLI::Option* opt : app->get_options({})) {
            if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
            const std::string name = opt->get_lnames().front();
            if (opt->count() > 0) {
                const auto& res = opt->results();
                j[name] = res.size() == 1 ? json(res.front()) : json(res);
            } else if (default_also && !opt->get_default_str().empty()) {
                j[name] = opt->get_default_str();
            }
        }
        return j.dump(2) + "\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override
    {
        json j;
        try {
            j = json::parse(input);
        } catch (const json::exception& e) {
            throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
        std::vector<std::string> active;
        for (const CLI::App* sub : root_->get_subcommands()) active.push_back(sub->get_name());

        std::vector<CLI::ConfigItem> items;
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                for (const auto& [k, v] : value.items()) items.push_back(item({key}, k, v));
                continue;
            }
            items.push_back(item(active, key, value));
        }
        return items;
    }

private:
    static CLI::ConfigItem item(std::vector<std::string> parents, std::string key, const json& v)
    {
        for (char& c : key)
            if (c == '_') c = '-';
        CLI::ConfigItem it;
        it.parents = std::move(parents);
        it.name = key;
        auto text = [](const json& x) {
            if (x.is_string()) return x.get<std::string>();
            if (x.is_boolean()) return std::string(x.get<bool>() ? "true" : "false");
            if (x.is_number_float()) return qkr::io::format_double(x.get<double>());
            return x.dump();
        };
        if (v.is_array()) {
            for (const auto& e : v) it.inputs.push_back(text(e));
        } else {
            it.inputs.push_back(text(v));
        }
        return it;
    }

    const CLI::App* root_;
};

std::vector<double> parse_pair(const std::vector<double>& v, const char* what)
{
    if (v.size() != 2 || !(v[0] <= v[1]))
        throw UsageError(std::string(what) + " expects LO,HI with LO <= HI");
    return v;
}

fs::path output_dir(const std::string& flag)
{
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("QKR_OUT"); env && *env) return env;
    return ".";
}

/// u_min, u_min + step, ... <= u_max, rounded to 12 decimals so grid values print cleanly.
std::vector<double> u_grid(double lo, double hi, double step)
{
    if (!(step > 0.0) || !(hi >= lo) || !(lo > 0.0))
        throw UsageError("u grid needs 0 < u-min <= u-max and u-step > 0");
    const long n = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
    std::vector<double> g;
    for (long i = 0; i < n; ++i) g.push_back(std::round((lo + step * static_cast<double>(i)) * 1e12) / 1e12);
    return g;
}

struct SweepArgs {
    double u_min = 0.0, u_max = 0.0, u_step = 0.0;
    std::vector<double> u_list;
    std::vector<int> sizes;
    int samples = 400;
    std::uint64_t seed = 20220101;
    unsigned workers = 1;
    std::string out;
    std::string csv = "sweep.csv";
    double mu = 1.0;
    double omega = qkr::two_pi / std::sqrt(5.0);
    double dz_factor = 0.8;
    double t_ratio = 0.25;
    long t_max = 0;
    std::string init = "delta";
    double n0 = 0.0;
    double sigma = 1.0;
    bool quiet = false;
};

int cmd_sweep(const SweepArgs& a)
{
    if (a.sizes.empty()) throw UsageError("--sizes must list at least one N");
    std::vector<double> grid = a.u_list;
    if (grid.empty()) {
        if (a.u_step == 0.0) throw UsageError("give --u or --u-min/--u-max/--u-step");
        grid = u_grid(a.u_min, a.u_max, a.u_step);
    }

    qkr::ModelParams base;
    base.mu = a.mu;
    base.omega = a.omega;
    base.dz_factor = a.dz_factor;
    for (int n : a.sizes) {
        qkr::ModelParams p = base;
        p.n_trunc = n;
        try {
            p.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }

    qkr::EnsembleSpec spec;
    spec.n_samples = a.samples;
    spec.master_seed = a.seed;
    spec.t_ratio = a.t_ratio;
    if (a.t_max > 0) spec.t_max = a.t_max;
    try {
        spec.init = {qkr::io::parse_init_kind(a.init), a.n0, a.sigma};
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const fs::path out = output_dir(a.out);
    qkr::io::DirectoryCurveStore store(out / "curves");
    const auto progress = [&](const qkr::SweepEntry& e, std::size_t done, std::size_t total) {
        if (a.quiet) return;
        std::fprintf(stderr, "[%zu/%zu] N=%d u=%s %s\n", done, total, e.n_trunc,
                     qkr::io::format_double(e.u).c_str(),
                     !e.error.empty() ? "FAILED" : e.resumed ? "resumed" : "done");
    };
    const auto entries = qkr::sweep(base, grid, a.sizes, spec, a.workers, &store, progress);

    std::vector<qkr::io::CurveRow> rows;
    std::vector<const qkr::SweepEntry*> failed;
    int flagged_curves = 0;
    for (const auto& e : entries) {
        if (!e.curve) {
            failed.push_back(&e);
            continue;
        }
        const auto r = qkr::io::curve_rows(*e.curve);
        rows.insert(rows.end(), r.begin(), r.end());
        if (e.curve->n_truncation_flagged > 0) ++flagged_curves;
    }
    std::ostringstream csv;
    qkr::io::write_csv(csv, rows);
    qkr::io::write_text_atomic(out / a.csv, csv.str());
    std::printf("wrote %zu rows for %zu curves to %s\n", rows.size(), entries.size() - failed.size(),
                (out / a.csv).string().c_str());
    if (flagged_curves > 0)
        std::printf("note: %d curve(s) had members with edge weight above %g (see curves/*.json)\n",
                    flagged_curves, qkr::truncation_guard_limit);

    if (failed.empty()) return ok;
    std::printf("\n%-8s %-22s %s\n", "N", "u", "error");
    for (const auto* e : failed)
        std::printf("%-8d %-22s %s\n", e->n_trunc, qkr::io::format_double(e->u).c_str(), e->error.c_str());
    return sweep_failures;
}

struct FitArgs {
    std::string csv;
    std::vector<double> window;
    std::vector<int> kmax_range{1, 4};
    int boot = 200;
    std::uint64_t seed = 1;
    unsigned workers = 1;
    std::string out;
    double x = 0.25;
    std::string report = "fit_report.json";
    std::string collapse = "collapse.csv";
    std::string variable = "u";
};

qkr::scaling::ScalingDataset load_window(const std::string& csv, const std::vector<double>& window, double x)
{
    const auto rows = qkr::io::read_csv_file(csv);
    return qkr::io::dataset_from_rows(rows, x).window(window[0], window[1]);
}

/// The window is always given in u; with variable "h" the fit runs in h_e = 1/u.
qkr::scaling::ScalingDataset in_variable(qkr::scaling::ScalingDataset d, const std::string& variable)
{
    if (variable == "h")
        for (auto& p : d.points) p.u = 1.0 / p.u;
    return d;
}

/// Collapse points with the u column holding the original grid values.
std::string collapse_csv(const qkr::scaling::ScalingDataset& data, const qkr::scaling::ScalingFit& f,
                         const std::string& variable)
{
    auto pts = qkr::scaling::collapse_export(in_variable(data, variable), f);
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i].u = data.points[i].u;
    std::ostringstream csv;
    qkr::io::write_collapse_csv(csv, pts);
    return csv.str();
}

int cmd_fit(const FitArgs& a)
{
    parse_pair(a.window, "--window");
    if (a.kmax_range.size() != 2 || a.kmax_range[0] < 1 || a.kmax_range[1] > 6 ||
        a.kmax_range[0] > a.kmax_range[1])
        throw UsageError("--kmax-range expects LO,HI within [1, 6]");
    if (a.boot != 0 && a.boot < 100) throw UsageError("--boot must be 0 (skip) or >= 100");

    const auto data = load_window(a.csv, a.window, a.x);
    std::printf("%zu points in window [%s, %s] from sizes", data.points.size(),
                qkr::io::format_double(a.window[0]).c_str(), qkr::io::format_double(a.window[1]).c_str());
    for (int n : data.sizes()) std::printf(" %d", n);
    std::printf("\n");

    qkr::scaling::FitOptions opt;
    opt.workers = a.workers;
    const auto fit_data = in_variable(data, a.variable);
    opt.k_max = qkr::scaling::select_kmax(fit_data, a.kmax_range[0], a.kmax_range[1], opt);
    qkr::scaling::ScalingFit f = qkr::scaling::fit(fit_data, opt);
    if (a.boot > 0) f.bootstrap_err = qkr::scaling::bootstrap_errors(fit_data, opt, f, a.boot, a.seed);

    const fs::path out = output_dir(a.out);
    fs::create_directories(out);
    json report = qkr::io::fit_report(f, a.seed, a.window[0], a.window[1], a.x);
    report["variable"] = a.variable;
    qkr::io::write_text_atomic(out / a.report, report.dump(2) + "\n");
    qkr::io::write_text_atomic(out / a.collapse, collapse_csv(data, f, a.variable));

    auto err = [&](std::size_t i) {
        const double b = i < f.bootstrap_err.size() ? f.bootstrap_err[i] : NAN;
        const double c = i < f.covariance_err.size() ? f.covariance_err[i] : NAN;
        char buf[96];
        std::snprintf(buf, sizeof buf, "(boot %.2g, cov %.2g)", b, c);
        return std::string(buf);
    };
    std::printf("k_max      %d\n", f.k_max);
    std::printf("%s_c        %.6f %s\n", a.variable.c_str(), f.u_c, err(0).c_str());
    std::printf("nu         %.4f %s\n", f.nu, err(1).c_str());
    std::printf("sigma*     %.5f %s\n", f.sigma_star, err(2).c_str());
    std::printf("chi2/dof   %.4f (dof %d)\n", f.chi2_dof, f.dof);
    std::printf("wrote %s and %s\n", (out / a.report).string().c_str(), (out / a.collapse).string().c_str());
    return ok;
}

struct VerifyArgs {
    std::vector<int> sizes{4, 8, 16};
    int trials = 50;
    int points = 10000;
    std::uint64_t seed = 1;
    bool verbose = false;
};

int cmd_verify(const VerifyArgs& a)
{
    if (a.sizes.empty()) throw UsageError("--sizes must list at least one N");
    for (int n : a.sizes) {
        if (n > qkr::anderson::max_dense_n)
            throw UsageError("verify is limited to N <= " + std::to_string(qkr::anderson::max_dense_n) +
                             " (dense diagonalization), got " + std::to_string(n));
        qkr::ModelParams p;
        p.n_trunc = n;
        try {
            p.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    if (a.trials < 1 || a.points < 1) throw UsageError("--trials and --points must be positive");

    std::vector<qkr::verify::CheckResult> rows = qkr::verify::verify_model_identities(a.points, a.seed);
    for (int n : a.sizes) {
        const auto r = qkr::verify::verify_anderson(n, a.trials, a.seed);
        rows.insert(rows.end(), r.begin(), r.end());
    }

    // one line per (check, N): the worst row, plus every failing row
    std::printf("%-12s %-4s %-12s %-12s %-9s %s\n", "check", "N", "epsilon", "residual", "tol", "result");
    auto line = [](const qkr::verify::CheckResult& r) {
        std::printf("%-12s %-4s %-12s %-12.3e %-9.0e %s\n", r.name.c_str(),
                    r.n_trunc ? std::to_string(r.n_trunc).c_str() : "-",
                    std::isnan(r.epsilon) ? "-" : qkr::io::format_double(std::round(r.epsilon * 1e6) / 1e6).c_str(),
                    r.value, r.tolerance, r.pass ? "PASS" : "FAIL");
    };
    int failures = 0;
    for (std::size_t i = 0; i < rows.size();) {
        std::size_t j = i;
        std::size_t worst = i;
        while (j < rows.size() && rows[j].name == rows[i].name && rows[j].n_trunc == rows[i].n_trunc) {
            if (rows[j].value > rows[worst].value || (!rows[j].pass && rows[worst].pass)) worst = j;
            ++j;
        }
        for (std::size_t k = i; k < j; ++k) {
            if (!rows[k].pass) ++failures;
            if (a.verbose || (!rows[k].pass && k != worst)) line(rows[k]);
        }
        if (!a.verbose) line(rows[worst]);
        i = j;
    }
    if (failures == 0) {
        std::printf("all %zu checks passed\n", rows.size());
        return ok;
    }
    std::printf("%d of %zu checks FAILED\n", failures, rows.size());
    return verification_failed;
}

struct CollapseArgs {
    std::string csv;
    std::string fit_report;
    std::vector<double> window;
    double x = 0.25;
    std::string out;
    std::string collapse = "collapse.csv";
};

int cmd_collapse(const CollapseArgs& a)
{
    std::ifstream in(a.fit_report);
    if (!in) throw UsageError("cannot open fit report " + a.fit_report);
    const json report = json::parse(in);
    qkr::scaling::ScalingFit f;
    f.u_c = report.at("u_c");
    f.nu = report.at("nu");
    f.coeffs = report.at("coeffs").get<std::vector<double>>();
    const std::string variable = report.value("variable", std::string("u"));
    std::vector<double> window = a.window;
    if (window.empty()) window = report.at("window").get<std::vector<double>>();
    parse_pair(window, "--window");

    const auto data = load_window(a.csv, window, a.x);
    const fs::path out = output_dir(a.out);
    fs::create_directories(out);
    qkr::io::write_text_atomic(out / a.collapse, collapse_csv(data, f, variable));
    std::printf("wrote %zu collapse points to %s\n", data.points.size(), (out / a.collapse).string().c_str());
    return ok;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Spin-1/2 kicked rotor: diffusion sweeps, finite-size scaling fits and checks", "qkr"};
    app.set_version_flag("--version", std::string(qkr::version_string));
    app.require_subcommand(1);
    app.allow_config_extras(false);  // subcommands inherit this
    app.set_config("--config", "", "flat JSON file of option values; command-line flags win");
    app.config_formatter(std::make_shared<JsonConfig>(&app));

    SweepArgs sw;
    auto* sweep = app.add_subcommand("sweep", "ensemble diffusion curves over a (u = 1/h_e, N) grid");
    sweep->fallthrough();
    sweep->add_option("--u-min", sw.u_min, "first u = 1/h_e");
    sweep->add_option("--u-max", sw.u_max, "last u (inclusive)");
    sweep->add_option("--u-step", sw.u_step, "u spacing");
    sweep->add_option("--u", sw.u_list, "explicit u values (instead of the min/max/step grid)")->delimiter(',');
    sweep->add_option("--sizes", sw.sizes, "truncations N, e.g. 64,128,256")->delimiter(',');
    sweep->add_option("--samples", sw.samples, "ensemble members per curve")->capture_default_str();
    sweep->add_option("--seed", sw.seed, "master seed")->capture_default_str();
    sweep->add_option("--workers", sw.workers, "worker threads")->capture_default_str();
    sweep->add_option("--out", sw.out, "output directory (default $QKR_OUT or .)");
    sweep->add_option("--csv", sw.csv, "CSV file name inside the output directory")->capture_default_str();
    sweep->add_option("--mu", sw.mu)->capture_default_str();
    sweep->add_option("--omega", sw.omega)->capture_default_str();
    sweep->add_option("--dz-factor", sw.dz_factor)->capture_default_str();
    sweep->add_option("--t-ratio", sw.t_ratio, "t = t_ratio * N^2")->capture_default_str();
    sweep->add_option("--t-max", sw.t_max, "fixed final time (overrides --t-ratio)");
    sweep->add_option("--init", sw.init, "initial state: delta or gaussian")->capture_default_str();
    sweep->add_option("--n0", sw.n0, "gaussian centre")->capture_default_str();
    sweep->add_option("--sigma", sw.sigma, "gaussian width")->capture_default_str();
    sweep->add_flag("--quiet", sw.quiet, "no per-curve progress");

    FitArgs ft;
    auto* fit = app.add_subcommand("fit", "finite-size scaling fit of a sweep CSV");
    fit->fallthrough();
    fit->add_option("--csv", ft.csv, "sweep CSV")->required()->check(CLI::ExistingFile);
    fit->add_option("--window", ft.window, "u window LO,HI")->required()->delimiter(',')->expected(2);
    fit->add_option("--kmax-range", ft.kmax_range, "polynomial order range LO,HI")->delimiter(',')->expected(2);
    fit->add_option("--boot", ft.boot, "bootstrap replicas (0 to skip)")->capture_default_str();
    fit->add_option("--seed", ft.seed, "bootstrap seed")->capture_default_str();
    fit->add_option("--workers", ft.workers)->capture_default_str();
    fit->add_option("--out", ft.out, "output directory (default $QKR_OUT or .)");
    fit->add_option("--x", ft.x, "t / N^2 of the points to fit")->capture_default_str();
    fit->add_option("--variable", ft.variable, "fit in u = 1/h_e or in h_e")
        ->check(CLI::IsMember({"u", "h"}))
        ->capture_default_str();
    fit->add_option("--report", ft.report)->capture_default_str();
    fit->add_option("--collapse", ft.collapse)->capture_default_str();

    VerifyArgs vf;
    auto* verify = app.add_subcommand("verify", "algebraic identities and the Anderson-model mapping");
    verify->fallthrough();
    verify->add_option("--sizes", vf.sizes, "dense check sizes (N <= 32)")->delimiter(',');
    verify->add_option("--trials", vf.trials, "random instances per N")->capture_default_str();
    verify->add_option("--points", vf.points, "random points for the 2x2 identities")->capture_default_str();
    verify->add_option("--seed", vf.seed)->capture_default_str();
    verify->add_flag("--verbose", vf.verbose, "print every row");

    CollapseArgs cl;
    auto* collapse = app.add_subcommand("collapse", "scaling-variable export from a sweep CSV and fit report");
    collapse->fallthrough();
    collapse->add_option("--csv", cl.csv)->required()->check(CLI::ExistingFile);
    collapse->add_option("--fit-report", cl.fit_report)->required()->check(CLI::ExistingFile);
    collapse->add_option("--window", cl.window, "u window (default: the report's)")->delimiter(',')->expected(2);
    collapse->add_option("--x", cl.x)->capture_default_str();
    collapse->add_option("--out", cl.out);
    collapse->add_option("--collapse", cl.collapse)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return usage;
    }

    try {
        if (*sweep) return cmd_sweep(sw);
        if (*fit) return cmd_fit(ft);
        if (*verify) return cmd_verify(vf);
        if (*collapse) return cmd_collapse(cl);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return usage;
    } catch (const qkr::scaling::FitError& e) {
        std::fprintf(stderr, "fit failed: %s\n", e.what());
        return e.kind() == qkr::scaling::FitErrorKind::no_convergence ? no_convergence : unidentifiable;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return usage;
}
