// Curve CSV, provenance sidecars, resumable curve store and fit reports.
#pragma once

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkr/ensemble.hpp"
#include "qkr/scaling.hpp"
#include "qkr/version.hpp"

namespace qkr::io {

using json = nlohmann::json;

/// Shortest-safe decimal form: 17 significant digits round-trips every double.
inline std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline constexpr const char* csv_header = "u,h_e,N,t,D_mean,D_stderr,E_mean,n_samples,master_seed";

struct CurveRow {
    double u = 0.0;
    double h_e = 0.0;
    int n_trunc = 0;
    long t = 0;
    double D_mean = 0.0;
    double D_stderr = 0.0;
    double E_mean = 0.0;
    int n_samples = 0;
    std::uint64_t master_seed = 0;

    bool operator==(const CurveRow&) const = default;
};

inline std::vector<CurveRow> curve_rows(const DiffusionCurve& c)
{
    std::vector<CurveRow> rows;
    for (std::size_t k = 0; k < c.times.size(); ++k)
        rows.push_back({c.u, c.params.h_e, c.params.n_trunc, c.times[k], c.D_mean[k],
                        c.D_stderr[k], c.E_mean[k], c.n_samples, c.master_seed});
    return rows;
}

inline void write_csv(std::ostream& os, const std::vector<CurveRow>& rows)
{
    os << csv_header << '\n';
    for (const auto& r : rows)
        os << format_double(r.u) << ',' << format_double(r.h_e) << ',' << r.n_trunc << ','
           << r.t << ',' << format_double(r.D_mean) << ',' << format_double(r.D_stderr) << ','
           << format_double(r.E_mean) << ',' << r.n_samples << ',' << r.master_seed << '\n';
}

namespace detail {
template <class T>
T parse_field(const std::string& s)
{
    T v{};
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size() || s.empty())
        throw std::invalid_argument("bad number '" + s + "'");
    return v;
}
}  // namespace detail

inline std::vector<CurveRow> read_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != csv_header) throw std::runtime_error("unexpected CSV header: " + line);

    std::vector<CurveRow> rows;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 9)
            throw std::runtime_error("CSV line " + std::to_string(line_no) + ": expected 9 fields");
        try {
            CurveRow r;
            r.u = detail::parse_field<double>(f[0]);
            r.h_e = detail::parse_field<double>(f[1]);
            r.n_trunc = detail::parse_field<int>(f[2]);
            r.t = detail::parse_field<long>(f[3]);
            r.D_mean = detail::parse_field<double>(f[4]);
            r.D_stderr = detail::parse_field<double>(f[5]);
            r.E_mean = detail::parse_field<double>(f[6]);
            r.n_samples = detail::parse_field<int>(f[7]);
            r.master_seed = detail::parse_field<std::uint64_t>(f[8]);
            rows.push_back(r);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("CSV line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

inline std::vector<CurveRow> read_csv_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_csv(in);
}

/// Rows at t = round(x N^2), one scaling point each.
inline scaling::ScalingDataset dataset_from_rows(const std::vector<CurveRow>& rows, double x = 0.25)
{
    scaling::ScalingDataset d;
    d.x = x;
    for (const auto& r : rows) {
        const double n = r.n_trunc;
        if (r.t == std::lround(x * n * n)) d.points.push_back({r.u, r.n_trunc, r.D_mean, r.D_stderr});
    }
    return d;
}

inline const char* init_kind_name(InitKind k) { return k == InitKind::delta ? "delta" : "gaussian"; }

inline InitKind parse_init_kind(const std::string& s)
{
    if (s == "delta") return InitKind::delta;
    if (s == "gaussian") return InitKind::gaussian;
    throw std::invalid_argument("unknown init kind '" + s + "'");
}

inline json params_json(const ModelParams& p)
{
    return {{"h_e", p.h_e},           {"mu", p.mu},
            {"omega", p.omega},       {"dz_factor", p.dz_factor},
            {"N", p.n_trunc},         {"kick_strength", p.kick_strength}};
}

inline json spec_json(const EnsembleSpec& s)
{
    json j = {{"n_samples", s.n_samples},
              {"master_seed", s.master_seed},
              {"init", {{"kind", init_kind_name(s.init.kind)}, {"n0", s.init.n0}, {"sigma", s.init.sigma}}},
              {"t_ratio", s.t_ratio},
              {"record_times", s.record_times}};
    j["t_max"] = s.t_max ? json(*s.t_max) : json(nullptr);
    return j;
}

/// Full provenance sidecar; also the resume record of a curve.
inline json curve_json(const DiffusionCurve& c, const EnsembleSpec& spec)
{
    return {{"code_version", version_string},
            {"u", c.u},
            {"params", params_json(c.params)},
            {"spec", spec_json(spec)},
            {"times", c.times},
            {"D_mean", c.D_mean},
            {"D_stderr", c.D_stderr},
            {"E_mean", c.E_mean},
            {"n_samples", c.n_samples},
            {"master_seed", c.master_seed},
            {"n_truncation_flagged", c.n_truncation_flagged},
            {"max_edge_weight", c.max_edge_weight}};
}

inline DiffusionCurve curve_from_json(const json& j)
{
    DiffusionCurve c;
    const json& p = j.at("params");
    c.params.h_e = p.at("h_e");
    c.params.mu = p.at("mu");
    c.params.omega = p.at("omega");
    c.params.dz_factor = p.at("dz_factor");
    c.params.n_trunc = p.at("N");
    c.params.kick_strength = p.at("kick_strength");
    c.u = j.at("u");
    c.times = j.at("times").get<std::vector<long>>();
    c.D_mean = j.at("D_mean").get<std::vector<double>>();
    c.D_stderr = j.at("D_stderr").get<std::vector<double>>();
    c.E_mean = j.at("E_mean").get<std::vector<double>>();
    c.n_samples = j.at("n_samples");
    c.master_seed = j.at("master_seed");
    c.n_truncation_flagged = j.at("n_truncation_flagged");
    c.max_edge_weight = j.at("max_edge_weight");
    return c;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text)
{
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << text;
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

/// One JSON file per (u, N) in a directory; a curve is reused only if its recorded
/// parameters and ensemble spec match the request exactly.
class DirectoryCurveStore : public CurveStore {
public:
    explicit DirectoryCurveStore(std::filesystem::path dir) : dir_(std::move(dir))
    {
        std::filesystem::create_directories(dir_);
    }

    std::filesystem::path path_for(const ModelParams& p) const
    {
        return dir_ / ("curve_N" + std::to_string(p.n_trunc) + "_he" + format_double(p.h_e) + ".json");
    }

    std::optional<DiffusionCurve> load(const ModelParams& p, const EnsembleSpec& spec) override
    {
        const auto path = path_for(p);
        if (!std::filesystem::exists(path)) return std::nullopt;
        try {
            std::ifstream in(path);
            const json j = json::parse(in);
            if (j.at("params") != params_json(p) || j.at("spec") != spec_json(spec))
                return std::nullopt;
            return curve_from_json(j);
        } catch (const std::exception&) {
            return std::nullopt;  // unreadable record: recompute
        }
    }

    void save(const DiffusionCurve& c, const EnsembleSpec& spec) override
    {
        write_text_atomic(path_for(c.params), curve_json(c, spec).dump(2) + "\n");
    }

private:
    std::filesystem::path dir_;
};

inline json fit_report(const scaling::ScalingFit& f, std::uint64_t seed, double window_lo,
                       double window_hi, double x)
{
    auto named = [&](const std::vector<double>& v) {
        json j = json::object();
        if (v.size() < 3) return j;
        j["u_c"] = v[0];
        j["nu"] = v[1];
        j["sigma_star"] = v[2];
        j["coeffs"] = std::vector<double>(v.begin() + 2, v.end());
        return j;
    };
    // a singular covariance gives NaN entries, which serialize as null
    return {{"u_c", f.u_c},
            {"nu", f.nu},
            {"sigma_star", f.sigma_star},
            {"coeffs", f.coeffs},
            {"chi2", f.chi2},
            {"dof", f.dof},
            {"chi2_dof", f.chi2_dof},
            {"k_max", f.k_max},
            {"bootstrap_err", named(f.bootstrap_err)},
            {"covariance_err", named(f.covariance_err)},
            {"n_points", f.n_points},
            {"seed", seed},
            {"window", {window_lo, window_hi}},
            {"x", x},
            {"code_version", version_string}};
}

inline void write_collapse_csv(std::ostream& os, const std::vector<scaling::CollapsePoint>& pts)
{
    os << "y,D,sigma_D,N,u\n";
    for (const auto& p : pts)
        os << format_double(p.y) << ',' << format_double(p.D) << ',' << format_double(p.sigma)
           << ',' << p.n_trunc << ',' << format_double(p.u) << '\n';
}

}  // namespace qkr::io
