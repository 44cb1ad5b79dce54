// Ensemble averaging over (q, alpha, initial spin) and parameter sweeps.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkr/evolve.hpp"
#include "qkr/model.hpp"
#include "qkr/parallel.hpp"

namespace qkr {

/// SplitMix64 finalizer (Steele, Lea, Flood 2014).
inline constexpr std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of ensemble member `index`.
inline constexpr std::uint64_t member_seed(std::uint64_t master_seed, std::uint64_t index)
{
    return splitmix64(splitmix64(master_seed) + index);
}

/// Per-member stream: mt19937_64 with a portable double conversion.
class MemberRng {
public:
    explicit MemberRng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on the Bloch sphere.
    SpinAngles bloch()
    {
        SpinAngles a;
        a.azimuth = two_pi * uniform();
        a.polar = std::acos(std::clamp(1.0 - 2.0 * uniform(), -1.0, 1.0));
        return a;
    }

private:
    std::mt19937_64 engine_;
};

struct EnsembleSpec {
    int n_samples = 400;
    std::uint64_t master_seed = 20220101;
    InitSpec init;
    double t_ratio = 0.25;              ///< t_max = round(t_ratio * N^2) unless overridden
    std::optional<long> t_max;          ///< explicit final time
    std::vector<long> record_times;     ///< empty: powers of two plus t_max

    void validate() const
    {
        if (n_samples < 2) throw std::invalid_argument("ensemble needs n_samples >= 2");
        if (!t_max && !(t_ratio > 0.0)) throw std::invalid_argument("t_ratio must be positive");
        if (t_max && *t_max < 1) throw std::invalid_argument("t_max must be >= 1");
    }

    long final_time(int n_trunc) const
    {
        if (t_max) return *t_max;
        const double n = static_cast<double>(n_trunc);
        return std::max(1L, std::lround(t_ratio * n * n));
    }

    std::vector<long> times(int n_trunc) const
    {
        const long t = final_time(n_trunc);
        if (record_times.empty()) return default_record_times(t);
        std::vector<long> r = record_times;
        std::sort(r.begin(), r.end());
        r.erase(std::unique(r.begin(), r.end()), r.end());
        return r;
    }
};

struct MemberDraw {
    double q = 0.0;
    double alpha = 0.0;
    std::vector<SpinAngles> spins;  ///< one entry (delta) or one per site (gaussian)
};

/// Deterministic draw for member i. Order: q, alpha, then spin angles.
inline MemberDraw sample_member(std::uint64_t master_seed, std::uint64_t i,
                                const EnsembleSpec& spec, int n_trunc)
{
    MemberRng rng(member_seed(master_seed, i));
    MemberDraw d;
    d.q = rng.uniform();
    d.alpha = two_pi * rng.uniform();
    const std::size_t n_spins =
        spec.init.kind == InitKind::gaussian ? static_cast<std::size_t>(2 * n_trunc) : 1;
    d.spins.reserve(n_spins);
    for (std::size_t k = 0; k < n_spins; ++k) d.spins.push_back(rng.bloch());
    return d;
}

struct DiffusionCurve {
    ModelParams params;
    double u = 0.0;  ///< 1 / h_e as specified by the caller (exact grid value)
    std::vector<long> times;
    std::vector<double> D_mean;
    std::vector<double> D_stderr;
    std::vector<double> E_mean;
    int n_samples = 0;
    std::uint64_t master_seed = 0;
    int n_truncation_flagged = 0;  ///< members whose edge weight exceeded the guard
    double max_edge_weight = 0.0;

    double final_D() const { return D_mean.back(); }
    double final_stderr() const { return D_stderr.back(); }
    bool operator==(const DiffusionCurve&) const = default;
};

class EnsembleError : public std::runtime_error {
public:
    EnsembleError(std::string msg, std::vector<int> failed)
        : std::runtime_error(std::move(msg)), failed_(std::move(failed))
    {
    }
    const std::vector<int>& failed_members() const { return failed_; }

private:
    std::vector<int> failed_;
};

/// Single-member trajectory with the ensemble's drive and initial-state draw.
inline Trajectory run_member(const ModelParams& params, const EnsembleSpec& spec, int i)
{
    const MemberDraw draw = sample_member(spec.master_seed, static_cast<std::uint64_t>(i), spec,
                                          params.n_trunc);
    DriveContext ctx{draw.q, draw.alpha, params};
    SpinorState psi = init_state(spec.init, draw.spins, params.n_trunc);
    const auto times = spec.times(params.n_trunc);
    return evolve(psi, ctx, spec.final_time(params.n_trunc), times);
}

/// Runs the ensemble on `workers` threads. The reduction visits members in index
/// order with pairwise summation, so the result does not depend on the worker count.
inline DiffusionCurve run_ensemble(const ModelParams& params, const EnsembleSpec& spec,
                                   unsigned workers = 1)
{
    params.validate();
    spec.validate();
    const auto times = spec.times(params.n_trunc);
    const long t_final = spec.final_time(params.n_trunc);
    if (times.empty() || times.front() < 1 || times.back() > t_final)
        throw std::invalid_argument("record times must lie in [1, t_max]");

    const std::size_t n = static_cast<std::size_t>(spec.n_samples);
    std::vector<std::optional<Trajectory>> members(n);
    std::vector<std::string> errors(n);
    parallel_for(n, workers, [&](std::size_t i) {
        try {
            members[i] = run_member(params, spec, static_cast<int>(i));
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    std::vector<int> failed;
    std::ostringstream report;
    for (std::size_t i = 0; i < n; ++i) {
        if (members[i]) continue;
        failed.push_back(static_cast<int>(i));
        report << "  member " << i << ": " << errors[i] << '\n';
    }
    if (!failed.empty())
        throw EnsembleError("ensemble aborted, " + std::to_string(failed.size()) +
                                " member(s) failed:\n" + report.str(),
                            failed);

    DiffusionCurve c;
    c.params = params;
    c.u = 1.0 / params.h_e;
    c.times = times;
    c.n_samples = spec.n_samples;
    c.master_seed = spec.master_seed;
    for (const auto& m : members) {
        c.n_truncation_flagged += m->truncation_flagged ? 1 : 0;
        c.max_edge_weight = std::max(c.max_edge_weight, m->max_edge_weight);
    }

    std::vector<double> column(n);
    const double nd = static_cast<double>(n);
    for (std::size_t k = 0; k < times.size(); ++k) {
        for (std::size_t i = 0; i < n; ++i) column[i] = members[i]->delta_sq[k];
        const double mean = pairwise_sum(column) / nd;
        for (std::size_t i = 0; i < n; ++i) column[i] = (column[i] - mean) * (column[i] - mean);
        const double var = pairwise_sum(column) / (nd - 1.0);
        const double sem = std::sqrt(var / nd);
        const double t = static_cast<double>(times[k]);
        c.D_mean.push_back(mean / t);
        c.D_stderr.push_back(sem / t);
        c.E_mean.push_back(params.h_e * params.h_e * mean);
    }
    return c;
}

/// Persistence hook for resumable sweeps.
class CurveStore {
public:
    virtual ~CurveStore() = default;
    virtual std::optional<DiffusionCurve> load(const ModelParams& params,
                                               const EnsembleSpec& spec) = 0;
    virtual void save(const DiffusionCurve& curve, const EnsembleSpec& spec) = 0;
};

struct SweepEntry {
    double u = 0.0;
    int n_trunc = 0;
    std::optional<DiffusionCurve> curve;
    std::string error;  ///< set when the ensemble failed
    bool resumed = false;
};

using SweepProgress = std::function<void(const SweepEntry&, std::size_t done, std::size_t total)>;

/// One ensemble per (u, N), u = 1/h_e; N-major order. Failures are recorded per entry.
inline std::vector<SweepEntry> sweep(const ModelParams& base, const std::vector<double>& u_grid,
                                     const std::vector<int>& sizes, const EnsembleSpec& spec,
                                     unsigned workers = 1, CurveStore* store = nullptr,
                                     const SweepProgress& progress = {})
{
    std::vector<SweepEntry> out;
    const std::size_t total = u_grid.size() * sizes.size();
    out.reserve(total);
    for (int n_trunc : sizes) {
        for (double u : u_grid) {
            SweepEntry e;
            e.u = u;
            e.n_trunc = n_trunc;
            ModelParams p = base;
            p.n_trunc = n_trunc;
            p.h_e = 1.0 / u;
            try {
                if (!(u > 0.0)) throw std::invalid_argument("u = 1/h_e must be positive");
                if (store) {
                    e.curve = store->load(p, spec);
                    e.resumed = e.curve.has_value();
                }
                if (!e.curve) {
                    e.curve = run_ensemble(p, spec, workers);
                    e.curve->u = u;
                    if (store) store->save(*e.curve, spec);
                }
            } catch (const std::exception& ex) {
                e.curve.reset();
                e.error = ex.what();
            }
            out.push_back(std::move(e));
            if (progress) progress(out.back(), out.size(), total);
        }
    }
    return out;
}

}  // namespace qkr
