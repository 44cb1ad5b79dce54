// One-parameter finite-size scaling fit D(u, N) = sum_k a_k y^k, y = (u - u_c) N^{1/nu}.
//
// The coefficients a_k enter linearly and are eliminated by weighted least squares
// for each trial (u_c, nu); the remaining two-parameter chi^2 surface is searched
// with Nelder-Mead from the best points of a start grid.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkr/ensemble.hpp"
#include "qkr/parallel.hpp"

namespace qkr::scaling {

struct ScalingPoint {
    double u = 0.0;      ///< 1 / h_e
    int n_trunc = 0;     ///< N
    double D = 0.0;
    double sigma = 0.0;  ///< standard error of D
};

struct ScalingDataset {
    std::vector<ScalingPoint> points;
    double x = 0.25;  ///< t / N^2 shared by all points

    std::vector<int> sizes() const
    {
        std::vector<int> s;
        for (const auto& p : points) s.push_back(p.n_trunc);
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
        return s;
    }

    /// Points with u in [lo, hi].
    ScalingDataset window(double lo, double hi) const
    {
        ScalingDataset w;
        w.x = x;
        for (const auto& p : points)
            if (p.u >= lo && p.u <= hi) w.points.push_back(p);
        return w;
    }
};

struct ScalingParams {
    double u_c = 0.0;
    double nu = 1.0;
    std::vector<double> coeffs;  ///< a_0 .. a_kmax
};

inline double scaling_variable(double u, int n_trunc, double u_c, double nu)
{
    return (u - u_c) * std::pow(static_cast<double>(n_trunc), 1.0 / nu);
}

inline double polynomial(const std::vector<double>& a, double y)
{
    double r = 0.0;
    for (auto it = a.rbegin(); it != a.rend(); ++it) r = r * y + *it;
    return r;
}

inline double scaling_model(double u, int n_trunc, const ScalingParams& p)
{
    return polynomial(p.coeffs, scaling_variable(u, n_trunc, p.u_c, p.nu));
}

enum class FitErrorKind { unidentifiable, no_convergence, rank_deficiency, too_few_points };

class FitError : public std::runtime_error {
public:
    FitError(FitErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    FitErrorKind kind() const { return kind_; }

private:
    FitErrorKind kind_;
};

struct FitOptions {
    int k_max = 2;
    std::vector<double> nu_grid;   ///< empty: 11 points over [1.5, 4.0]
    std::vector<double> u_c_grid;  ///< empty: 9 points over the data's u range
    double rel_tol = 1e-10;        ///< relative chi^2 tolerance of the simplex search
    int max_starts = 6;
    int max_evaluations = 20000;
    unsigned workers = 1;
};

struct ScalingFit {
    double u_c = 0.0;
    double nu = 0.0;
    std::vector<double> coeffs;
    double sigma_star = 0.0;  ///< a_0
    Eigen::MatrixXd covariance;          ///< order: u_c, nu, a_0..a_k
    std::vector<double> covariance_err;  ///< sqrt(diag(covariance)); NaN when singular
    std::vector<double> bootstrap_err;   ///< filled by bootstrap_errors
    double chi2 = 0.0;
    int dof = 0;
    double chi2_dof = 0.0;
    int k_max = 0;
    int n_points = 0;

    ScalingParams params() const { return {u_c, nu, coeffs}; }
};

inline std::vector<double> linspace(double lo, double hi, int n)
{
    std::vector<double> v;
    if (n == 1) return {0.5 * (lo + hi)};
    for (int i = 0; i < n; ++i) v.push_back(lo + (hi - lo) * i / (n - 1));
    return v;
}

inline void check_dataset(const ScalingDataset& data, int k_max)
{
    if (k_max < 1 || k_max > 6) throw std::invalid_argument("k_max must lie in [1, 6]");
    for (const auto& p : data.points) {
        if (!(p.sigma > 0.0) || !std::isfinite(p.D) || !std::isfinite(p.u))
            throw std::invalid_argument("scaling points need finite u, D and sigma > 0");
    }
    if (data.sizes().size() < 2)
        throw FitError(FitErrorKind::unidentifiable,
                       "dataset has fewer than two system sizes; nu is unidentifiable");
    const int n_params = k_max + 3;
    if (static_cast<int>(data.points.size()) <= n_params)
        throw FitError(FitErrorKind::unidentifiable,
                       "dataset has " + std::to_string(data.points.size()) +
                           " points, need more than " + std::to_string(n_params));
    double u_lo = data.points.front().u, u_hi = u_lo;
    for (const auto& p : data.points) {
        u_lo = std::min(u_lo, p.u);
        u_hi = std::max(u_hi, p.u);
    }
    if (u_lo == u_hi)
        throw FitError(FitErrorKind::rank_deficiency,
                       "all points share one u; u_c cannot be separated from the coefficients");
}

struct InnerSolution {
    double chi2 = std::numeric_limits<double>::infinity();
    std::vector<double> coeffs;
    bool full_rank = false;
};

/// Weighted least-squares coefficients for fixed (u_c, nu).
inline InnerSolution solve_coefficients(const ScalingDataset& data, double u_c, double nu,
                                        int k_max)
{
    InnerSolution s;
    if (!(nu > 0.05) || !std::isfinite(nu) || !std::isfinite(u_c)) return s;
    const auto n = static_cast<Eigen::Index>(data.points.size());
    Eigen::MatrixXd a(n, k_max + 1);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& p = data.points[static_cast<std::size_t>(i)];
        const double y = scaling_variable(p.u, p.n_trunc, u_c, nu);
        const double w = 1.0 / p.sigma;
        double yk = 1.0;
        for (int k = 0; k <= k_max; ++k) {
            a(i, k) = w * yk;
            yk *= y;
        }
        b(i) = w * p.D;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-13);
    if (qr.rank() < k_max + 1) return s;
    const Eigen::VectorXd c = qr.solve(b);
    s.full_rank = true;
    s.coeffs.assign(c.data(), c.data() + c.size());
    s.chi2 = (a * c - b).squaredNorm();
    return s;
}

namespace detail {

struct SimplexResult {
    std::array<double, 2> x{};
    double f = std::numeric_limits<double>::infinity();
    bool converged = false;
    int evaluations = 0;
};

/// Nelder-Mead in two dimensions with standard coefficients.
template <class F>
SimplexResult nelder_mead(F&& f, std::array<double, 2> x0, std::array<double, 2> step,
                          double rel_tol, int max_evaluations)
{
    using Pt = std::array<double, 2>;
    std::array<Pt, 3> v{x0, x0, x0};
    v[1][0] += step[0];
    v[2][1] += step[1];
    std::array<double, 3> fv{};
    SimplexResult r;
    auto eval = [&](const Pt& p) {
        ++r.evaluations;
        const double y = f(p);
        return std::isfinite(y) ? y : std::numeric_limits<double>::infinity();
    };
    for (std::size_t i = 0; i < 3; ++i) fv[i] = eval(v[i]);

    auto lerp = [](const Pt& a, const Pt& b, double t) {
        return Pt{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])};
    };
    while (r.evaluations < max_evaluations) {
        std::array<std::size_t, 3> idx{0, 1, 2};
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const Pt best = v[idx[0]];
        const Pt mid = v[idx[1]];
        const Pt worst = v[idx[2]];
        const double f_best = fv[idx[0]];
        const double f_mid = fv[idx[1]];
        const double f_worst = fv[idx[2]];
        v = {best, mid, worst};
        fv = {f_best, f_mid, f_worst};

        double diameter = 0.0;
        for (std::size_t i = 1; i < 3; ++i)
            for (std::size_t d = 0; d < 2; ++d)
                diameter = std::max(diameter,
                                    std::abs(v[i][d] - best[d]) / (1.0 + std::abs(best[d])));
        const bool f_flat = std::isfinite(f_worst) &&
                            (f_worst - f_best) <= rel_tol * std::abs(f_best) + 1e-300;
        if ((f_flat && diameter < 1e-9) || diameter < 1e-15) {
            r.converged = std::isfinite(f_best);
            break;
        }

        const Pt centroid = lerp(best, mid, 0.5);
        const Pt refl = lerp(centroid, worst, -1.0);
        const double f_refl = eval(refl);
        if (f_refl < f_best) {
            const Pt exp = lerp(centroid, worst, -2.0);
            const double f_exp = eval(exp);
            if (f_exp < f_refl) {
                v[2] = exp;
                fv[2] = f_exp;
            } else {
                v[2] = refl;
                fv[2] = f_refl;
            }
            continue;
        }
        if (f_refl < f_mid) {
            v[2] = refl;
            fv[2] = f_refl;
            continue;
        }
        const bool outside = f_refl < f_worst;
        const Pt con = outside ? lerp(centroid, refl, 0.5) : lerp(centroid, worst, 0.5);
        const double f_con = eval(con);
        if (f_con < (outside ? f_refl : f_worst)) {
            v[2] = con;
            fv[2] = f_con;
            continue;
        }
        for (std::size_t i = 1; i < 3; ++i) {
            v[i] = lerp(best, v[i], 0.5);
            fv[i] = eval(v[i]);
        }
    }
    const auto it = std::min_element(fv.begin(), fv.end());
    r.x = v[static_cast<std::size_t>(it - fv.begin())];
    r.f = *it;
    return r;
}

inline double grid_step(const std::vector<double>& g, double fallback)
{
    if (g.size() < 2) return fallback;
    return std::abs(g[1] - g[0]);
}

}  // namespace detail

/// Gauss-approximation covariance of (u_c, nu, a_0..a_k) at the given parameters.
inline Eigen::MatrixXd gauss_covariance(const ScalingDataset& data, const ScalingParams& p)
{
    const int k_max = static_cast<int>(p.coeffs.size()) - 1;
    const auto n = static_cast<Eigen::Index>(data.points.size());
    const Eigen::Index m = k_max + 3;
    Eigen::MatrixXd j(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& pt = data.points[static_cast<std::size_t>(i)];
        const double scale = std::pow(static_cast<double>(pt.n_trunc), 1.0 / p.nu);
        const double y = (pt.u - p.u_c) * scale;
        double dfdy = 0.0;
        for (int k = k_max; k >= 1; --k) dfdy = dfdy * y + k * p.coeffs[static_cast<std::size_t>(k)];
        const double w = 1.0 / pt.sigma;
        j(i, 0) = w * dfdy * (-scale);
        j(i, 1) = w * dfdy * y * std::log(static_cast<double>(pt.n_trunc)) * (-1.0 / (p.nu * p.nu));
        double yk = 1.0;
        for (int k = 0; k <= k_max; ++k) {
            j(i, 2 + k) = w * yk;
            yk *= y;
        }
    }
    const Eigen::MatrixXd info = j.transpose() * j;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible())
        return Eigen::MatrixXd::Constant(m, m, std::numeric_limits<double>::quiet_NaN());
    return lu.inverse();
}

/// Minimizes chi^2 over (u_c, nu, a_0..a_kmax).
inline ScalingFit fit(const ScalingDataset& data, const FitOptions& opt)
{
    check_dataset(data, opt.k_max);

    std::vector<double> nu_grid = opt.nu_grid.empty() ? linspace(1.5, 4.0, 11) : opt.nu_grid;
    std::vector<double> uc_grid = opt.u_c_grid;
    if (uc_grid.empty()) {
        double lo = data.points.front().u, hi = lo;
        for (const auto& p : data.points) {
            lo = std::min(lo, p.u);
            hi = std::max(hi, p.u);
        }
        uc_grid = linspace(lo, hi, 9);
    }

    auto chi2 = [&](const std::array<double, 2>& x) {
        return solve_coefficients(data, x[0], x[1], opt.k_max).chi2;
    };

    struct Start {
        double f;
        std::array<double, 2> x;
    };
    std::vector<Start> starts;
    for (double uc : uc_grid)
        for (double nu : nu_grid) {
            const std::array<double, 2> x{uc, nu};
            const double f = chi2(x);
            if (std::isfinite(f)) starts.push_back({f, x});
        }
    if (starts.empty())
        throw FitError(FitErrorKind::rank_deficiency,
                       "design matrix is singular at every start point (degenerate y)");
    std::stable_sort(starts.begin(), starts.end(),
                     [](const Start& a, const Start& b) { return a.f < b.f; });
    starts.resize(std::min<std::size_t>(starts.size(), static_cast<std::size_t>(std::max(1, opt.max_starts))));

    const std::array<double, 2> step{
        detail::grid_step(uc_grid, 0.01 * std::max(1.0, std::abs(uc_grid.front()))),
        detail::grid_step(nu_grid, 0.1 * nu_grid.front())};

    std::vector<detail::SimplexResult> results(starts.size());
    parallel_for(starts.size(), opt.workers, [&](std::size_t i) {
        detail::SimplexResult r = detail::nelder_mead(chi2, starts[i].x, step, opt.rel_tol,
                                                      opt.max_evaluations);
        // restart from the optimum until chi^2 stops improving
        for (int restart = 0; restart < 8 && r.converged; ++restart) {
            const std::array<double, 2> s{std::max(1e-7, 1e-3 * step[0]),
                                          std::max(1e-7, 1e-3 * step[1])};
            detail::SimplexResult again =
                detail::nelder_mead(chi2, r.x, s, opt.rel_tol, opt.max_evaluations);
            const bool improved = again.f < r.f - opt.rel_tol * std::abs(r.f);
            if (again.f <= r.f) {
                again.evaluations += r.evaluations;
                r = again;
            }
            if (!improved) break;
        }
        results[i] = r;
    });

    const detail::SimplexResult* best = nullptr;
    for (const auto& r : results)
        if (r.converged && (!best || r.f < best->f)) best = &r;
    if (!best) throw FitError(FitErrorKind::no_convergence, "no start point converged");

    const InnerSolution inner = solve_coefficients(data, best->x[0], best->x[1], opt.k_max);
    ScalingFit out;
    out.u_c = best->x[0];
    out.nu = best->x[1];
    out.coeffs = inner.coeffs;
    out.sigma_star = inner.coeffs.front();
    out.chi2 = inner.chi2;
    out.k_max = opt.k_max;
    out.n_points = static_cast<int>(data.points.size());
    out.dof = out.n_points - (opt.k_max + 3);
    out.chi2_dof = out.chi2 / out.dof;
    out.covariance = gauss_covariance(data, out.params());
    for (Eigen::Index i = 0; i < out.covariance.rows(); ++i)
        out.covariance_err.push_back(std::sqrt(out.covariance(i, i)));
    return out;
}

/// Parameter vector in covariance order: u_c, nu, a_0..a_k.
inline std::vector<double> flatten(const ScalingFit& f)
{
    std::vector<double> v{f.u_c, f.nu};
    v.insert(v.end(), f.coeffs.begin(), f.coeffs.end());
    return v;
}

/// Stratified (per-N) resampling bootstrap; refits each replica starting at `best`.
/// Returns the sample standard deviation of u_c, nu, a_0..a_k over replicas.
inline std::vector<double> bootstrap_errors(const ScalingDataset& data, const FitOptions& opt,
                                            const ScalingFit& best, int n_boot,
                                            std::uint64_t seed)
{
    if (n_boot < 2) throw std::invalid_argument("bootstrap needs n_boot >= 2");
    std::map<int, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < data.points.size(); ++i)
        strata[data.points[i].n_trunc].push_back(i);
    for (const auto& [n, idx] : strata)
        if (idx.size() < 4)
            throw FitError(FitErrorKind::too_few_points,
                           "too few points per N for bootstrap (N=" + std::to_string(n) + ")");

    FitOptions replica_opt = opt;
    replica_opt.u_c_grid = {best.u_c};
    replica_opt.nu_grid = {best.nu};
    replica_opt.max_starts = 1;
    replica_opt.workers = 1;

    const std::size_t n_params = static_cast<std::size_t>(opt.k_max + 3);
    std::vector<std::optional<std::vector<double>>> reps(static_cast<std::size_t>(n_boot));
    parallel_for(reps.size(), opt.workers, [&](std::size_t r) {
        MemberRng rng(member_seed(seed, r));
        ScalingDataset resampled;
        resampled.x = data.x;
        for (const auto& [n, idx] : strata)
            for (std::size_t k = 0; k < idx.size(); ++k) {
                auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(idx.size()));
                resampled.points.push_back(data.points[idx[std::min(pick, idx.size() - 1)]]);
            }
        try {
            reps[r] = flatten(fit(resampled, replica_opt));
        } catch (const FitError&) {
        }
    });

    std::vector<std::vector<double>> ok;
    for (auto& r : reps)
        if (r) ok.push_back(std::move(*r));
    if (ok.size() * 2 < reps.size() || ok.size() < 2)
        throw FitError(FitErrorKind::no_convergence,
                       "bootstrap: only " + std::to_string(ok.size()) + " of " +
                           std::to_string(reps.size()) + " replicas converged");

    std::vector<double> err(n_params);
    std::vector<double> col(ok.size());
    const double m = static_cast<double>(ok.size());
    for (std::size_t p = 0; p < n_params; ++p) {
        for (std::size_t r = 0; r < ok.size(); ++r) col[r] = ok[r][p];
        const double mean = pairwise_sum(col) / m;
        for (double& c : col) c = (c - mean) * (c - mean);
        err[p] = std::sqrt(pairwise_sum(col) / (m - 1.0));
    }
    return err;
}

/// Acceptance threshold on chi^2/dof used by select_kmax.
inline double chi2_dof_threshold(int dof) { return 1.0 + 2.0 * std::sqrt(2.0 / dof); }

/// Smallest k in [k_lo, k_hi] whose fit passes chi2_dof_threshold, else the best chi^2/dof.
inline int select_kmax(const ScalingDataset& data, int k_lo, int k_hi, FitOptions opt = {})
{
    if (k_lo < 1 || k_hi > 6 || k_lo > k_hi) throw std::invalid_argument("k range must lie in [1, 6]");
    int best_k = -1;
    double best_q = std::numeric_limits<double>::infinity();
    std::string last_error;
    for (int k = k_lo; k <= k_hi; ++k) {
        opt.k_max = k;
        try {
            const ScalingFit f = fit(data, opt);
            if (f.chi2_dof < chi2_dof_threshold(f.dof)) return k;
            if (f.chi2_dof < best_q) {
                best_q = f.chi2_dof;
                best_k = k;
            }
        } catch (const FitError& e) {
            if (e.kind() == FitErrorKind::unidentifiable && data.sizes().size() < 2) throw;
            last_error = e.what();
        }
    }
    if (best_k < 0) throw FitError(FitErrorKind::no_convergence, "select_kmax: " + last_error);
    return best_k;
}

struct CollapsePoint {
    double y = 0.0;
    double D = 0.0;
    double sigma = 0.0;
    int n_trunc = 0;
    double u = 0.0;
};

inline std::vector<CollapsePoint> collapse_export(const ScalingDataset& data, const ScalingFit& f)
{
    std::vector<CollapsePoint> out;
    out.reserve(data.points.size());
    for (const auto& p : data.points)
        out.push_back({scaling_variable(p.u, p.n_trunc, f.u_c, f.nu), p.D, p.sigma, p.n_trunc, p.u});
    return out;
}

/// xi = xi0 |delta_u|^{-nu}.
inline double localization_length(double delta_u, double nu, double xi0 = 1.0)
{
    if (delta_u == 0.0) throw std::domain_error("localization length diverges at delta_u = 0");
    return xi0 * std::pow(std::abs(delta_u), -nu);
}

/// Scaling points from sweep curves at record time x N^2; curves without it are skipped.
inline ScalingDataset dataset_from_curves(const std::vector<DiffusionCurve>& curves, double x = 0.25)
{
    ScalingDataset d;
    d.x = x;
    for (const auto& c : curves) {
        const double n = c.params.n_trunc;
        const long target = std::lround(x * n * n);
        const auto it = std::find(c.times.begin(), c.times.end(), target);
        if (it == c.times.end()) continue;
        const auto k = static_cast<std::size_t>(it - c.times.begin());
        d.points.push_back({c.u, c.params.n_trunc, c.D_mean[k], c.D_stderr[k]});
    }
    return d;
}

}  // namespace qkr::scaling
