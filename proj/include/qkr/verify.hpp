// Numerical checks of the kick algebra and of the Anderson correspondence, shared by
// the `verify` command and the acceptance suite.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "qkr/anderson.hpp"
#include "qkr/ensemble.hpp"
#include "qkr/model.hpp"

namespace qkr::verify {

using Mat2 = Eigen::Matrix2cd;

inline Mat2 to_eigen(const SpinMatrix2& m)
{
    Mat2 r;
    r << m(0, 0), m(0, 1), m(1, 0), m(1, 1);
    return r;
}

/// f(H) for a Hermitian 2x2 H through its eigendecomposition.
template <class F>
Mat2 hermitian_function(const Mat2& h, F&& f)
{
    Eigen::SelfAdjointEigenSolver<Mat2> es(h);
    const auto& vals = es.eigenvalues();
    Eigen::Vector2cd fv;
    fv << f(vals(0)), f(vals(1));
    return es.eigenvectors() * fv.asDiagonal() * es.eigenvectors().adjoint();
}

/// The kick potential V = (2 arctan(2|d|)/|d|) d.sigma as a dense matrix.
inline Mat2 potential(const DVector& d)
{
    const double pref = d.norm > 0.0 ? 2.0 * std::atan(2.0 * d.norm) / d.norm : 4.0;
    return pref * to_eigen(pauli_dot(d.d1, d.d2, d.d3));
}

struct CheckResult {
    std::string name;
    int n_trunc = 0;  ///< 0 for size-independent checks
    double epsilon = std::numeric_limits<double>::quiet_NaN();
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct ModelIdentityErrors {
    double unitarity = 0.0;
    double cayley = 0.0;
    double tangent = 0.0;
};

/// Worst-case errors of U^dag U = 1, exp(-iV) = (1 - iW)(1 + iW)^{-1} and tan(V/2) = 2 d.sigma
/// over random (theta1, theta2) and, for unitarity, random h_e in [0.2, 5].
inline ModelIdentityErrors model_identity_errors(int trials, std::uint64_t seed)
{
    MemberRng rng(splitmix64(seed));
    ModelIdentityErrors e;
    const Mat2 id = Mat2::Identity();
    const std::complex<double> i_unit{0.0, 1.0};
    for (int t = 0; t < trials; ++t) {
        ModelParams p;
        const double th1 = two_pi * rng.uniform();
        const double th2 = two_pi * rng.uniform();
        p.h_e = 0.2 + 4.8 * rng.uniform();
        const Mat2 u = to_eigen(kick_matrix(th1, th2, p));
        e.unitarity = std::max(e.unitarity, (u.adjoint() * u - id).cwiseAbs().maxCoeff());

        p.h_e = 1.0;
        const Mat2 w = to_eigen(w_matrix(th1, th2, p));
        const Mat2 kick = to_eigen(kick_matrix(th1, th2, p));
        const Mat2 cayley = (id - i_unit * w) * (id + i_unit * w).inverse();
        e.cayley = std::max(e.cayley, (kick - cayley).cwiseAbs().maxCoeff());

        const Mat2 v = potential(d_vector(th1, th2, p));
        const Mat2 tan_half = hermitian_function(v, [](double x) { return std::tan(0.5 * x); });
        e.tangent = std::max(e.tangent, (tan_half - w).cwiseAbs().maxCoeff());
    }
    return e;
}

inline std::vector<CheckResult> verify_model_identities(int trials, std::uint64_t seed)
{
    const ModelIdentityErrors e = model_identity_errors(trials, seed);
    return {{"unitarity", 0, std::numeric_limits<double>::quiet_NaN(), e.unitarity, 1e-12, e.unitarity < 1e-12},
            {"cayley", 0, std::numeric_limits<double>::quiet_NaN(), e.cayley, 1e-10, e.cayley < 1e-10},
            {"tangent", 0, std::numeric_limits<double>::quiet_NaN(), e.tangent, 1e-10, e.tangent < 1e-10}};
}

inline constexpr double secular_tolerance = 1e-8;
inline constexpr double cayley_pair_tolerance = 1e-10;

/// Anderson checks for one N: per trial a random static instance (q, theta2), with
/// h_e = 1 on even trials and h_e in [1, 3] on odd ones (W = tan(V/2h_e) stays finite).
/// One row per trial reporting the worst non-singular eigenstate.
inline std::vector<CheckResult> verify_anderson(int n_trunc, int trials, std::uint64_t seed)
{
    anderson::check_dense_size(n_trunc);
    MemberRng rng(member_seed(seed, static_cast<std::uint64_t>(n_trunc)));
    std::vector<CheckResult> out;
    for (int t = 0; t < trials; ++t) {
        ModelParams p;
        p.n_trunc = n_trunc;
        const double q = rng.uniform();
        const double theta2 = two_pi * rng.uniform();
        const double h = 1.0 + 2.0 * rng.uniform();
        p.h_e = (t % 2 == 0) ? 1.0 : h;

        const auto states = anderson::check_spectrum(p, q, theta2);
        CheckResult sec{"secular", n_trunc, 0.0, 0.0, secular_tolerance, true};
        double pair_err = 0.0;
        int usable = 0;
        for (const auto& s : states) {
            pair_err = std::max({pair_err, s.plus_residual, s.minus_residual});
            if (s.singular) continue;
            ++usable;
            if (s.secular >= sec.value) {
                sec.value = s.secular;
                sec.epsilon = s.epsilon;
            }
        }
        sec.pass = usable > 0 && sec.value < secular_tolerance;
        out.push_back(sec);
        out.push_back({"cayley_pair", n_trunc, std::numeric_limits<double>::quiet_NaN(), pair_err,
                       cayley_pair_tolerance, pair_err < cayley_pair_tolerance});
    }
    return out;
}

}  // namespace qkr::verify
