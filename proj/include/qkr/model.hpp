// Spin-1/2 kicked rotor: kick potential, its one-period unitary, free phases
// and the hopping matrix of the equivalent Anderson model.
#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace qkr {

using cplx = std::complex<double>;

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Complex product without the C99 Annex G inf/nan recovery path.
inline cplx mul(const cplx& a, const cplx& b)
{
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

/// Physical constants of one rotor instance.
struct ModelParams {
    double h_e = 1.0;                                 ///< effective Planck constant
    double mu = 1.0;                                  ///< mass term in d_z
    double omega = two_pi / std::sqrt(5.0);           ///< second-rotor frequency
    double dz_factor = 0.8;                           ///< prefactor of d_z
    int n_trunc = 128;                                ///< momenta n in [-N, N-1]
    double kick_strength = 1.0;                       ///< V -> kick_strength * V; 0 disables the kick

    int sites() const { return 2 * n_trunc; }

    void validate() const
    {
        if (!(h_e > 0.0) || !std::isfinite(h_e))
            throw std::invalid_argument("h_e must be positive and finite");
        if (n_trunc < 2 || (n_trunc & (n_trunc - 1)) != 0)
            throw std::invalid_argument("n_trunc must be a power of two >= 2, got " +
                                        std::to_string(n_trunc));
        if (!std::isfinite(mu) || !std::isfinite(omega) || !std::isfinite(dz_factor) ||
            !std::isfinite(kick_strength))
            throw std::invalid_argument("model parameters must be finite");
    }

    bool operator==(const ModelParams&) const = default;
};

/// Reduce an angle to [0, 2pi).
inline double wrap_angle(double theta)
{
    double r = std::fmod(theta, two_pi);
    if (r < 0.0) r += two_pi;
    if (r >= two_pi) r = 0.0;
    return r;
}

struct DVector {
    double d1 = 0.0;
    double d2 = 0.0;
    double d3 = 0.0;
    double norm = 0.0;
};

/// Row-major 2x2 complex matrix acting on (up, down) spinors.
struct SpinMatrix2 {
    std::array<cplx, 4> m{};

    cplx& operator()(int r, int c) { return m[2 * r + c]; }
    const cplx& operator()(int r, int c) const { return m[2 * r + c]; }

    static SpinMatrix2 identity() { return {{cplx{1.0}, cplx{}, cplx{}, cplx{1.0}}}; }

    SpinMatrix2 adjoint() const
    {
        return {{std::conj(m[0]), std::conj(m[2]), std::conj(m[1]), std::conj(m[3])}};
    }

    friend SpinMatrix2 operator*(const SpinMatrix2& a, const SpinMatrix2& b)
    {
        SpinMatrix2 r;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j);
        return r;
    }
    friend SpinMatrix2 operator+(SpinMatrix2 a, const SpinMatrix2& b)
    {
        for (int i = 0; i < 4; ++i) a.m[i] += b.m[i];
        return a;
    }
    friend SpinMatrix2 operator-(SpinMatrix2 a, const SpinMatrix2& b)
    {
        for (int i = 0; i < 4; ++i) a.m[i] -= b.m[i];
        return a;
    }
    friend SpinMatrix2 operator*(cplx s, SpinMatrix2 a)
    {
        for (auto& x : a.m) x *= s;
        return a;
    }

    /// In-place action on a spinor.
    void apply(cplx& up, cplx& down) const
    {
        const cplx u = mul(m[0], up) + mul(m[1], down);
        const cplx d = mul(m[2], up) + mul(m[3], down);
        up = u;
        down = d;
    }

    double max_abs_diff(const SpinMatrix2& o) const
    {
        double r = 0.0;
        for (int i = 0; i < 4; ++i) r = std::max(r, std::abs(m[i] - o.m[i]));
        return r;
    }
};

/// n . sigma for a real 3-vector.
inline SpinMatrix2 pauli_dot(double x, double y, double z)
{
    return {{cplx{z, 0.0}, cplx{x, -y}, cplx{x, y}, cplx{-z, 0.0}}};
}

inline DVector d_vector_from_trig(double sin1, double cos1, double sin2, double cos2,
                                  const ModelParams& p)
{
    DVector d;
    d.d1 = sin1;
    d.d2 = sin2;
    d.d3 = p.dz_factor * (p.mu - cos1 - cos2);
    d.norm = std::sqrt(d.d1 * d.d1 + d.d2 * d.d2 + d.d3 * d.d3);
    return d;
}

inline DVector d_vector(double theta1, double theta2_eff, const ModelParams& p)
{
    const double t1 = wrap_angle(theta1);
    const double t2 = wrap_angle(theta2_eff);
    return d_vector_from_trig(std::sin(t1), std::cos(t1), std::sin(t2), std::cos(t2), p);
}

/// Below this |d| the unit vector d/|d| is replaced by its analytic limit.
inline constexpr double small_d_threshold = 1e-8;

/// exp(-i V / h_e) with V = 2 arctan(2|d|) (d/|d|) . sigma, scaled by kick_strength.
inline SpinMatrix2 kick_matrix(const DVector& d, double h_e, double kick_strength = 1.0)
{
    const double chi = kick_strength * 2.0 * std::atan(2.0 * d.norm) / h_e;
    const double c = std::cos(chi);
    // sin(chi)/|d|; tends to 4*kick_strength/h_e as |d| -> 0
    const double s_over_d =
        d.norm < small_d_threshold ? 4.0 * kick_strength / h_e : std::sin(chi) / d.norm;
    const double x = s_over_d * d.d1;
    const double y = s_over_d * d.d2;
    const double z = s_over_d * d.d3;
    // c I - i (x sx + y sy + z sz)
    return {{cplx{c, -z}, cplx{-y, -x}, cplx{y, -x}, cplx{c, z}}};
}

inline SpinMatrix2 kick_matrix(double theta1, double theta2_eff, const ModelParams& p)
{
    return kick_matrix(d_vector(theta1, theta2_eff, p), p.h_e, p.kick_strength);
}

/// exp(-i h_e (n+q)^2): one period of free rotation for H0 = p^2.
inline cplx free_phase(long n, double q, double h_e)
{
    const double k = static_cast<double>(n) + q;
    const double phase = h_e * k * k;
    return {std::cos(phase), -std::sin(phase)};
}

/// Hopping matrix tan(V / (2 h_e)) of the Anderson model. Equals 2 d.sigma at h_e = 1.
inline SpinMatrix2 hopping_matrix(const DVector& d, double h_e, double kick_strength = 1.0)
{
#ifdef QKR_INJECT_W_SIGN_ERROR
    constexpr double sign = -1.0;
#else
    constexpr double sign = 1.0;
#endif
    const double half_chi = kick_strength * std::atan(2.0 * d.norm) / h_e;
    const double t_over_d = d.norm < small_d_threshold ? 2.0 * kick_strength / h_e
                                                       : std::tan(half_chi) / d.norm;
    return pauli_dot(sign * t_over_d * d.d1, sign * t_over_d * d.d2, sign * t_over_d * d.d3);
}

/// W = 2 d.sigma.
inline SpinMatrix2 w_matrix(double theta1, double theta2_eff, const ModelParams& p)
{
    const DVector d = d_vector(theta1, theta2_eff, p);
#ifdef QKR_INJECT_W_SIGN_ERROR
    return pauli_dot(-2.0 * d.d1, -2.0 * d.d2, -2.0 * d.d3);
#else
    return pauli_dot(2.0 * d.d1, 2.0 * d.d2, 2.0 * d.d3);
#endif
}

}  // namespace qkr
