// Dense small-N check of the rotor <-> Anderson model correspondence.
//
// With the second-rotor phase frozen the one-period operator F = K P is static
// (P: free phases, K: kick). For an eigenvector a+ of F with eigenvalue e^{-i eps},
// a- = e^{i V/h_e} a+ = e^{i eps} P a+ and u = (a+ + a-)/2 satisfy
//     (1 - iW) u = a+,   (1 + iW) u = a-,   W u = tan((eps - H0)/2) u,
// with W = tan(V / 2h_e) and H0 the free phase h_e (n+q)^2.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkr/model.hpp"

namespace qkr::anderson {

using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

/// Largest N accepted by the dense routines.
inline constexpr int max_dense_n = 32;

inline void check_dense_size(int n_trunc)
{
    if (n_trunc > max_dense_n)
        throw std::invalid_argument("dense Anderson check limited to N <= " +
                                    std::to_string(max_dense_n) + ", got " + std::to_string(n_trunc));
}

/// Unitary map from momentum amplitudes (site k <-> n = k - N) to angle samples theta_j.
inline Matrix momentum_to_angle(int n_trunc)
{
    const int m = 2 * n_trunc;
    Matrix b(m, m);
    const double norm = 1.0 / std::sqrt(static_cast<double>(m));
    for (int j = 0; j < m; ++j) {
        const double theta = two_pi * j / m;
        for (int k = 0; k < m; ++k) b(j, k) = std::polar(norm, (k - n_trunc) * theta);
    }
    return b;
}

/// Momentum-space form of an angle-local 2x2 operator field op(theta_j).
template <class LocalOp>
Matrix local_operator(int n_trunc, LocalOp&& op)
{
    const int m = 2 * n_trunc;
    const Matrix b = momentum_to_angle(n_trunc);
    Matrix angle = Matrix::Zero(2 * m, 2 * m);
    for (int j = 0; j < m; ++j) {
        const SpinMatrix2 u = op(two_pi * j / m);
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) angle(r * m + j, c * m + j) = u(r, c);
    }
    Matrix blk = Matrix::Zero(2 * m, 2 * m);
    blk.topLeftCorner(m, m) = b;
    blk.bottomRightCorner(m, m) = b;
    return blk.adjoint() * angle * blk;
}

/// Free-rotation phase h_e (n+q)^2 per basis index (spin-major).
inline Eigen::VectorXd free_phase_angles(const ModelParams& p, double q)
{
    const int m = 2 * p.n_trunc;
    Eigen::VectorXd h(2 * m);
    for (int s = 0; s < 2; ++s)
        for (int j = 0; j < m; ++j) {
            const double k = (j - p.n_trunc) + q;
            h(s * m + j) = p.h_e * k * k;
        }
    return h;
}

inline Matrix free_propagator(const ModelParams& p, double q)
{
    const Eigen::VectorXd h = free_phase_angles(p, q);
    Matrix f = Matrix::Zero(h.size(), h.size());
    for (Eigen::Index i = 0; i < h.size(); ++i) f(i, i) = std::polar(1.0, -h(i));
    return f;
}

inline Matrix kick_operator(const ModelParams& p, double theta2)
{
    return local_operator(p.n_trunc, [&](double theta1) { return kick_matrix(theta1, theta2, p); });
}

/// W = tan(V / 2h_e) in the momentum basis.
inline Matrix hopping_operator(const ModelParams& p, double theta2)
{
    return local_operator(p.n_trunc, [&](double theta1) {
        return hopping_matrix(d_vector(theta1, theta2, p), p.h_e, p.kick_strength);
    });
}

/// Time-independent one-period operator with the second angle frozen at theta2.
inline Matrix static_floquet_matrix(const ModelParams& p, double q, double theta2)
{
    p.validate();
    check_dense_size(p.n_trunc);
    return kick_operator(p, theta2) * free_propagator(p, q);
}

class NotEigenvector : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TangentSingularity : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CayleyPair {
    Vector a_minus;
    Vector u;
};

inline double eigen_residual(const Matrix& floquet, const Vector& a, double epsilon)
{
    return (floquet * a - std::polar(1.0, -epsilon) * a).norm() / a.norm();
}

inline CayleyPair cayley_pair(const Matrix& floquet, const Vector& a_plus, double epsilon,
                              const ModelParams& p, double q)
{
    const double res = eigen_residual(floquet, a_plus, epsilon);
    if (!(res <= 1e-8))
        throw NotEigenvector("vector is not an eigenvector of F (residual " + std::to_string(res) + ")");
    const Eigen::VectorXd h = free_phase_angles(p, q);
    CayleyPair out;
    out.a_minus.resize(a_plus.size());
    for (Eigen::Index i = 0; i < a_plus.size(); ++i)
        out.a_minus(i) = std::polar(1.0, epsilon - h(i)) * a_plus(i);
    out.u = 0.5 * (a_plus + out.a_minus);
    return out;
}

/// Minimum |cos((H0 - eps)/2)| admitted by secular_residual.
inline constexpr double tangent_guard = 1e-6;

/// ||W u - tan((eps - H0)/2) u|| / ||u||.
inline double secular_residual(const Vector& u, double epsilon, const ModelParams& p, double q,
                               double theta2)
{
    const Eigen::VectorXd h = free_phase_angles(p, q);
    Vector diag_term(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double half = 0.5 * (epsilon - h(i));
        if (std::abs(std::cos(half)) <= tangent_guard)
            throw TangentSingularity("tan((eps - H0)/2) singular at basis index " + std::to_string(i));
        diag_term(i) = std::tan(half) * u(i);
    }
    const Matrix w = hopping_operator(p, theta2);
    return (w * u - diag_term).norm() / u.norm();
}

struct EigenstateCheck {
    double epsilon = 0.0;
    double eigen_residual = 0.0;
    double plus_residual = 0.0;   ///< ||(1 - iW) u - a+||
    double minus_residual = 0.0;  ///< ||(1 + iW) u - a-||
    double secular = std::numeric_limits<double>::quiet_NaN();
    bool singular = false;
};

/// Diagonalizes the static Floquet matrix and checks every eigenstate.
inline std::vector<EigenstateCheck> check_spectrum(const ModelParams& p, double q, double theta2)
{
    const Matrix f = static_floquet_matrix(p, q, theta2);
    const Matrix w = hopping_operator(p, theta2);
    const Matrix id = Matrix::Identity(f.rows(), f.cols());
    const std::complex<double> i_unit{0.0, 1.0};
    Eigen::ComplexEigenSolver<Matrix> es(f);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigensolver failed");

    std::vector<EigenstateCheck> out;
    for (Eigen::Index k = 0; k < f.rows(); ++k) {
        const Vector a = es.eigenvectors().col(k).normalized();
        EigenstateCheck c;
        c.epsilon = -std::arg(es.eigenvalues()(k));
        c.eigen_residual = eigen_residual(f, a, c.epsilon);
        const CayleyPair pair = cayley_pair(f, a, c.epsilon, p, q);
        c.plus_residual = ((id - i_unit * w) * pair.u - a).norm();
        c.minus_residual = ((id + i_unit * w) * pair.u - pair.a_minus).norm();
        try {
            c.secular = secular_residual(pair.u, c.epsilon, p, q, theta2);
        } catch (const TangentSingularity&) {
            c.singular = true;
        }
        out.push_back(c);
    }
    return out;
}

}  // namespace qkr::anderson
