#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "qkr/model.hpp"

using namespace qkr;

namespace {

oracle::Mat2 to_eigen(const SpinMatrix2& m)
{
    oracle::Mat2 r;
    r << m(0, 0), m(0, 1), m(1, 0), m(1, 1);
    return r;
}

double max_abs(const oracle::Mat2& m) { return m.cwiseAbs().maxCoeff(); }

struct RandomPoints {
    std::mt19937_64 rng{12345};
    std::uniform_real_distribution<double> angle{0.0, two_pi};
    std::uniform_real_distribution<double> planck{0.2, 5.0};
};

}  // namespace

TEST(DVector, Origin)
{
    const DVector d = d_vector(0.0, 0.0, ModelParams{});
    EXPECT_EQ(d.d1, 0.0);
    EXPECT_EQ(d.d2, 0.0);
    EXPECT_DOUBLE_EQ(d.d3, -0.8);
    EXPECT_DOUBLE_EQ(d.norm, 0.8);
}

TEST(DVector, QuarterTurn)
{
    const DVector d = d_vector(pi / 2, pi / 2, ModelParams{});
    EXPECT_DOUBLE_EQ(d.d1, 1.0);
    EXPECT_DOUBLE_EQ(d.d2, 1.0);
    EXPECT_NEAR(d.d3, 0.8, 1e-15);
    EXPECT_NEAR(d.norm, std::sqrt(2.64), 1e-15);
}

TEST(DVector, ExtendedPrecisionOracle)
{
    const auto ref = oracle::d_long(1.234L, 2.345L, 1.0L, 0.8L);
    const DVector d = d_vector(1.234, 2.345, ModelParams{});
    EXPECT_NEAR(d.d1, static_cast<double>(ref[0]), 2e-16);
    EXPECT_NEAR(d.d2, static_cast<double>(ref[1]), 2e-16);
    EXPECT_NEAR(d.d3, static_cast<double>(ref[2]), 4e-16);
    const long double n = std::sqrt(ref[0] * ref[0] + ref[1] * ref[1] + ref[2] * ref[2]);
    EXPECT_NEAR(d.norm, static_cast<double>(n), 4e-16);
}

TEST(DVector, NormMatchesComponents)
{
    RandomPoints r;
    for (int i = 0; i < 1000; ++i) {
        const DVector d = d_vector(r.angle(r.rng), r.angle(r.rng), ModelParams{});
        EXPECT_NEAR(d.norm * d.norm, d.d1 * d.d1 + d.d2 * d.d2 + d.d3 * d.d3, 1e-14);
    }
}

TEST(DVector, PeriodicInBothAngles)
{
    RandomPoints r;
    const ModelParams p;
    for (int i = 0; i < 1000; ++i) {
        const double a = r.angle(r.rng), b = r.angle(r.rng);
        const DVector d0 = d_vector(a, b, p);
        for (const auto& [da, db] : {std::pair{two_pi, 0.0}, {0.0, two_pi}, {-two_pi, 3 * two_pi}}) {
            const DVector d1 = d_vector(a + da, b + db, p);
            EXPECT_NEAR(d1.d1, d0.d1, 1e-13);
            EXPECT_NEAR(d1.d2, d0.d2, 1e-13);
            EXPECT_NEAR(d1.d3, d0.d3, 1e-13);
        }
    }
}

TEST(WrapAngle, Range)
{
    for (double t : {-1e-300, -7.0, 0.0, two_pi, 100.0, -two_pi}) {
        const double w = wrap_angle(t);
        EXPECT_GE(w, 0.0);
        EXPECT_LT(w, two_pi);
    }
}

TEST(KickMatrix, HalfNormGivesPauliRotation)
{
    // |d| = 1/2, h_e = 1: chi = 2 arctan(1) = pi/2, so U = -i (d/|d|).sigma
    const DVector d{0.3, 0.4, 0.0, 0.5};
    const SpinMatrix2 u = kick_matrix(d, 1.0);
    const SpinMatrix2 expected = cplx{0.0, -1.0} * pauli_dot(0.6, 0.8, 0.0);
    EXPECT_LT(u.max_abs_diff(expected), 1e-15);
}

TEST(KickMatrix, AlongZIsDiagonal)
{
    ModelParams p;
    const SpinMatrix2 u = kick_matrix(0.0, 0.0, p);
    const double chi = 2.0 * std::atan(1.6);
    EXPECT_NEAR(std::abs(u(0, 0)), 1.0, 1e-15);
    EXPECT_LT(std::abs(u(0, 0) - std::polar(1.0, chi)), 1e-15);
    EXPECT_LT(std::abs(u(1, 1) - std::polar(1.0, -chi)), 1e-15);
    EXPECT_EQ(std::abs(u(0, 1)), 0.0);
    EXPECT_EQ(std::abs(u(1, 0)), 0.0);
}

TEST(KickMatrix, MatchesDenseExponential)
{
    RandomPoints r;
    ModelParams p;
    p.h_e = 0.4695;
    oracle::Model m;
    m.h_e = p.h_e;
    for (int i = 0; i < 200; ++i) {
        const double a = r.angle(r.rng), b = r.angle(r.rng);
        const auto ref = oracle::kick(a, b, m);
        EXPECT_LT(max_abs(to_eigen(kick_matrix(a, b, p)) - ref), 1e-12) << a << ' ' << b;
    }
}

TEST(KickMatrix, SmallNormBranchIsContinuous)
{
    // just below and above the switch
    const double s = small_d_threshold;
    for (double scale : {0.999, 1.001}) {
        const DVector d{0.6 * s * scale, 0.0, 0.8 * s * scale, s * scale};
        const SpinMatrix2 u = kick_matrix(d, 0.7);
        const SpinMatrix2 lin = SpinMatrix2::identity() -
                                cplx{0.0, 4.0 / 0.7} * pauli_dot(d.d1, d.d2, d.d3);
        EXPECT_LT(u.max_abs_diff(lin), 1e-14);
    }
    const SpinMatrix2 zero = kick_matrix(DVector{}, 1.3);
    EXPECT_EQ(zero.max_abs_diff(SpinMatrix2::identity()), 0.0);
}

TEST(KickMatrix, ZeroStrengthIsIdentity)
{
    ModelParams p;
    p.kick_strength = 0.0;
    EXPECT_EQ(kick_matrix(1.0, 2.0, p).max_abs_diff(SpinMatrix2::identity()), 0.0);
}

TEST(KickMatrix, UnitarityAtRandomPoints)
{
    RandomPoints r;
    ModelParams p;
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        p.h_e = r.planck(r.rng);
        const SpinMatrix2 u = kick_matrix(r.angle(r.rng), r.angle(r.rng), p);
        worst = std::max(worst, (u.adjoint() * u).max_abs_diff(SpinMatrix2::identity()));
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(FreePhase, Examples)
{
    EXPECT_EQ(free_phase(0, 0.0, 0.73), cplx(1.0, 0.0));
    EXPECT_LT(std::abs(free_phase(1, 0.0, pi) - cplx(-1.0, 0.0)), 1e-15);

    const double h = 1.0 / 2.13;
    const long double k = -3.0L + 0.37L;
    const long double ph = static_cast<long double>(h) * k * k;
    const cplx ref(static_cast<double>(std::cos(ph)), -static_cast<double>(std::sin(ph)));
    EXPECT_LT(std::abs(free_phase(-3, 0.37, h) - ref), 4e-16);
    EXPECT_NEAR(std::abs(free_phase(-3, 0.37, h)), 1.0, 1e-16);
}

TEST(WMatrix, AlongZ)
{
    const SpinMatrix2 w = w_matrix(0.0, 0.0, ModelParams{});
    EXPECT_DOUBLE_EQ(w(0, 0).real(), -1.6);
    EXPECT_DOUBLE_EQ(w(1, 1).real(), 1.6);
    EXPECT_EQ(std::abs(w(0, 1)), 0.0);
}

TEST(WMatrix, EqualsMatrixTangentOfHalfPotential)
{
    RandomPoints r;
    const ModelParams p;
    const oracle::Model m;
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double a = r.angle(r.rng), b = r.angle(r.rng);
        const auto ref = oracle::matrix_function(oracle::potential(a, b, m),
                                                 [](oracle::cplx x) { return std::tan(0.5 * x); });
        worst = std::max(worst, max_abs(to_eigen(w_matrix(a, b, p)) - ref));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(WMatrix, QuarterTurnOffDiagonal)
{
    const SpinMatrix2 w = w_matrix(pi / 2, pi / 2, ModelParams{});
    const auto ref = oracle::matrix_function(oracle::potential(pi / 2, pi / 2, oracle::Model{}),
                                             [](oracle::cplx x) { return std::tan(0.5 * x); });
    EXPECT_LT(max_abs(to_eigen(w) - ref), 1e-12);
    EXPECT_LT(std::abs(w(0, 1) - cplx(2.0, -2.0)), 1e-15);
    EXPECT_LT(std::abs(w(1, 0) - cplx(2.0, 2.0)), 1e-15);
}

TEST(WMatrix, IsHermitian)
{
    RandomPoints r;
    for (int i = 0; i < 1000; ++i) {
        const SpinMatrix2 w = w_matrix(r.angle(r.rng), r.angle(r.rng), ModelParams{});
        EXPECT_LT(w.max_abs_diff(w.adjoint()), 1e-12);
    }
}

TEST(WMatrix, CayleyTransformGivesKickAtUnitPlanck)
{
    RandomPoints r;
    const ModelParams p;  // h_e = 1
    const oracle::Mat2 id = oracle::Mat2::Identity();
    const oracle::cplx i_unit(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double a = r.angle(r.rng), b = r.angle(r.rng);
        const oracle::Mat2 w = to_eigen(w_matrix(a, b, p));
        const oracle::Mat2 cayley = (id - i_unit * w) * (id + i_unit * w).inverse();
        worst = std::max(worst, max_abs(to_eigen(kick_matrix(a, b, p)) - cayley));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(HoppingMatrix, ReducesToWAtUnitPlanck)
{
    RandomPoints r;
    const ModelParams p;
    for (int i = 0; i < 1000; ++i) {
        const double a = r.angle(r.rng), b = r.angle(r.rng);
        EXPECT_LT(hopping_matrix(d_vector(a, b, p), 1.0).max_abs_diff(w_matrix(a, b, p)), 1e-12);
    }
}

TEST(HoppingMatrix, CayleyAtGeneralPlanck)
{
    RandomPoints r;
    ModelParams p;
    const oracle::Mat2 id = oracle::Mat2::Identity();
    const oracle::cplx i_unit(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        p.h_e = 1.0 + 2.0 * (r.planck(r.rng) - 0.2) / 4.8;
        const double a = r.angle(r.rng), b = r.angle(r.rng);
        const oracle::Mat2 w = to_eigen(hopping_matrix(d_vector(a, b, p), p.h_e));
        const oracle::Mat2 cayley = (id - i_unit * w) * (id + i_unit * w).inverse();
        EXPECT_LT(max_abs(to_eigen(kick_matrix(a, b, p)) - cayley), 1e-10);
    }
}

TEST(ModelParams, Validation)
{
    ModelParams p;
    EXPECT_NO_THROW(p.validate());
    p.h_e = 0.0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p = {};
    p.n_trunc = 48;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p.n_trunc = 1;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p = {};
    EXPECT_DOUBLE_EQ(p.omega, 2.0 * pi / std::sqrt(5.0));
}
