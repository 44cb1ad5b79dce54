// Split-step spectral Floquet evolution of the dimension-reduced rotor.
//
// A state lives on 2N momentum sites (site j <-> n = j - N) with two spin
// components. One period applies the free phase in momentum space, moves both
// components to the angle grid theta_j = 2 pi j / 2N by a length-2N DFT, applies
// the local 2x2 kick at (theta_j, omega*s + alpha), and transforms back.
#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkr/model.hpp"

namespace qkr {

enum class Spin : int { up = 0, down = 1 };

/// Two-component wavefunction on momenta n in [-N, N-1].
class SpinorState {
public:
    SpinorState() = default;
    explicit SpinorState(int n_trunc)
        : n_trunc_(n_trunc), amp_(static_cast<std::size_t>(4 * n_trunc), cplx{})
    {
        if (n_trunc < 1) throw std::invalid_argument("SpinorState needs n_trunc >= 1");
    }

    int n_trunc() const { return n_trunc_; }
    int sites() const { return 2 * n_trunc_; }

    cplx& at(Spin s, long n) { return amp_[index(s, n)]; }
    const cplx& at(Spin s, long n) const { return amp_[index(s, n)]; }

    /// Spin-major storage: [up sites..., down sites...].
    std::span<cplx> data() { return amp_; }
    std::span<const cplx> data() const { return amp_; }

    double norm_sq() const
    {
        double s = 0.0;
        for (const cplx& a : amp_) s += std::norm(a);
        return s;
    }

    void normalize()
    {
        const double n = std::sqrt(norm_sq());
        if (!(n > 0.0)) throw std::domain_error("cannot normalize a zero state");
        for (cplx& a : amp_) a /= n;
    }

    bool operator==(const SpinorState&) const = default;

private:
    std::size_t index(Spin s, long n) const
    {
        if (n < -n_trunc_ || n >= n_trunc_)
            throw std::out_of_range("momentum index outside [-N, N-1]");
        return static_cast<std::size_t>(static_cast<int>(s) * 2 * n_trunc_ + (n + n_trunc_));
    }

    int n_trunc_ = 0;
    std::vector<cplx> amp_;
};

/// Point on the Bloch sphere: spinor (e^{-i az/2} cos(pol/2), e^{i az/2} sin(pol/2)).
struct SpinAngles {
    double azimuth = 0.0;
    double polar = 0.0;
};

inline std::pair<cplx, cplx> bloch_spinor(const SpinAngles& a)
{
    return {std::polar(std::cos(a.polar / 2.0), -a.azimuth / 2.0),
            std::polar(std::sin(a.polar / 2.0), a.azimuth / 2.0)};
}

enum class InitKind { delta, gaussian };

struct InitSpec {
    InitKind kind = InitKind::delta;
    double n0 = 0.0;
    double sigma = 1.0;
};

/// Weight of exp(-(n-n0)^2/sigma^2) outside [-N, N-1], relative to the full lattice sum.
inline double gaussian_tail_mass(double n0, double sigma, int n_trunc)
{
    const double cutoff = 40.0 * sigma + 2.0;  // exp(-1600) underflows
    const long lo = static_cast<long>(std::floor(n0 - cutoff));
    const long hi = static_cast<long>(std::ceil(n0 + cutoff));
    double inside = 0.0;
    double outside = 0.0;
    for (long n = std::min<long>(lo, -n_trunc); n <= std::max<long>(hi, n_trunc - 1); ++n) {
        const double z = (static_cast<double>(n) - n0) / sigma;
        const double w = std::exp(-z * z);
        (n >= -n_trunc && n < n_trunc ? inside : outside) += w;
    }
    return outside / (inside + outside);
}

/// Builds the initial state. `angles` holds one global spin orientation or one per site.
inline SpinorState init_state(const InitSpec& spec, std::span<const SpinAngles> angles,
                              int n_trunc)
{
    const int sites = 2 * n_trunc;
    if (angles.size() != 1 && angles.size() != static_cast<std::size_t>(sites))
        throw std::invalid_argument("spin angles must be global (1) or per-site (2N)");
    auto angle_at = [&](long n) -> const SpinAngles& {
        return angles.size() == 1 ? angles[0] : angles[static_cast<std::size_t>(n + n_trunc)];
    };

    SpinorState psi(n_trunc);
    if (spec.kind == InitKind::delta) {
        const auto [up, down] = bloch_spinor(angle_at(0));
        psi.at(Spin::up, 0) = up;
        psi.at(Spin::down, 0) = down;
        return psi;
    }

    if (!(spec.sigma > 0.0)) throw std::invalid_argument("gaussian sigma must be positive");
    const double tail = gaussian_tail_mass(spec.n0, spec.sigma, n_trunc);
    if (tail > 1e-12) {
        std::ostringstream msg;
        msg << "truncation N=" << n_trunc << " too small for gaussian (n0=" << spec.n0
            << ", sigma=" << spec.sigma << "): tail mass " << tail;
        throw std::invalid_argument(msg.str());
    }
    for (long n = -n_trunc; n < n_trunc; ++n) {
        const double z = (static_cast<double>(n) - spec.n0) / spec.sigma;
        const double env = std::exp(-0.5 * z * z);
        const auto [up, down] = bloch_spinor(angle_at(n));
        psi.at(Spin::up, n) = env * up;
        psi.at(Spin::down, n) = env * down;
    }
    psi.normalize();
    return psi;
}

/// Half the second moment of the momentum index, (1/2) sum n^2 |psi_n|^2.
inline double delta_sq(const SpinorState& psi)
{
    const int big_n = psi.n_trunc();
    double s = 0.0;
    for (long n = -big_n; n < big_n; ++n) {
        const double w = std::norm(psi.at(Spin::up, n)) + std::norm(psi.at(Spin::down, n));
        s += static_cast<double>(n * n) * w;
    }
    return 0.5 * s;
}

/// Probability in the outermost 10% of momentum sites (5% at each end).
inline double edge_weight(const SpinorState& psi)
{
    const int sites = psi.sites();
    const int band = std::max(1, static_cast<int>(std::lround(0.05 * sites)));
    const auto amp = psi.data();
    double s = 0.0;
    for (int spin = 0; spin < 2; ++spin) {
        const auto comp = amp.subspan(static_cast<std::size_t>(spin * sites),
                                      static_cast<std::size_t>(sites));
        for (int j = 0; j < band; ++j)
            s += std::norm(comp[static_cast<std::size_t>(j)]) +
                 std::norm(comp[static_cast<std::size_t>(sites - 1 - j)]);
    }
    return s;
}

inline constexpr double truncation_guard_limit = 1e-6;
inline constexpr double norm_drift_limit = 1e-8;

struct DriveContext {
    double q = 0.0;      ///< Bloch quasimomentum in [0, 1)
    double alpha = 0.0;  ///< second-rotor phase offset in [0, 2pi)
    ModelParams params;
};

class NormDriftError : public std::runtime_error {
public:
    NormDriftError(long step, double drift)
        : std::runtime_error(message(step, drift)), step_(step), drift_(drift)
    {
    }
    long step() const { return step_; }
    double drift() const { return drift_; }

private:
    static std::string message(long step, double drift)
    {
        std::ostringstream os;
        os << "norm drift " << drift << " at step " << step;
        return os.str();
    }
    long step_;
    double drift_;
};

namespace detail {
inline std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}
}  // namespace detail

/// One-period propagator for a fixed drive. Owns FFTW plans and scratch; use one per thread.
class FloquetPropagator {
public:
    explicit FloquetPropagator(const DriveContext& ctx) : ctx_(ctx)
    {
        ctx_.params.validate();
        const int big_n = ctx_.params.n_trunc;
        sites_ = 2 * big_n;
        phases_.resize(static_cast<std::size_t>(sites_));
        sin1_.resize(static_cast<std::size_t>(sites_));
        cos1_.resize(static_cast<std::size_t>(sites_));
        for (int j = 0; j < sites_; ++j) {
            phases_[static_cast<std::size_t>(j)] = free_phase(j - big_n, ctx_.q, ctx_.params.h_e);
            const double theta = two_pi * j / sites_;
            sin1_[static_cast<std::size_t>(j)] = std::sin(theta);
            cos1_[static_cast<std::size_t>(j)] = std::cos(theta);
        }

        std::lock_guard lock(detail::fftw_planner_mutex());
        buf_ = static_cast<cplx*>(fftw_malloc(sizeof(fftw_complex) * 2 * sites_));
        if (!buf_) throw std::bad_alloc();
        auto* raw = reinterpret_cast<fftw_complex*>(buf_);
        const int n[1] = {sites_};
        // momentum -> angle carries e^{+i n theta}
        to_angle_ = fftw_plan_many_dft(1, n, 2, raw, nullptr, 1, sites_, raw, nullptr, 1, sites_,
                                       FFTW_BACKWARD, FFTW_ESTIMATE);
        to_momentum_ = fftw_plan_many_dft(1, n, 2, raw, nullptr, 1, sites_, raw, nullptr, 1,
                                          sites_, FFTW_FORWARD, FFTW_ESTIMATE);
        if (!to_angle_ || !to_momentum_) {
            release();
            throw std::runtime_error("FFTW planning failed");
        }
    }

    FloquetPropagator(const FloquetPropagator&) = delete;
    FloquetPropagator& operator=(const FloquetPropagator&) = delete;
    ~FloquetPropagator()
    {
        std::lock_guard lock(detail::fftw_planner_mutex());
        release();
    }

    const DriveContext& context() const { return ctx_; }

    /// Kick phase used at step s.
    double kick_phase(long s) const
    {
        return wrap_angle(ctx_.params.omega * static_cast<double>(s) + ctx_.alpha);
    }

    /// Applies one period with kick phase omega*s + alpha. Returns the new norm^2.
    double step(SpinorState& psi, long s)
    {
        if (psi.n_trunc() != ctx_.params.n_trunc)
            throw std::invalid_argument("state truncation does not match the drive");
        const auto amp = psi.data();
        const std::size_t m = static_cast<std::size_t>(sites_);

        double norm_before = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            norm_before += std::norm(amp[j]) + std::norm(amp[m + j]);
            buf_[j] = mul(amp[j], phases_[j]);
            buf_[m + j] = mul(amp[m + j], phases_[j]);
        }

        // The site ordering j = n + N multiplies the angle samples by (-1)^j; the kick is
        // local, so the sign cancels between the two transforms.
        fftw_execute(to_angle_);

        const double theta2 = kick_phase(s);
        const double sin2 = std::sin(theta2);
        const double cos2 = std::cos(theta2);
        const ModelParams& p = ctx_.params;
        // |d| is even under theta1 -> 2pi - theta1 (only d1 flips sign), so the
        // transcendental part is shared by sites j and m - j.
        for (std::size_t j = 0; j <= m / 2; ++j) {
            DVector d = d_vector_from_trig(sin1_[j], cos1_[j], sin2, cos2, p);
            const SpinMatrix2 u = kick_matrix(d, p.h_e, p.kick_strength);
            u.apply(buf_[j], buf_[m + j]);
            if (j == 0 || j == m / 2) continue;
            // d1 -> -d1 conjugates the sigma_x part: entries (0,1) and (1,0) change.
            const std::size_t k = m - j;
            SpinMatrix2 mirrored = u;
            mirrored.m[1] = cplx{u.m[1].real(), -u.m[1].imag()};
            mirrored.m[2] = cplx{u.m[2].real(), -u.m[2].imag()};
            mirrored.apply(buf_[k], buf_[m + k]);
        }

        fftw_execute(to_momentum_);

        const double scale = 1.0 / static_cast<double>(sites_);
        double norm_after = 0.0;
        for (std::size_t j = 0; j < 2 * m; ++j) {
            amp[j] = buf_[j] * scale;
            norm_after += std::norm(amp[j]);
        }
        const double drift = std::abs(norm_after - norm_before);
        if (!(drift <= norm_drift_limit)) throw NormDriftError(s, drift);
        return norm_after;
    }

private:
    void release()
    {
        if (to_angle_) fftw_destroy_plan(to_angle_);
        if (to_momentum_) fftw_destroy_plan(to_momentum_);
        if (buf_) fftw_free(buf_);
        to_angle_ = nullptr;
        to_momentum_ = nullptr;
        buf_ = nullptr;
    }

    DriveContext ctx_;
    int sites_ = 0;
    std::vector<cplx> phases_;
    std::vector<double> sin1_;
    std::vector<double> cos1_;
    cplx* buf_ = nullptr;
    fftw_plan to_angle_ = nullptr;
    fftw_plan to_momentum_ = nullptr;
};

/// Single-period convenience wrapper; builds a propagator per call.
inline SpinorState& floquet_step(SpinorState& psi, const DriveContext& ctx, long s)
{
    FloquetPropagator prop(ctx);
    prop.step(psi, s);
    return psi;
}

struct Trajectory {
    std::vector<long> times;
    std::vector<double> delta_sq;
    std::optional<SpinorState> final_state;
    double max_edge_weight = 0.0;  ///< over recorded times
    bool truncation_flagged = false;
};

/// Powers of two below t_max followed by t_max itself.
inline std::vector<long> default_record_times(long t_max)
{
    std::vector<long> t;
    for (long s = 1; s < t_max; s *= 2) t.push_back(s);
    if (t_max >= 1) t.push_back(t_max);
    return t;
}

/// Applies steps s = 1..t_max to psi in place, recording delta_sq at the requested times.
inline Trajectory evolve(SpinorState& psi, const DriveContext& ctx, long t_max,
                         std::span<const long> record, bool keep_final_state = false)
{
    if (t_max < 0) throw std::invalid_argument("t_max must be non-negative");
    std::vector<long> times(record.begin(), record.end());
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    if (!times.empty() && (times.front() < 1 || times.back() > t_max))
        throw std::invalid_argument("record times must lie in [1, t_max]");

    Trajectory traj;
    traj.times = times;
    traj.delta_sq.reserve(times.size());
    if (t_max > 0) {
        FloquetPropagator prop(ctx);
        const double norm0 = psi.norm_sq();
        auto next = times.begin();
        for (long s = 1; s <= t_max; ++s) {
            const double norm = prop.step(psi, s);
            if (!(std::abs(norm - norm0) <= norm_drift_limit))
                throw NormDriftError(s, std::abs(norm - norm0));
            if (next != times.end() && *next == s) {
                traj.delta_sq.push_back(delta_sq(psi));
                traj.max_edge_weight = std::max(traj.max_edge_weight, edge_weight(psi));
                ++next;
            }
        }
    }
    traj.truncation_flagged = traj.max_edge_weight >= truncation_guard_limit;
    if (keep_final_state) traj.final_state = psi;
    return traj;
}

}  // namespace qkr
