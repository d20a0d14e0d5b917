#include "vgpccm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "vgpccm/errors.hpp"
#include "vgpccm/rng.hpp"
#include "vgpccm/series_io.hpp"

namespace vgpccm {

namespace {

constexpr double kBlowupLimit = 1e6;

void check_blowup(const Eigen::VectorXd& state, long step, const char* system) {
    if (!state.allFinite() || state.cwiseAbs().maxCoeff() > kBlowupLimit) {
        throw NumericalBlowupError(std::string(system) +
                                   " diverged at step " + std::to_string(step));
    }
}

}  // namespace

void LorenzRosslerConfig::validate() const {
    if (!(dt > 0.0)) throw ValidationError("dt must be positive");
    if (substeps < 1) throw ValidationError("substeps must be >= 1");
    if (burn_in < 0 || n_steps <= burn_in) {
        throw ValidationError("need n_steps > burn_in >= 0");
    }
    if (eps_x < 0.0 || eps_y < 0.0) {
        throw ValidationError("coupling gains must be non-negative");
    }
    if (sigma_l < 0.0 || sigma_r < 0.0) {
        throw ValidationError("diffusion amplitudes must be non-negative");
    }
    if (!initial_state.empty() && initial_state.size() != 6) {
        throw ValidationError("initial_state must hold exactly 6 values");
    }
}

std::uint64_t LorenzRosslerConfig::hash() const {
    std::ostringstream s;
    s << std::setprecision(17) << "lorenz_rossler;" << eps_x << ';' << eps_y << ';'
      << sigma_l << ';' << sigma_r << ';' << dt << ';' << substeps << ';'
      << lorenz.sigma << ';' << lorenz.beta << ';' << lorenz.rho << ';'
      << rossler.omega1 << ';' << rossler.omega2 << ';' << rossler.a << ';'
      << rossler.b << ';' << rossler.c << ';' << n_steps << ';' << burn_in << ';'
      << seed;
    for (double v : initial_state) s << ';' << v;
    return fnv1a64(s.str());
}

TimeSeries Realization::channel(const std::string& name) const {
    for (std::size_t c = 0; c < channel_names.size(); ++c) {
        if (channel_names[c] == name) {
            const Eigen::VectorXd col = channels.col(static_cast<long>(c));
            return TimeSeries(std::vector<double>(col.data(), col.data() + col.size()));
        }
    }
    throw ValidationError("unknown channel '" + name + "'");
}

Realization simulate_lorenz_rossler(const LorenzRosslerConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    Eigen::VectorXd s(6);
    if (cfg.initial_state.empty()) {
        // (1,1,1) on both subsystems plus a small seeded jitter.
        for (int i = 0; i < 6; ++i) {
            s[i] = 1.0 + 0.1 * rng.normal();
        }
    } else {
        for (int i = 0; i < 6; ++i) {
            s[i] = cfg.initial_state[static_cast<std::size_t>(i)];
        }
    }

    const double h = cfg.dt / cfg.substeps;
    const double sqrt_h = std::sqrt(h);
    const LorenzParams& lo = cfg.lorenz;
    const RosslerParams& ro = cfg.rossler;

    Realization out;
    out.channel_names = {"X0", "X1", "X2", "Y0", "Y1", "Y2"};
    out.channels.resize(cfg.n_steps - cfg.burn_in, 6);
    out.dt_out = cfg.dt;
    out.seed = cfg.seed;
    out.config_hash = cfg.hash();

    // Unidirectional coupling is diffusive on the driver's first coordinate:
    // eps_x pulls the Rossler y-equation toward X0, eps_y pulls the Lorenz
    // y-equation toward Y0. The spike gate of the Rossler z-equation uses Y0.
    Eigen::VectorXd drift(6);
    for (long step = 0; step < cfg.n_steps; ++step) {
        for (int sub = 0; sub < cfg.substeps; ++sub) {
            drift[0] = lo.sigma * (s[1] - s[0]);
            drift[1] = s[0] * (lo.rho - s[2]) - s[1] + cfg.eps_y * (s[3] - s[1]);
            drift[2] = s[0] * s[1] - lo.beta * s[2];
            drift[3] = -ro.omega2 * s[4] - s[5];
            drift[4] = ro.omega2 * s[3] + ro.a * s[4] + cfg.eps_x * (s[0] - s[4]);
            drift[5] = ro.b + s[5] * (s[3] - ro.c);

            for (int i = 0; i < 3; ++i) {
                s[i] += drift[i] * h + cfg.sigma_l * sqrt_h * rng.normal();
            }
            for (int i = 3; i < 6; ++i) {
                s[i] += drift[i] * h + cfg.sigma_r * sqrt_h * rng.normal();
            }
        }
        check_blowup(s, step, "Lorenz-Rossler system");
        if (step >= cfg.burn_in) {
            out.channels.row(step - cfg.burn_in) = s.transpose();
        }
    }
    return out;
}

void NeuroConfig::validate() const {
    if (!(horizon > 0.0) || !(dt > 0.0) || !(sample_interval > 0.0)) {
        throw ValidationError("horizon, dt and sample_interval must be positive");
    }
    if (substeps < 1) {
        throw ValidationError("substeps must be >= 1");
    }
    if (!(event_duration > 0.0) || !(event_spacing >= event_duration)) {
        throw ValidationError("events must fit inside their spacing");
    }
    if (events_per_condition < 1) {
        throw ValidationError("need at least one event per condition");
    }
    if (!(u3_rate > 0.0 && u3_rate < 1.0)) {
        throw ValidationError("u3_rate must lie in (0, 1)");
    }
}

std::uint64_t NeuroConfig::hash() const {
    std::ostringstream s;
    s << std::setprecision(17) << "neurovascular;" << horizon << ';' << event_duration
      << ';' << event_spacing << ';' << events_per_condition << ';' << u3_rate << ';'
      << dt << ';' << substeps << ';' << sample_interval << ';' << snr_db << ';'
      << add_observation_noise
      << ';' << a_diag << ';' << c_gain << ';' << background_gain << ';'
      << balloon.kappa << ';' << balloon.gamma << ';' << balloon.tau << ';'
      << balloon.alpha << ';' << balloon.e0 << ';' << seed;
    return fnv1a64(s.str());
}

EventTrains generate_event_trains(const NeuroConfig& cfg) {
    cfg.validate();
    const long n = static_cast<long>(std::llround(cfg.horizon / cfg.dt));

    EventTrains out;
    out.dt = cfg.dt;
    out.u1 = Eigen::VectorXd::Zero(n);
    out.u2 = Eigen::VectorXd::Zero(n);
    out.u3 = Eigen::VectorXd::Zero(n);

    auto mark = [&](Eigen::VectorXd& u, double onset) {
        const long lo = static_cast<long>(std::llround(onset / cfg.dt));
        const long hi = static_cast<long>(std::llround((onset + cfg.event_duration) / cfg.dt));
        for (long i = std::max(0L, lo); i < std::min(n, hi); ++i) {
            u[i] = 1.0;
        }
    };

    // u1 at slot starts, u2 half a slot later; the half-slot offset keeps the
    // two trains disjoint as long as events fit in half a slot.
    for (int e = 0; e < cfg.events_per_condition; ++e) {
        mark(out.u1, e * cfg.event_spacing);
        mark(out.u2, e * cfg.event_spacing + 0.5 * cfg.event_spacing);
    }

    // Background activity: each event_duration slot fires independently.
    Rng rng(derive_seed(cfg.seed, {0xbac6ull}));
    const long slot_len = std::max(1L, static_cast<long>(std::llround(cfg.event_duration / cfg.dt)));
    for (long start = 0; start < n; start += slot_len) {
        if (rng.bernoulli(cfg.u3_rate)) {
            for (long i = start; i < std::min(n, start + slot_len); ++i) {
                out.u3[i] = 1.0;
            }
        }
    }
    return out;
}

BilinearCoupling draw_bilinear_coupling(std::uint64_t seed) {
    // Only the first condition modulates a connection: u1 opens the voxel-1
    // to voxel-2 route with a fresh N(0,1) weight per realization. The other
    // entries stay zero, keeping the driven system stable for every draw.
    Rng rng(derive_seed(seed, {0xb11ull}));
    BilinearCoupling c;
    c.rho12_u1 = rng.normal();
    return c;
}

Eigen::MatrixXd simulate_bilinear_neural(const NeuroConfig& cfg, const EventTrains& u,
                                         const BilinearCoupling& coupling,
                                         const Eigen::Vector2d& x0) {
    cfg.validate();
    const long n = u.u1.size();
    if (u.u2.size() != n || u.u3.size() != n) {
        throw DimensionMismatchError("event trains of unequal length");
    }

    const double h = cfg.dt / cfg.substeps;
    Eigen::MatrixXd x(n, 2);
    Eigen::Vector2d state = x0;
    for (long i = 0; i < n; ++i) {
        x.row(i) = state.transpose();
        // Inputs are held constant across the grid cell.
        const double u1 = u.u1[i], u2 = u.u2[i], u3 = u.u3[i];
        const double a11 = cfg.a_diag + u1 * coupling.rho11_u1 + u2 * coupling.rho11_u2 +
                           u3 * coupling.rho11_u3;
        const double a22 = cfg.a_diag + u1 * coupling.rho22_u1 + u2 * coupling.rho22_u2 +
                           u3 * coupling.rho22_u3;
        const double a21 = u1 * coupling.rho12_u1;  // voxel 1 driving voxel 2

        for (int sub = 0; sub < cfg.substeps; ++sub) {
            Eigen::Vector2d dx;
            dx[0] = a11 * state[0] + cfg.c_gain * u1 + cfg.background_gain * u3;
            dx[1] = a21 * state[0] + a22 * state[1] + cfg.c_gain * u2 +
                    cfg.background_gain * u3;
            state += h * dx;
        }
        check_blowup(state, i, "bilinear neural system");
    }
    return x;
}

BalloonTrajectories simulate_balloon(const Eigen::MatrixXd& neural, const NeuroConfig& cfg) {
    const long n = neural.rows();
    const long channels = neural.cols();
    const BalloonParams& p = cfg.balloon;

    BalloonTrajectories out;
    out.f.resize(n, channels);
    out.v.resize(n, channels);
    out.q.resize(n, channels);

    const double h = cfg.dt / cfg.substeps;
    for (long c = 0; c < channels; ++c) {
        double s = 0.0, f = 1.0, v = 1.0, q = 1.0;
        for (long i = 0; i < n; ++i) {
            out.f(i, c) = f;
            out.v(i, c) = v;
            out.q(i, c) = q;

            const double x = neural(i, c);
            for (int sub = 0; sub < cfg.substeps; ++sub) {
                // Oxygen extraction E(f) = 1 - (1 - E0)^(1/f).
                const double extraction = 1.0 - std::pow(1.0 - p.e0, 1.0 / f);
                const double outflow = std::pow(v, 1.0 / p.alpha);

                const double ds = x - p.kappa * s - p.gamma * (f - 1.0);
                const double df = s;
                const double dv = (f - outflow) / p.tau;
                const double dq = (f * extraction / p.e0 - outflow * q / v) / p.tau;

                s += h * ds;
                f += h * df;
                v += h * dv;
                q += h * dq;

                if (!(v > 0.0) || !(q > 0.0)) {
                    throw NonPositiveStateError(
                        "balloon state left the positive domain at step " +
                        std::to_string(i) + " (channel " + std::to_string(c) + ")");
                }
                if (!(f > 1e-6)) {
                    throw NonPositiveStateError(
                        "blood flow collapsed at step " + std::to_string(i));
                }
            }
            if (std::abs(s) > kBlowupLimit || f > kBlowupLimit || v > kBlowupLimit ||
                q > kBlowupLimit) {
                throw NumericalBlowupError("balloon model diverged at step " +
                                           std::to_string(i));
            }
        }
    }
    return out;
}

Eigen::VectorXd add_noise_snr(const Eigen::VectorXd& signal, double snr_db,
                              std::uint64_t seed) {
    if (std::isinf(snr_db)) {
        return signal;
    }
    const long n = signal.size();
    if (n < 1) {
        throw ZeroPowerSignalError("empty signal");
    }
    const double mean = signal.mean();
    const double power = (signal.array() - mean).square().sum() / static_cast<double>(n);
    if (!(power > 0.0)) {
        throw ZeroPowerSignalError("signal has zero mean-centered power");
    }
    const double noise_sd = std::sqrt(power / std::pow(10.0, snr_db / 10.0));

    Rng rng(seed);
    Eigen::VectorXd out(n);
    for (long i = 0; i < n; ++i) {
        out[i] = signal[i] + noise_sd * rng.normal();
    }
    return out;
}

Realization simulate_neurovascular(const NeuroConfig& cfg) {
    cfg.validate();
    NeuroConfig trains_cfg = cfg;
    const EventTrains u = generate_event_trains(trains_cfg);
    const BilinearCoupling coupling = draw_bilinear_coupling(cfg.seed);
    const Eigen::MatrixXd neural = simulate_bilinear_neural(cfg, u, coupling);
    const BalloonTrajectories balloon = simulate_balloon(neural, cfg);

    const long stride = std::max(1L, static_cast<long>(std::llround(cfg.sample_interval / cfg.dt)));
    const long samples = balloon.q.rows() / stride;

    Realization out;
    out.channel_names = {"V1", "V2"};
    out.channels.resize(samples, 2);
    out.dt_out = cfg.sample_interval;
    out.seed = cfg.seed;
    out.config_hash = cfg.hash();
    for (long i = 0; i < samples; ++i) {
        out.channels(i, 0) = balloon.q(i * stride, 0);
        out.channels(i, 1) = balloon.q(i * stride, 1);
    }
    if (cfg.add_observation_noise) {
        for (int c = 0; c < 2; ++c) {
            out.channels.col(c) = add_noise_snr(
                out.channels.col(c), cfg.snr_db,
                derive_seed(cfg.seed, {0x5015eull + static_cast<std::uint64_t>(c)}));
        }
    }
    return out;
}

}  // namespace vgpccm
