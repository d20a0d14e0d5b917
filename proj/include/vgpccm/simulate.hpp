#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vgpccm/series.hpp"

namespace vgpccm {

struct LorenzParams {
    double sigma = 10.0;
    double beta = 8.0 / 3.0;
    double rho = 28.0;
};

struct RosslerParams {
    double omega1 = 1.015;  // listed with the system but absent from its equations
    double omega2 = 0.918;
    double a = 0.15;
    double b = 0.2;
    double c = 10.0;
};

// Unidirectionally coupled stochastic Lorenz (X) and Rossler (Y) systems.
// eps_x couples X into Y's first equation, eps_y couples Y into X's.
struct LorenzRosslerConfig {
    double eps_x = 0.0;
    double eps_y = 0.0;
    double sigma_l = 1e-5;  // diffusion amplitude on the X equations
    double sigma_r = 0.1;   // diffusion amplitude on the Y equations
    double dt = 0.1;        // recording step
    // Internal Euler-Maruyama substeps per recorded sample. The recording
    // step of 0.1 is too coarse for a stable explicit step of the Lorenz
    // drift, so integration runs at dt/substeps.
    int substeps = 10;
    LorenzParams lorenz;
    RosslerParams rossler;
    long n_steps = 2000;  // recorded samples before discarding burn-in
    long burn_in = 500;
    std::uint64_t seed = 0;
    // Empty: start at (1,1,1) per subsystem plus seeded N(0, 0.1) jitter.
    // Otherwise exactly these six values (X0,X1,X2,Y0,Y1,Y2).
    std::vector<double> initial_state;
    void validate() const;
    std::uint64_t hash() const;
};

// A generated multivariate trajectory with named channels.
struct Realization {
    std::vector<std::string> channel_names;
    Eigen::MatrixXd channels;  // one column per channel
    double dt_out = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;

    long samples() const { return channels.rows(); }
    TimeSeries channel(const std::string& name) const;
};

Realization simulate_lorenz_rossler(const LorenzRosslerConfig& cfg);

struct BalloonParams {
    double kappa = 0.64;   // signal decay
    double gamma = 0.32;   // flow-dependent elimination
    double tau = 2.0;      // hemodynamic transit time
    double alpha = 0.32;   // vessel stiffness exponent
    double e0 = 0.4;       // resting oxygen extraction
};

// Two-voxel bilinear neural system driven by event trains, observed through
// the balloon model's deoxyhemoglobin channel.
struct NeuroConfig {
    double horizon = 1000.0;        // seconds
    double event_duration = 6.0;    // seconds
    double event_spacing = 60.0;    // seconds between scheduled event onsets
    int events_per_condition = 10;  // events in each of u1, u2
    double u3_rate = 0.3;           // Bernoulli rate on 6 s background slots
    double dt = 0.01;               // input/output grid step
    int substeps = 8;               // internal Euler substeps per grid cell
    double sample_interval = 1.0;   // observation step for the q channels
    double snr_db = 5.0;            // observation noise level
    bool add_observation_noise = true;
    double a_diag = -1.0;           // intrinsic dynamics (diagonal)
    double c_gain = 1.0;            // event drive: u1 -> voxel 1, u2 -> voxel 2
    double background_gain = 1.0;   // u3 drive into both voxels
    BalloonParams balloon;
    std::uint64_t seed = 0;
    void validate() const;
    std::uint64_t hash() const;
};

struct EventTrains {
    Eigen::VectorXd u1;
    Eigen::VectorXd u2;
    Eigen::VectorXd u3;
    double dt = 0.0;
};

// u1/u2: events_per_condition events of event_duration seconds each, on
// event_spacing centers with u2 offset by half a slot so the trains never
// overlap. u3: i.i.d. Bernoulli(u3_rate) activations on event_duration slots.
EventTrains generate_event_trains(const NeuroConfig& cfg);

// Modulation strengths drawn once per realization; rho12 couples voxel 1
// into voxel 2's dynamics during the corresponding condition. Conditions 2
// and 3 modulate no connection; the self-modulation slots exist for
// experimentation but default to zero everywhere.
struct BilinearCoupling {
    double rho11_u1 = 0.0, rho22_u1 = 0.0, rho12_u1 = 0.0;
    double rho11_u2 = 0.0, rho22_u2 = 0.0;  // rho12 fixed at 0
    double rho11_u3 = 0.0, rho22_u3 = 0.0;  // rho12 fixed at 0
};

BilinearCoupling draw_bilinear_coupling(std::uint64_t seed);

// Euler integration of xdot = A x + sum_j u_j B^j x + C u from x(0) = 0.
Eigen::MatrixXd simulate_bilinear_neural(const NeuroConfig& cfg, const EventTrains& u,
                                         const BilinearCoupling& coupling,
                                         const Eigen::Vector2d& x0 = Eigen::Vector2d::Zero());

struct BalloonTrajectories {
    Eigen::MatrixXd f;  // blood flow per channel
    Eigen::MatrixXd v;  // blood volume
    Eigen::MatrixXd q;  // deoxyhemoglobin
};

// Balloon-Windkessel response to a neural trajectory, one independent
// system per channel, from rest state (s, f, v, q) = (0, 1, 1, 1).
BalloonTrajectories simulate_balloon(const Eigen::MatrixXd& neural, const NeuroConfig& cfg);

// Adds white Gaussian noise calibrated so the mean-centered signal power to
// noise power ratio equals snr_db. Infinite snr_db returns the input.
Eigen::VectorXd add_noise_snr(const Eigen::VectorXd& signal, double snr_db,
                              std::uint64_t seed);

// Full pipeline: events -> neural -> balloon -> q sampled at 1/sample_interval,
// with observation noise unless disabled. Channels are named V1, V2.
Realization simulate_neurovascular(const NeuroConfig& cfg);

}  // namespace vgpccm
