#pragma once

// Time-domain Langevin integration of the doublet in a force field, static
// deflection, first-order expansion of the field, and the analytic response
// to a modulated force.

#include "optomech2d/errors.hpp"
#include "optomech2d/model.hpp"

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace optomech2d {

enum class Integrator {
    // Exact Ornstein-Uhlenbeck propagation of each bare mode (noise included)
    // with the field force applied as Strang-split half kicks.
    exact_linear_splitting,
    // Velocity-first semi-implicit Euler-Maruyama. Shifts the resonance by
    // roughly (Omega dt)^2 / 24 relative, which is a couple of linewidths at
    // Q ~ 3000 and 50 steps per period.
    semi_implicit_euler,
};

struct LangevinOptions {
    double dt{0.0};        // s, integration step
    double duration{0.0};  // s
    std::uint64_t seed{0};
    std::size_t decimation{1}; // keep every n-th step
    Vec2 initial_displacement{}; // lab frame, m
    Vec2 initial_velocity{};     // lab frame, m/s
    Integrator integrator{Integrator::exact_linear_splitting};
};

/// Sampled realisation of the displacement dr(t) and velocity, lab frame.
struct Trajectory {
    double dt{0.0};             // integration step
    std::size_t decimation{1};  // samples are dt * decimation apart
    std::uint64_t seed{0};
    std::vector<Vec2> position; // m, displacement from r0
    std::vector<Vec2> velocity; // m/s
    bool diverged{false};
    double halt_time{0.0};      // s, time of the last sample
    std::vector<std::string> warnings;

    double sample_interval() const { return dt * static_cast<double>(decimation); }
    std::size_t size() const { return position.size(); }
    /// Projection of the displacement on a unit vector.
    std::vector<double> projected(Vec2 direction) const;
    /// Projection on eigenmode i of p (0 or 1).
    std::vector<double> modal(const ModalParams& p, int mode) const;
};

/// Integrates  dr'' = -Omega^2 dr - Gamma dr' + dF_th/M + F(r0 + dr)/M  in the
/// e1/e2 frame. `field` may be null for a free oscillator. The field is
/// evaluated at the instantaneous total position. If it leaves the field's
/// domain or the state stops being finite, the run halts and the partial
/// trajectory carries diverged = true.
///
/// Requires dt <= 2 pi / (50 max Omega_i). Durations shorter than 100
/// damping periods are accepted with a warning.
Trajectory simulate_langevin(const ModalParams& params, const ForceField* field, Vec2 r0,
                             double power, const Environment& env,
                             const LangevinOptions& options);

/// Largest step accepted by simulate_langevin.
double max_time_step(const ModalParams& params);

class StaticDeflectionError : public ConvergenceError {
public:
    StaticDeflectionError(const std::string& what, double residual, Vec2 last)
        : ConvergenceError(what, residual), last_iterate_(last) {}
    Vec2 last_iterate() const noexcept { return last_iterate_; }

private:
    Vec2 last_iterate_;
};

struct StaticDeflection {
    Vec2 deflection; // lab frame, m
    int iterations{0};
};

/// Fixed point of dr = C F(r0 + dr) with C the diagonal modal compliance.
/// Damped fixed-point iteration to 1e-15 m, at most 100 iterations.
StaticDeflection static_deflection(const ModalParams& params, const ForceField& field,
                                   Vec2 r0, double power);

/// Central-difference gradient d_a F_b at r0 and the given power. h <= 0
/// selects the field's native step. Throws OutOfRangeError if r0 +- h leaves
/// the field's domain.
GradientMatrix linearize_field(const ForceField& field, Vec2 r0, double power, double h = 0.0);

/// Mechanical susceptibility chi_i(Omega) = 1 / (M (Omega_i^2 - Omega^2 - i Omega Gamma)),
/// for the time convention x(t) = Re[x(Omega) exp(-i Omega t)].
std::complex<double> susceptibility(const ModalParams& params, int mode, double omega);

/// Complex projected response vs angular frequency. `sigma` optionally holds
/// the standard deviation of additive circular complex noise per point
/// (|noise|^2 expectation).
struct ResponseSweep {
    std::vector<double> omega;                  // rad/s
    std::vector<std::complex<double>> response; // m
    std::vector<double> sigma;                  // m, empty when unknown
};

/// Deterministic driven response along e_beta to a force modulation of
/// amplitude delta_force and phase `phase`:
///   dr_beta = sum_i chi_i (dF . e_i)(e_i . e_beta) exp(i phase).
ResponseSweep driven_response_analytic(const ModalParams& params, Vec2 e_beta,
                                       Vec2 delta_force, double phase,
                                       const std::vector<double>& omegas);

/// Uniform angular-frequency grid spanning both resonances with
/// `span_linewidths` Gamma of margin and `points_per_linewidth` points per Gamma.
std::vector<double> response_frequency_grid(const ModalParams& params,
                                            double points_per_linewidth = 10.0,
                                            double span_linewidths = 10.0);

} // namespace optomech2d
