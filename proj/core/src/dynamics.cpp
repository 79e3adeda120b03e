#include "optomech2d/dynamics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

namespace optomech2d {

std::vector<double> Trajectory::projected(Vec2 direction) const {
    std::vector<double> out(position.size());
    std::transform(position.begin(), position.end(), out.begin(),
                   [direction](Vec2 r) { return dot(r, direction); });
    return out;
}

std::vector<double> Trajectory::modal(const ModalParams& p, int mode) const {
    return projected(p.mode_direction(mode));
}

double max_time_step(const ModalParams& params) {
    return kTwoPi / (50.0 * std::max(params.omega1, params.omega2));
}

namespace {

// Exact one-step propagator of a damped mode and the Cholesky factor of the
// noise it accumulates over the step.
struct ModePropagator {
    double phi[2][2]{};
    double chol[2][2]{}; // lower triangular

    ModePropagator(double omega, double gamma, double mass, double temperature, double dt) {
        const std::complex<double> wd = std::sqrt(std::complex<double>(
            omega * omega - 0.25 * gamma * gamma, 0.0));
        const double c = std::real(std::cos(wd * dt));
        const double s = std::abs(wd) < 1e-300 ? dt : std::real(std::sin(wd * dt) / wd);
        const double decay = std::exp(-0.5 * gamma * dt);
        phi[0][0] = decay * (c + 0.5 * gamma * s);
        phi[0][1] = decay * s;
        phi[1][0] = -decay * omega * omega * s;
        phi[1][1] = decay * (c - 0.5 * gamma * s);

        if (temperature <= 0.0) return;
        // Sigma = C - Phi C Phi^T with C the stationary covariance.
        const double cq = kBoltzmann * temperature / (mass * omega * omega);
        const double cv = kBoltzmann * temperature / mass;
        const double s00 = cq - (phi[0][0] * phi[0][0] * cq + phi[0][1] * phi[0][1] * cv);
        const double s01 = -(phi[0][0] * phi[1][0] * cq + phi[0][1] * phi[1][1] * cv);
        const double s11 = cv - (phi[1][0] * phi[1][0] * cq + phi[1][1] * phi[1][1] * cv);
        chol[0][0] = std::sqrt(std::max(s00, 0.0));
        chol[1][0] = chol[0][0] > 0.0 ? s01 / chol[0][0] : 0.0;
        chol[1][1] = std::sqrt(std::max(s11 - chol[1][0] * chol[1][0], 0.0));
    }
};

} // namespace

Trajectory simulate_langevin(const ModalParams& params, const ForceField* field, Vec2 r0,
                             double power, const Environment& env,
                             const LangevinOptions& options) {
    params.validate();
    env.validate();
    const double dt = options.dt;
    if (!(dt > 0.0) || dt > max_time_step(params) * (1.0 + 1e-12))
        throw InvalidArgument("dt must be in (0, 2 pi / (50 max Omega_i)]");
    if (!(options.duration > 0.0)) throw InvalidArgument("duration must be > 0");
    if (options.decimation == 0) throw InvalidArgument("decimation must be >= 1");
    if (!(power >= 0.0)) throw InvalidArgument("power must be >= 0");

    const auto n_steps = static_cast<std::size_t>(std::llround(options.duration / dt));
    if (n_steps / options.decimation < 1)
        throw InvalidArgument("duration too short for two samples at this decimation");

    Trajectory traj;
    traj.dt = dt;
    traj.decimation = options.decimation;
    traj.seed = options.seed;
    if (options.duration < 100.0 * kTwoPi / params.gamma)
        traj.warnings.push_back(
            "duration shorter than 100 damping periods; spectra will be resolution limited");

    const std::size_t n_samples = n_steps / options.decimation + 1;
    traj.position.reserve(n_samples);
    traj.velocity.reserve(n_samples);

    const Vec2 e1 = params.e1();
    const Vec2 e2 = params.e2();
    const double inv_mass = 1.0 / params.mass;
    const std::array<double, 2> omega2{params.omega1 * params.omega1,
                                       params.omega2 * params.omega2};

    std::array<double, 2> q{dot(options.initial_displacement, e1),
                            dot(options.initial_displacement, e2)};
    std::array<double, 2> v{dot(options.initial_velocity, e1),
                            dot(options.initial_velocity, e2)};

    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool thermal = env.temperature > 0.0;

    // Modal force (N) at the current displacement; false when the field
    // cannot be evaluated there.
    auto modal_force = [&](std::array<double, 2>& f) -> bool {
        if (field == nullptr) {
            f = {0.0, 0.0};
            return true;
        }
        const Vec2 r = r0 + q[0] * e1 + q[1] * e2;
        if (!r.finite() || !field->contains(r)) return false;
        const Vec2 F = field->force(r, power);
        f = {dot(F, e1), dot(F, e2)};
        return std::isfinite(f[0]) && std::isfinite(f[1]);
    };

    auto record = [&] {
        traj.position.push_back(q[0] * e1 + q[1] * e2);
        traj.velocity.push_back(v[0] * e1 + v[1] * e2);
    };

    std::array<double, 2> force{};
    record();
    if (!modal_force(force)) {
        traj.diverged = true;
        return traj;
    }

    const bool exact = options.integrator == Integrator::exact_linear_splitting;
    const std::array<ModePropagator, 2> prop{
        ModePropagator(params.omega1, params.gamma, params.mass, env.temperature, dt),
        ModePropagator(params.omega2, params.gamma, params.mass, env.temperature, dt)};
    const double kick_noise =
        std::sqrt(2.0 * params.gamma * kBoltzmann * env.temperature * inv_mass * dt);

    std::size_t halted_at = n_steps;
    for (std::size_t step = 1; step <= n_steps; ++step) {
        halted_at = step;
        if (exact) {
            for (int i = 0; i < 2; ++i) {
                v[i] += 0.5 * dt * force[i] * inv_mass;
                const auto& P = prop[i];
                const double qn = P.phi[0][0] * q[i] + P.phi[0][1] * v[i];
                const double vn = P.phi[1][0] * q[i] + P.phi[1][1] * v[i];
                q[i] = qn;
                v[i] = vn;
                if (thermal) {
                    const double a = normal(rng);
                    const double b = normal(rng);
                    q[i] += P.chol[0][0] * a;
                    v[i] += P.chol[1][0] * a + P.chol[1][1] * b;
                }
            }
            if (!modal_force(force)) break;
            for (int i = 0; i < 2; ++i) v[i] += 0.5 * dt * force[i] * inv_mass;
        } else {
            for (int i = 0; i < 2; ++i) {
                v[i] += (-omega2[i] * q[i] - params.gamma * v[i] + force[i] * inv_mass) * dt;
                if (thermal) v[i] += kick_noise * normal(rng);
                q[i] += v[i] * dt;
            }
            if (!modal_force(force)) break;
        }
        if (!std::isfinite(q[0]) || !std::isfinite(q[1])) break;
        if (step % options.decimation == 0) record();
        if (step == n_steps) {
            traj.halt_time = static_cast<double>(traj.size() - 1) * traj.sample_interval();
            return traj;
        }
    }
    traj.diverged = true;
    traj.halt_time = static_cast<double>(halted_at) * dt;
    return traj;
}

StaticDeflection static_deflection(const ModalParams& params, const ForceField& field,
                                   Vec2 r0, double power) {
    params.validate();
    const Vec2 e1 = params.e1();
    const Vec2 e2 = params.e2();
    auto map = [&](Vec2 d) {
        const Vec2 F = field.force(r0 + d, power);
        if (!F.finite()) throw OutOfRangeError("field is not finite near the rest position");
        return (dot(F, e1) / params.stiffness(0)) * e1 + (dot(F, e2) / params.stiffness(1)) * e2;
    };
    constexpr double kTolerance = 1e-15;
    constexpr int kMaxIterations = 100;

    Vec2 current{};
    double relax = 1.0;
    double last_residual = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= kMaxIterations; ++it) {
        if (!field.contains(r0 + current))
            throw StaticDeflectionError("static deflection left the field domain",
                                        last_residual, current);
        const Vec2 target = map(current);
        const double residual = (target - current).norm();
        if (residual < kTolerance) return {current, it - 1};
        if (residual > last_residual) relax = std::max(relax * 0.5, 1.0 / 64.0);
        last_residual = residual;
        const Vec2 next = current + relax * (target - current);
        if ((next - current).norm() < kTolerance) return {next, it};
        current = next;
    }
    throw StaticDeflectionError("static deflection did not converge in 100 iterations",
                                last_residual, current);
}

GradientMatrix linearize_field(const ForceField& field, Vec2 r0, double power, double h) {
    if (h <= 0.0) h = field.native_step();
    const Vec2 dx{h, 0.0};
    const Vec2 dz{0.0, h};
    for (Vec2 p : {r0 + dx, r0 - dx, r0 + dz, r0 - dz})
        if (!field.contains(p))
            throw OutOfRangeError("finite-difference stencil leaves the field domain");
    const Vec2 gx = (field.force(r0 + dx, power) - field.force(r0 - dx, power)) / (2.0 * h);
    const Vec2 gz = (field.force(r0 + dz, power) - field.force(r0 - dz, power)) / (2.0 * h);
    return {gx.x, gx.z, gz.x, gz.z};
}

std::complex<double> susceptibility(const ModalParams& params, int mode, double omega) {
    const double w = params.omega(mode);
    return 1.0 / (params.mass * std::complex<double>(w * w - omega * omega, -omega * params.gamma));
}

ResponseSweep driven_response_analytic(const ModalParams& params, Vec2 e_beta,
                                       Vec2 delta_force, double phase,
                                       const std::vector<double>& omegas) {
    if (std::abs(e_beta.norm() - 1.0) > 1e-9)
        throw InvalidArgument("e_beta must be a unit vector");
    const std::complex<double> rot = std::polar(1.0, phase);
    std::array<std::complex<double>, 2> drive{};
    for (int i = 0; i < 2; ++i) {
        const Vec2 ei = params.mode_direction(i);
        drive[static_cast<std::size_t>(i)] = dot(delta_force, ei) * dot(ei, e_beta) * rot;
    }
    ResponseSweep sweep;
    sweep.omega = omegas;
    sweep.response.resize(omegas.size());
    for (std::size_t k = 0; k < omegas.size(); ++k)
        sweep.response[k] = susceptibility(params, 0, omegas[k]) * drive[0] +
                            susceptibility(params, 1, omegas[k]) * drive[1];
    return sweep;
}

std::vector<double> response_frequency_grid(const ModalParams& params,
                                            double points_per_linewidth,
                                            double span_linewidths) {
    if (!(points_per_linewidth > 0.0) || !(span_linewidths >= 0.0))
        throw InvalidArgument("frequency grid density and span must be positive");
    const double lo = std::min(params.omega1, params.omega2) - span_linewidths * params.gamma;
    const double hi = std::max(params.omega1, params.omega2) + span_linewidths * params.gamma;
    const double step = params.gamma / points_per_linewidth;
    const auto n = static_cast<std::size_t>(std::ceil((hi - lo) / step)) + 1;
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = std::max(lo + step * static_cast<double>(k), 0.0);
    return out;
}

} // namespace optomech2d
