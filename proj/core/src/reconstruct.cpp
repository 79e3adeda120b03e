#include "optomech2d/reconstruct.hpp"

#include "optomech2d/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace optomech2d {

namespace {

double wrap_angle(double a) {
    a = std::remainder(a, kTwoPi);
    return a <= -kPi ? a + kTwoPi : a;
}

// Folds into (-pi/2, pi/2].
double fold_half(double a) {
    a = std::remainder(a, kPi);
    return a <= -kPi / 2 ? a + kPi : a;
}

} // namespace

SyntheticTransmission SyntheticTransmission::from_beam(const GaussianBeamField& beam, double v0) {
    return {v0, beam.waist, beam.rayleigh_range};
}

double SyntheticTransmission::value(Vec2 r) const {
    return v0 * (r.x / waist) *
           std::exp(-r.x * r.x / (waist * waist) - r.z * r.z / (2.0 * rayleigh_range * rayleigh_range));
}

Vec2 SyntheticTransmission::gradient(Vec2 r) const {
    const double e = std::exp(-r.x * r.x / (waist * waist) -
                              r.z * r.z / (2.0 * rayleigh_range * rayleigh_range));
    const double dx = v0 / waist * e * (1.0 - 2.0 * r.x * r.x / (waist * waist));
    const double dz = -v0 * (r.x / waist) * e * r.z / (rayleigh_range * rayleigh_range);
    return {dx, dz};
}

TransmissionMap SyntheticTransmission::tabulate(const RectGrid& grid) const {
    TransmissionMap map;
    map.grid = grid;
    map.values.resize(grid.size());
    for (std::size_t n = 0; n < grid.size(); ++n) map.values[n] = value(grid.node(n));
    return map;
}

MeasurementVector measurement_vector(const TransmissionMap& map, Vec2 r0, double beta_floor) {
    const double h = map.grid.min_step();
    const Vec2 dx{h, 0.0}, dz{0.0, h};
    for (Vec2 p : {r0 + dx, r0 - dx, r0 + dz, r0 - dz})
        if (!map.grid.contains(p))
            throw OutOfRangeError("readout point is not interior to the transmission map");
    const Vec2 beta{(map.value(r0 + dx) - map.value(r0 - dx)) / (2.0 * h),
                    (map.value(r0 + dz) - map.value(r0 - dz)) / (2.0 * h)};
    if (beta_floor <= 0.0) {
        double vmax = 0.0;
        for (double v : map.values) vmax = std::max(vmax, std::abs(v));
        beta_floor = 1e-9 * vmax / h;
    }
    if (!beta.finite() || !(beta.norm() > beta_floor))
        throw DegenerateReadoutError("readout gradient below floor: no projective sensitivity here");
    return {beta, r0};
}

SyntheticMeasurement synthesize_measurement(const ModalParams& params, const ForceField& field,
                                            Vec2 r0, const MeasurementVector& beta,
                                            const MeasurementProtocol& protocol,
                                            const std::vector<double>& omegas,
                                            const Environment& env, std::uint64_t seed) {
    if (!(protocol.delta_p_over_p > 0.0 && protocol.delta_p_over_p <= 1.0))
        throw InvalidArgument("delta_p_over_p must be in (0, 1]");
    if (!(protocol.power > 0.0)) throw InvalidArgument("protocol power must be > 0");
    if (!(protocol.noise_scale >= 0.0)) throw InvalidArgument("noise_scale must be >= 0");
    if (!(beta.magnitude() > 0.0)) throw DegenerateReadoutError("zero readout vector");
    const Vec2 e_beta = beta.direction();

    SyntheticMeasurement out;
    const Vec2 F0 = field.force(r0, protocol.power);
    if (!F0.finite()) throw OutOfRangeError("field is not finite at the measurement point");
    out.delta_force = F0 * protocol.delta_p_over_p;
    out.sweep = driven_response_analytic(params, e_beta, out.delta_force, 0.0, omegas);
    out.bandwidth_hz = protocol.bandwidth_hz > 0.0 ? protocol.bandwidth_hz
                                                   : params.gamma / kTwoPi / 20.0;

    if (protocol.noise_scale > 0.0) {
        const double force_var =
            thermal_force_psd_one_sided(params, env) * out.bandwidth_hz *
            protocol.noise_scale * protocol.noise_scale;
        const double proj[2] = {dot(params.e1(), e_beta), dot(params.e2(), e_beta)};
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, std::sqrt(0.5 * force_var));
        out.sweep.sigma.resize(omegas.size());
        for (std::size_t k = 0; k < omegas.size(); ++k) {
            double var = 0.0;
            for (int i = 0; i < 2; ++i) {
                const std::complex<double> chi = susceptibility(params, i, omegas[k]);
                const double re = normal(rng);
                const double im = normal(rng);
                out.sweep.response[k] += chi * proj[i] * std::complex<double>(re, im);
                var += std::norm(chi) * proj[i] * proj[i] * force_var;
            }
            out.sweep.sigma[k] = std::sqrt(var);
        }
    }

    std::vector<double> freqs(omegas.size());
    std::transform(omegas.begin(), omegas.end(), freqs.begin(),
                   [](double w) { return w / kTwoPi; });
    out.brownian = analytic_projected_psd(params, e_beta, freqs, env);
    return out;
}

namespace {

struct Derived {
    double magnitude, direction, phase, fx, fz, spread;
    std::array<std::complex<double>, 2> projection;
};

Derived derive(const Eigen::Vector4d& c, const std::array<double, 2>& proj,
               const ModalParams& params) {
    Derived d{};
    const std::array<std::complex<double>, 2> C{std::complex<double>(c(0), c(1)),
                                                 std::complex<double>(c(2), c(3))};
    std::complex<double> doubled{};
    for (std::size_t i = 0; i < 2; ++i) {
        d.projection[i] = C[i] / proj[i];
        doubled += std::abs(d.projection[i]) * std::polar(1.0, 2.0 * std::arg(d.projection[i]));
    }
    d.phase = std::abs(doubled) > 0.0 ? fold_half(0.5 * std::arg(doubled)) : 0.0;
    const std::complex<double> rot = std::polar(1.0, -d.phase);
    const double f1 = std::real(d.projection[0] * rot);
    const double f2 = std::real(d.projection[1] * rot);
    const Vec2 F = f1 * params.e1() + f2 * params.e2();
    d.fx = F.x;
    d.fz = F.z;
    d.magnitude = F.norm();
    d.direction = std::atan2(F.z, F.x);
    d.spread = (std::abs(d.projection[0]) > 0.0 && std::abs(d.projection[1]) > 0.0)
                   ? fold_half(std::arg(d.projection[1]) - std::arg(d.projection[0]))
                   : 0.0;
    return d;
}

} // namespace

ForceMeasurement fit_force(const ResponseSweep& sweep, const ModalParams& params,
                           const MeasurementVector& beta) {
    const std::size_t n = sweep.omega.size();
    if (n < 4 || sweep.response.size() != n) throw InvalidArgument("sweep needs >= 4 points");
    const bool weighted = sweep.sigma.size() == n &&
                          std::all_of(sweep.sigma.begin(), sweep.sigma.end(),
                                      [](double s) { return s > 0.0; });
    const Vec2 e_beta = beta.direction();
    const std::array<double, 2> proj{dot(params.e1(), e_beta), dot(params.e2(), e_beta)};
    for (int i = 0; i < 2; ++i)
        if (std::abs(proj[static_cast<std::size_t>(i)]) < 0.05)
            throw PartialResultError(
                std::string("force projection on e") + char('1' + i) +
                    " is unconstrained: readout nearly perpendicular to that mode",
                i);

    Eigen::MatrixXd A(2 * n, 4);
    Eigen::VectorXd y(2 * n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::complex<double> c1 = susceptibility(params, 0, sweep.omega[k]);
        const std::complex<double> c2 = susceptibility(params, 1, sweep.omega[k]);
        const double w = weighted ? std::sqrt(2.0) / sweep.sigma[k] : 1.0;
        const auto r = static_cast<Eigen::Index>(2 * k);
        A.row(r) << c1.real(), -c1.imag(), c2.real(), -c2.imag();
        A.row(r + 1) << c1.imag(), c1.real(), c2.imag(), c2.real();
        A.row(r) *= w;
        A.row(r + 1) *= w;
        y(r) = w * sweep.response[k].real();
        y(r + 1) = w * sweep.response[k].imag();
    }
    // Column scaling keeps the normal matrix well conditioned.
    Eigen::Vector4d scale;
    for (int c = 0; c < 4; ++c) scale(c) = A.col(c).norm();
    if (!(scale.minCoeff() > 0.0)) throw InvalidArgument("sweep does not constrain both modes");
    const Eigen::MatrixXd As = A * scale.cwiseInverse().asDiagonal();
    const auto qr = As.colPivHouseholderQr();
    if (qr.rank() < 4) throw PartialResultError("sweep does not resolve both modal amplitudes", 0);
    const Eigen::Vector4d cs = qr.solve(y);
    const Eigen::Vector4d c = cs.cwiseQuotient(scale);

    const Eigen::Matrix4d normal_s = As.transpose() * As;
    Eigen::Matrix4d cov_s = normal_s.inverse();
    if (!weighted) {
        const double rss = (As * cs - y).squaredNorm();
        cov_s *= rss / static_cast<double>(2 * n - 4);
    }
    const Eigen::Matrix4d cov =
        scale.cwiseInverse().asDiagonal() * cov_s * scale.cwiseInverse().asDiagonal();

    const Derived d = derive(c, proj, params);
    ForceMeasurement m;
    m.magnitude = d.magnitude;
    m.direction = d.direction;
    m.phase = d.phase;
    m.phase_spread = d.spread;
    m.amplitude = {std::complex<double>(c(0), c(1)), std::complex<double>(c(2), c(3))};
    m.projection = d.projection;
    m.covariance = cov;

    // Linear propagation through a numerical Jacobian.
    Eigen::Matrix<double, 5, 4> J;
    const double h_base = 1e-7 * std::max(c.cwiseAbs().maxCoeff(), 1e-300);
    for (int k = 0; k < 4; ++k) {
        Eigen::Vector4d cp = c, cm = c;
        cp(k) += h_base;
        cm(k) -= h_base;
        const Derived a = derive(cp, proj, params);
        const Derived b = derive(cm, proj, params);
        J(0, k) = (a.magnitude - b.magnitude) / (2 * h_base);
        J(1, k) = wrap_angle(a.direction - b.direction) / (2 * h_base);
        J(2, k) = fold_half(a.phase - b.phase) / (2 * h_base);
        J(3, k) = (a.fx - b.fx) / (2 * h_base);
        J(4, k) = (a.fz - b.fz) / (2 * h_base);
    }
    const Eigen::Matrix<double, 5, 5> out_cov = J * cov * J.transpose();
    m.sigma_magnitude = std::sqrt(std::max(out_cov(0, 0), 0.0));
    m.sigma_direction = std::sqrt(std::max(out_cov(1, 1), 0.0));
    m.sigma_phase = std::sqrt(std::max(out_cov(2, 2), 0.0));
    const Eigen::Matrix2d force_cov = out_cov.block<2, 2>(3, 3);
    const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(force_cov).eigenvalues().maxCoeff();
    m.snr = lmax > 0.0 ? m.magnitude / std::sqrt(lmax) : std::numeric_limits<double>::infinity();
    return m;
}

std::size_t ForceMap::gaps() const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return !n.has_value(); }));
}

ForceMap map_force_field(const ModalParams& params, const ForceField& field,
                         const TransmissionMap& tmap, const RectGrid& grid,
                         const ForceMapOptions& options, const Environment& env,
                         std::uint64_t seed) {
    params.validate();
    grid.validate();
    const auto& protocol = options.protocol;
    const std::vector<double> omegas = response_frequency_grid(
        params, protocol.points_per_linewidth, protocol.span_linewidths);

    ForceMap out;
    out.grid = grid;
    out.nodes.resize(grid.size());
    out.gap_reason.resize(grid.size());
    out.truth.resize(grid.size());
    out.readout_overlap.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
    parallel_for(grid.size(), options.threads, [&](std::size_t n) {
        const Vec2 r = grid.node(n);
        out.truth[n] = field.force(r, protocol.power) * protocol.delta_p_over_p;
        try {
            const MeasurementVector beta = measurement_vector(tmap, r, options.beta_floor);
            out.readout_overlap[n] = std::abs(dot(params.e1(), beta.direction()));
            const SyntheticMeasurement sm = synthesize_measurement(
                params, field, r, beta, protocol, omegas, env, task_seed(seed, n));
            out.nodes[n] = fit_force(sm.sweep, params, beta);
        } catch (const DegenerateReadoutError& e) {
            out.gap_reason[n] = e.what();
        } catch (const PartialResultError& e) {
            out.gap_reason[n] = e.what();
        }
    });

    if (options.compare_to_truth) {
        ForceErrorStats stats;
        double sum_angle = 0.0, sum_mag = 0.0;
        for (std::size_t n = 0; n < grid.size(); ++n) {
            if (!out.nodes[n]) continue;
            const ForceMeasurement& m = *out.nodes[n];
            const Vec2 t = out.truth[n];
            ++stats.n_measured;
            stats.max_relative_error =
                std::max(stats.max_relative_error, (m.force() - t).norm() / t.norm());
            if (!(m.snr > options.snr_threshold)) continue;
            const double da = wrap_angle(m.direction - std::atan2(t.z, t.x));
            const double dm = (m.magnitude - t.norm()) / t.norm();
            sum_angle += da * da;
            sum_mag += dm * dm;
            ++stats.n_used;
        }
        if (stats.n_used > 0) {
            stats.rms_angle_error = std::sqrt(sum_angle / static_cast<double>(stats.n_used));
            stats.rms_magnitude_error = std::sqrt(sum_mag / static_cast<double>(stats.n_used));
        }
        out.stats = stats;
    }
    return out;
}

PauliMaps pauli_maps(const RectGrid& grid, const std::vector<Vec2>& forces) {
    if (forces.size() != grid.size()) throw InvalidArgument("force vector does not match grid");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    PauliMaps out;
    out.c0.assign(grid.size(), nan);
    out.cx.assign(grid.size(), nan);
    out.cy.assign(grid.size(), nan);
    out.cz.assign(grid.size(), nan);
    const std::size_t nx = grid.nx(), nz = grid.nz();
    if (nx < 2 || nz < 2) return out;
    for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < nz; ++j) {
            const std::size_t i0 = i == 0 ? 0 : i - 1, i1 = i + 1 == nx ? i : i + 1;
            const std::size_t j0 = j == 0 ? 0 : j - 1, j1 = j + 1 == nz ? j : j + 1;
            const Vec2 dFx = (forces[grid.index(i1, j)] - forces[grid.index(i0, j)]) /
                             (grid.x[i1] - grid.x[i0]);
            const Vec2 dFz = (forces[grid.index(i, j1)] - forces[grid.index(i, j0)]) /
                             (grid.z[j1] - grid.z[j0]);
            if (!dFx.finite() || !dFz.finite()) continue;
            const PauliDecomposition p = pauli_decompose({dFx.x, dFx.z, dFz.x, dFz.z});
            const std::size_t n = grid.index(i, j);
            out.c0[n] = p.c0;
            out.cx[n] = p.cx;
            out.cy[n] = p.cy;
            out.cz[n] = p.cz;
        }
    return out;
}

double map_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw InvalidArgument("maps differ in size");
    double sa = 0, sb = 0, n = 0;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (std::isfinite(a[k]) && std::isfinite(b[k])) {
            sa += a[k];
            sb += b[k];
            n += 1;
        }
    if (n < 2) throw InvalidArgument("fewer than two common finite entries");
    const double ma = sa / n, mb = sb / n;
    double cab = 0, caa = 0, cbb = 0;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (std::isfinite(a[k]) && std::isfinite(b[k])) {
            cab += (a[k] - ma) * (b[k] - mb);
            caa += (a[k] - ma) * (a[k] - ma);
            cbb += (b[k] - mb) * (b[k] - mb);
        }
    return cab / std::sqrt(caa * cbb);
}

namespace {

std::size_t next_power_of_two(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

SpectrumEstimate frequency_domain_spectrum(const ModalParams& params, const EffectiveStiffness& K,
                                           const StabilityReport& st, Vec2 e_beta,
                                           const Environment& env, const SplittingOptions& opt,
                                           std::uint64_t seed) {
    const double df = params.gamma / kTwoPi / opt.bins_per_linewidth;
    const double lo = std::max(st.omega_minus - 40.0 * params.gamma, 0.0) / kTwoPi;
    const double hi = (st.omega_plus + 40.0 * params.gamma) / kTwoPi;
    const auto n = static_cast<std::size_t>(std::ceil((hi - lo) / df)) + 1;
    std::vector<double> freqs(n);
    for (std::size_t k = 0; k < n; ++k) freqs[k] = lo + df * static_cast<double>(k);
    SpectrumEstimate s = coupled_projected_psd(params, K, e_beta, freqs, env);
    std::mt19937_64 rng(seed);
    std::gamma_distribution<double> scatter(opt.n_segments, 1.0 / opt.n_segments);
    for (double& v : s.psd) v *= scatter(rng);
    s.n_segments = opt.n_segments;
    s.frequency_step = df;
    s.resolution_bw = 1.5 * df; // Hann equivalent noise bandwidth in bins
    return s;
}

SpectrumEstimate time_domain_spectrum(const ModalParams& params, const ForceField& field,
                                      Vec2 r0, double power, Vec2 e_beta,
                                      const Environment& env, const SplittingOptions& opt,
                                      std::uint64_t seed) {
    const double dt = max_time_step(params);
    const double f_max = std::max(params.omega1, params.omega2) / kTwoPi;
    const auto decimation = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(1.0 / (2.5 * f_max * dt))));
    const double ts = dt * static_cast<double>(decimation);
    std::size_t L = opt.segment_len;
    if (L == 0)
        L = next_power_of_two(static_cast<std::size_t>(
            std::ceil(opt.bins_per_linewidth * kTwoPi / (params.gamma * ts))));
    const std::size_t samples = (static_cast<std::size_t>(opt.n_segments) + 1) * L / 2;

    LangevinOptions lo;
    lo.dt = dt;
    lo.decimation = decimation;
    lo.seed = seed;
    lo.duration = static_cast<double>(samples * decimation) * dt;
    lo.initial_displacement = static_deflection(params, field, r0, power).deflection;
    const Trajectory traj = simulate_langevin(params, &field, r0, power, env, lo);
    if (traj.diverged) throw ConvergenceError("Brownian simulation diverged", 0.0);
    const std::vector<double> series = traj.projected(e_beta);
    return welch_psd(series, ts, L, 0.5);
}

} // namespace

SplittingComparison splitting_comparison(const ModalParams& params, const ForceField& field,
                                         const RectGrid& grid, double power,
                                         const Environment& env, std::uint64_t seed,
                                         const SplittingOptions& options) {
    params.validate();
    env.validate();
    grid.validate();
    if (!(power >= 0.0)) throw InvalidArgument("power must be >= 0");
    const Vec2 e_beta = options.e_beta.value_or((params.e1() + params.e2()) / std::sqrt(2.0));

    SplittingComparison out;
    out.grid = grid;
    out.direct.resize(grid.size());
    out.predicted.resize(grid.size());
    out.excluded.resize(grid.size());
    out.bare_splitting = std::abs(params.omega2 - params.omega1);

    parallel_for(grid.size(), options.threads, [&](std::size_t n) {
        const Vec2 r = grid.node(n);
        const EffectiveStiffness K =
            effective_stiffness(params, linearize_field(field, r, power));
        const StabilityReport st = exact_modes(params, K);
        if (st.unstable) {
            out.excluded[n] = "unstable";
            return;
        }
        out.predicted[n] = st.splitting.real();
        if (!(st.splitting.real() > 0.0)) {
            out.excluded[n] = "complex splitting: predicted frequency splitting is zero";
            return;
        }
        try {
            const SpectrumEstimate s =
                options.source == SpectrumSource::frequency_domain
                    ? frequency_domain_spectrum(params, K, st, e_beta, env, options,
                                                task_seed(seed, n))
                    : time_domain_spectrum(params, field, r, power, e_beta, env, options,
                                           task_seed(seed, n));
            const DoubletFit fit = fit_doublet(s, params.mass, env);
            if (fit.merged) {
                out.excluded[n] = "merged doublet";
                return;
            }
            out.direct[n] = fit.omega_plus - fit.omega_minus;
        } catch (const Error& e) {
            out.excluded[n] = e.what();
        }
    });

    double sum_rel = 0.0, sum_diff = 0.0, sum_shift = 0.0;
    for (std::size_t n = 0; n < grid.size(); ++n) {
        if (!out.direct[n] || !out.predicted[n]) continue;
        const double d = *out.direct[n], p = *out.predicted[n];
        sum_rel += (d - p) * (d - p) / (p * p);
        sum_diff += (d - p) * (d - p);
        sum_shift += (p - out.bare_splitting) * (p - out.bare_splitting);
        ++out.n_used;
        if (d < out.bare_splitting && p < out.bare_splitting) ++out.n_below_bare;
    }
    if (out.n_used > 0) {
        out.rms_relative_deviation = std::sqrt(sum_rel / static_cast<double>(out.n_used));
        out.rms_shift_deviation = sum_shift > 0.0 ? std::sqrt(sum_diff / sum_shift)
                                                  : std::numeric_limits<double>::infinity();
    }
    return out;
}

} // namespace optomech2d
