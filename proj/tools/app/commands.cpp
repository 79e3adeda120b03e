#include "commands.hpp"

#include "optomech2d/backaction.hpp"
#include "optomech2d/dynamics.hpp"
#include "optomech2d/reconstruct.hpp"
#include "optomech2d/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

namespace optomech2d::cli {

using nlohmann::json;

namespace {

constexpr double kUm = 1e-6;
constexpr double kNm = 1e-9;
constexpr double kFn = 1e-15;
constexpr double kUw = 1e-6;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double hz(double omega) { return omega / kTwoPi; }
double deg(double rad) { return rad * 180.0 / kPi; }

// nlohmann writes NaN as null already; this keeps intent visible at call sites
json maybe(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json um_pair(Vec2 r) { return json::array({r.x / kUm, r.z / kUm}); }

Vec2 readout_direction(const ModalParams& p, const std::optional<double>& angle) {
    if (angle) return unit_vector(*angle);
    return (p.e1() + p.e2()) / std::sqrt(2.0);
}

ForceField require_field(const RunConfig& c, const char* command) {
    auto f = c.make_field();
    if (!f) throw ConfigError("beam.model", std::string(command) + " needs a force field");
    return *f;
}

double variance(const std::vector<double>& v) {
    if (v.size() < 2) return kNan;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s / static_cast<double>(v.size() - 1);
}

json doublet_json(const DoubletFit& f) {
    return {{"f_minus_hz", hz(f.omega_minus)},
            {"f_plus_hz", hz(f.omega_plus)},
            {"splitting_hz", hz(f.omega_plus - f.omega_minus)},
            {"linewidth_minus_hz", hz(f.gamma_minus)},
            {"linewidth_plus_hz", hz(f.gamma_plus)},
            {"area_minus_m2", f.area_minus},
            {"area_plus_m2", f.area_plus},
            {"projected_energy_minus_j", f.projected_energy_minus},
            {"projected_energy_plus_j", f.projected_energy_plus},
            {"floor_m2_per_hz", f.floor},
            {"residual", f.residual},
            {"merged", f.merged},
            {"iterations", f.iterations}};
}

json try_fit(const SpectrumEstimate& spec, const RunConfig& c) {
    try {
        return doublet_json(fit_doublet(spec, c.device.mass, c.env));
    } catch (const NoResonanceError& e) {
        return {{"error", e.what()}};
    } catch (const ConvergenceError& e) {
        return {{"error", e.what()}};
    }
}

void write_spectrum(const ArtifactWriter& w, const std::string& name, const SpectrumEstimate& s) {
    auto out = w.csv(name, "freq_Hz,psd_m2_per_Hz");
    for (std::size_t k = 0; k < s.freqs.size(); ++k) out << num(s.freqs[k]) << ',' << num(s.psd[k]) << '\n';
}

json modes_json(const StabilityReport& r) {
    json ell = json::array();
    for (const auto& e : r.ellipses)
        ell.push_back({{"minor_over_major", e.minor},
                       {"orientation_deg", deg(e.orientation)},
                       {"handedness", e.handedness}});
    return {{"f_minus_hz", hz(r.omega_minus)},
            {"f_plus_hz", hz(r.omega_plus)},
            {"linewidth_minus_hz", hz(r.gamma_minus)},
            {"linewidth_plus_hz", hz(r.gamma_plus)},
            {"splitting_re_hz", hz(r.splitting.real())},
            {"splitting_im_hz", hz(r.splitting.imag())},
            {"unstable", r.unstable},
            {"ellipses", ell}};
}

json contours_json(const std::vector<std::vector<Vec2>>& contours) {
    json j = json::array();
    for (const auto& line : contours) {
        json pts = json::array();
        for (Vec2 r : line) pts.push_back(um_pair(r));
        j.push_back(pts);
    }
    return j;
}

// Largest power of two <= n, at least 2.
std::size_t pow2_floor(std::size_t n) {
    std::size_t p = 2;
    while (p * 2 <= n) p *= 2;
    return p;
}

// Coefficient of determination of a least-squares line.
double linear_r2(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    if (x.size() < 3) return kNan;
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxx += (x[k] - mx) * (x[k] - mx);
        sxy += (x[k] - mx) * (y[k] - my);
        syy += (y[k] - my) * (y[k] - my);
    }
    if (syy == 0.0 || sxx == 0.0) return kNan;
    return sxy * sxy / (sxx * syy);
}

int assertion_result(const Context& ctx, const std::vector<std::string>& failures) {
    if (!ctx.assert_mode) return exit_ok;
    for (const auto& f : failures) std::cerr << "assertion failed: " << f << '\n';
    return failures.empty() ? exit_ok : exit_assertion;
}

} // namespace

int cmd_simulate(const Context& ctx) {
    const RunConfig& c = ctx.config;
    const auto& s = c.simulation;
    const ModalParams& p = c.device;
    const auto field = c.make_field();
    const Vec2 r0 = s.position;

    Vec2 deflection{};
    if (field) {
        if (!field->contains(r0))
            throw ConfigError("simulation.position_um", "outside the force field's domain");
        deflection = static_deflection(p, *field, r0, c.power).deflection;
    }
    LangevinOptions opt{.dt = s.dt,
                        .duration = s.duration,
                        .seed = s.seed,
                        .decimation = s.decimation,
                        .initial_displacement = deflection + s.initial_displacement,
                        .initial_velocity = {},
                        .integrator = s.integrator};
    const Trajectory tr = simulate_langevin(p, field ? &*field : nullptr, r0, c.power, c.env, opt);
    const double ts = tr.sample_interval();

    if (s.write_trajectory) {
        auto out = ctx.out.csv("trajectory.csv", "t_s,x_nm,z_nm");
        for (std::size_t k = 0; k < tr.size(); k += s.trajectory_stride)
            out << num(static_cast<double>(k) * ts) << ',' << num(tr.position[k].x / kNm) << ','
                << num(tr.position[k].z / kNm) << '\n';
    }

    json summary;
    summary["samples"] = tr.size();
    summary["sample_interval_s"] = ts;
    summary["diverged"] = tr.diverged;
    summary["halt_time_s"] = tr.halt_time;
    summary["warnings"] = tr.warnings;
    summary["static_deflection_nm"] = {deflection.x / kNm, deflection.z / kNm};

    std::vector<std::string> failures;
    json modes = json::array();
    for (int i = 0; i < 2; ++i) {
        const double var = variance(tr.modal(p, i));
        const double expected = equipartition_variance(p, i, c.env);
        const double rel = expected > 0.0 ? var / expected - 1.0 : kNan;
        modes.push_back({{"mode", i + 1},
                         {"variance_m2", maybe(var)},
                         {"equipartition_m2", expected},
                         {"relative_deviation", maybe(rel)}});
        if (expected > 0.0 && !(std::abs(rel) <= 0.05))
            failures.push_back("mode " + std::to_string(i + 1) +
                               " variance off equipartition by more than 5%");
    }
    summary["modes"] = modes;

    const Vec2 e_beta = readout_direction(p, s.readout_angle);
    const auto series = tr.projected(e_beta);
    if (series.size() >= 16) {
        const std::size_t L = std::min(s.segment_len, pow2_floor(series.size()));
        const SpectrumEstimate spec = welch_psd(series, ts, L, s.overlap);
        write_spectrum(ctx.out, "spectrum.csv", spec);
        summary["spectrum"] = {{"readout_direction", {e_beta.x, e_beta.z}},
                               {"segment_len", L},
                               {"n_segments", spec.n_segments},
                               {"resolution_bw_hz", spec.resolution_bw},
                               {"integrated_power_m2", spec.integrated_power()},
                               {"windowed_variance_m2", spec.windowed_variance}};
        summary["doublet"] = try_fit(spec, c);
    } else {
        summary["spectrum"] = nullptr;
    }
    ctx.out.json("simulate_summary.json", summary);

    std::cout << "simulate: " << tr.size() << " samples, variance/equipartition = "
              << num(modes[0]["relative_deviation"].is_null() ? kNan
                                                               : 1.0 + modes[0]["relative_deviation"].get<double>())
              << ", "
              << num(modes[1]["relative_deviation"].is_null() ? kNan
                                                               : 1.0 + modes[1]["relative_deviation"].get<double>())
              << (tr.diverged ? " (diverged)" : "") << '\n';
    if (tr.diverged) {
        std::cerr << "simulation diverged at t = " << tr.halt_time << " s\n";
        return exit_numerical;
    }
    return assertion_result(ctx, failures);
}

int cmd_psd(const Context& ctx) {
    const RunConfig& c = ctx.config;
    const ModalParams& p = c.device;
    const Vec2 r0 = c.simulation.position;
    const auto field = c.make_field();

    GradientMatrix G{};
    if (field) G = linearize_field(*field, r0, c.power);
    const EffectiveStiffness K = effective_stiffness(p, G);
    const StabilityReport modes = exact_modes(p, K);

    json summary;
    summary["position_um"] = um_pair(r0);
    summary["gradient_n_per_m"] = {G.d_xFx, G.d_xFz, G.d_zFx, G.d_zFz};
    const PauliDecomposition pd = pauli_decompose(G);
    summary["pauli_n_per_m"] = {{"c0", pd.c0}, {"cx", pd.cx}, {"cy", pd.cy}, {"cz", pd.cz}};
    summary["modes"] = modes_json(modes);
    if (modes.unstable) {
        ctx.out.json("psd_summary.json", summary);
        std::cerr << "psd: the linearised system is unstable at this position and power; "
                     "no stationary spectrum exists\n";
        return exit_numerical;
    }

    const double g = p.gamma;
    const double lo = std::max(0.0, std::min(modes.omega_minus, modes.omega_plus) - 10.0 * g);
    const double hi = std::max(modes.omega_minus, modes.omega_plus) + 10.0 * g;
    const double step = g / 20.0;
    std::vector<double> f;
    for (double w = lo; w <= hi; w += step) f.push_back(hz(w));
    const Vec2 e_beta = readout_direction(p, c.simulation.readout_angle);
    const SpectrumEstimate spec = coupled_projected_psd(p, K, e_beta, f, c.env);
    write_spectrum(ctx.out, "spectrum.csv", spec);
    summary["readout_direction"] = {e_beta.x, e_beta.z};
    summary["doublet"] = try_fit(spec, c);
    ctx.out.json("psd_summary.json", summary);
    std::cout << "psd: " << f.size() << " bins, f- = " << num(hz(modes.omega_minus))
              << " Hz, f+ = " << num(hz(modes.omega_plus)) << " Hz\n";
    return exit_ok;
}

int cmd_map_force(const Context& ctx) {
    const RunConfig& c = ctx.config;
    const ForceField field = require_field(c, "map-force");
    const TransmissionMap tmap = c.make_transmission();

    ForceMapOptions opt;
    opt.protocol = c.protocol.protocol;
    opt.snr_threshold = c.protocol.snr_threshold;
    opt.compare_to_truth = c.protocol.compare_to_truth;
    opt.threads = ctx.threads;
    const ForceMap map =
        map_force_field(c.device, field, tmap, c.grid, opt, c.env, c.simulation.seed);
    const double depth = opt.protocol.delta_p_over_p;

    {
        auto out = ctx.out.csv("force_map.csv",
                               "x_um,z_um,F_fN,angle_deg,phase_deg,sigma_F_fN,sigma_angle_deg,snr");
        for (std::size_t k = 0; k < c.grid.size(); ++k) {
            const Vec2 r = c.grid.node(k);
            out << num(r.x / kUm) << ',' << num(r.z / kUm);
            if (const auto& m = map.nodes[k]) {
                out << ',' << num(m->magnitude / depth / kFn) << ',' << num(deg(m->direction)) << ','
                    << num(deg(m->phase)) << ',' << num(m->sigma_magnitude / depth / kFn) << ','
                    << num(deg(m->sigma_direction)) << ',' << num(m->snr);
            } else {
                out << ",nan,nan,nan,nan,nan,nan";
            }
            out << '\n';
        }
    }

    std::vector<Vec2> measured(c.grid.size(), Vec2{kNan, kNan});
    for (std::size_t k = 0; k < c.grid.size(); ++k)
        if (map.nodes[k]) measured[k] = map.nodes[k]->force() / depth;
    const PauliMaps pm = pauli_maps(c.grid, measured);
    {
        auto out = ctx.out.csv("pauli_map.csv",
                               "x_um,z_um,c0_N_per_m,cx_N_per_m,cy_N_per_m,cz_N_per_m");
        for (std::size_t k = 0; k < c.grid.size(); ++k) {
            const Vec2 r = c.grid.node(k);
            out << num(r.x / kUm) << ',' << num(r.z / kUm) << ',' << num(pm.c0[k]) << ','
                << num(pm.cx[k]) << ',' << num(pm.cy[k]) << ',' << num(pm.cz[k]) << '\n';
        }
    }

    json summary;
    summary["nodes"] = c.grid.size();
    summary["gaps"] = map.gaps();
    json gaps = json::array();
    for (std::size_t k = 0; k < c.grid.size(); ++k)
        if (!map.nodes[k])
            gaps.push_back({{"position_um", um_pair(c.grid.node(k))}, {"reason", map.gap_reason[k]}});
    summary["gap_nodes"] = gaps;

    std::vector<std::string> failures;
    if (map.stats) {
        const auto& st = *map.stats;
        std::vector<Vec2> truth(map.truth.size());
        for (std::size_t k = 0; k < truth.size(); ++k) truth[k] = map.truth[k] / depth;
        {
            auto out = ctx.out.csv("force_truth.csv", "x_um,z_um,Fx_fN,Fz_fN");
            for (std::size_t k = 0; k < c.grid.size(); ++k) {
                const Vec2 r = c.grid.node(k);
                out << num(r.x / kUm) << ',' << num(r.z / kUm) << ',' << num(truth[k].x / kFn)
                    << ',' << num(truth[k].z / kFn) << '\n';
            }
        }
        const PauliMaps pt = pauli_maps(c.grid, truth);
        summary["stats"] = {{"rms_angle_error_deg", deg(st.rms_angle_error)},
                            {"rms_magnitude_error", st.rms_magnitude_error},
                            {"max_relative_error", st.max_relative_error},
                            {"n_used", st.n_used},
                            {"n_measured", st.n_measured},
                            {"snr_threshold", opt.snr_threshold},
                            {"rotational_map_correlation", maybe(map_correlation(pm.cy, pt.cy))}};
        if (opt.protocol.noise_scale == 0.0) {
            if (!(st.max_relative_error <= 1e-6))
                failures.push_back("noiseless reconstruction error above 1e-6");
        } else {
            if (!(deg(st.rms_angle_error) <= 3.0)) failures.push_back("RMS direction error above 3 deg");
            if (!(st.rms_magnitude_error <= 0.05)) failures.push_back("RMS magnitude error above 5%");
            if (st.n_used == 0) failures.push_back("no node above the snr threshold");
        }
        std::cout << "map-force: " << st.n_measured << " measured, " << st.n_used
                  << " above snr threshold, rms angle " << num(deg(st.rms_angle_error))
                  << " deg, rms magnitude " << num(100.0 * st.rms_magnitude_error) << " %\n";
    } else {
        std::cout << "map-force: " << c.grid.size() - map.gaps() << " measured, " << map.gaps()
                  << " gaps\n";
    }
    ctx.out.json("force_map_summary.json", summary);
    return assertion_result(ctx, failures);
}

int cmd_stability(const Context& ctx) {
    const RunConfig& c = ctx.config;
    const ModalParams& p = c.device;
    const ForceField field = require_field(c, "stability");
    const StabilityMapOptions opt{.threads = ctx.threads, .refine_boundary = true};

    const ThresholdSearch thr = minimum_threshold(p, field, c.grid, c.stability.p_max, ctx.threads);
    const StabilityMap map = stability_map(p, field, c.grid, c.power, opt);
    {
        auto out = ctx.out.csv("stability_map.csv",
                               "x_um,z_um,omega_plus_Hz,omega_minus_Hz,gamma_plus_Hz,gamma_minus_Hz,unstable");
        for (std::size_t k = 0; k < c.grid.size(); ++k) {
            const Vec2 r = c.grid.node(k);
            const auto& m = map.reports[k];
            out << num(r.x / kUm) << ',' << num(r.z / kUm) << ',' << num(hz(m.omega_plus)) << ','
                << num(hz(m.omega_minus)) << ',' << num(hz(m.gamma_plus)) << ','
                << num(hz(m.gamma_minus)) << ',' << (m.unstable ? 1 : 0) << '\n';
        }
    }
    ctx.out.json("contours.json", {{"power_uw", c.power / kUw},
                                   {"level", "gamma_minus = 0"},
                                   {"contours_um", contours_json(map.contours)}});

    const double base = thr.power.value_or(c.power);
    std::vector<double> factors = c.stability.power_factors;
    std::sort(factors.begin(), factors.end());
    std::vector<double> areas;
    {
        auto out = ctx.out.csv("area_vs_power.csv", "factor,power_uW,area_um2,quadratic_area_um2");
        for (double f : factors) {
            const double P = f * base;
            const StabilityMap m = stability_map(p, field, c.grid, P, opt);
            areas.push_back(m.area);
            double quad = kNan;
            if (c.stability.quadratic_overlay && m.any_unstable()) {
                std::size_t worst = 0;
                for (std::size_t k = 1; k < m.reports.size(); ++k)
                    if (m.reports[k].gamma_minus < m.reports[worst].gamma_minus) worst = k;
                try {
                    quad = quadratic_area_estimate(p, field, c.grid.node(worst), P, c.grid.min_step())
                               .area;
                } catch (const Error&) {
                    quad = kNan;
                }
            }
            out << num(f) << ',' << num(P / kUw) << ',' << num(m.area / (kUm * kUm)) << ','
                << num(quad / (kUm * kUm)) << '\n';
        }
    }

    json summary;
    summary["power_uw"] = c.power / kUw;
    summary["threshold_uw"] = thr.power ? json(*thr.power / kUw) : json(nullptr);
    summary["threshold_location_um"] = thr.power ? um_pair(thr.location) : json(nullptr);
    summary["p_max_uw"] = c.stability.p_max / kUw;
    summary["area_um2"] = map.area / (kUm * kUm);
    summary["any_unstable"] = map.any_unstable();
    summary["n_contours"] = map.contours.size();
    if (map.any_unstable()) {
        std::size_t worst = 0;
        for (std::size_t k = 1; k < map.reports.size(); ++k)
            if (map.reports[k].gamma_minus < map.reports[worst].gamma_minus) worst = k;
        summary["most_unstable"] = {{"position_um", um_pair(c.grid.node(worst))},
                                    {"modes", modes_json(map.reports[worst])}};
    }

    std::vector<std::string> failures;
    std::vector<double> px, py;
    for (std::size_t k = 0; k < factors.size(); ++k) {
        if (!thr.power) break;
        if (factors[k] < 1.0 && areas[k] > 0.0)
            failures.push_back("non-zero unstable area below threshold at factor " + num(factors[k]));
        if (factors[k] >= 1.0 && factors[k] <= 3.0) {
            px.push_back(factors[k]);
            py.push_back(areas[k]);
        }
        if (k > 0 && factors[k] > 1.0 && factors[k - 1] >= 1.0 && !(areas[k] > areas[k - 1]))
            failures.push_back("area not increasing at factor " + num(factors[k]));
    }
    const double r2 = linear_r2(px, py);
    summary["area_linearity_r2"] = maybe(r2);
    if (thr.power && px.size() >= 3 && !(r2 > 0.95)) failures.push_back("area vs power R^2 <= 0.95");
    if (!thr.power && map.any_unstable())
        failures.push_back("instability reported at the working power without a threshold");
    ctx.out.json("stability_summary.json", summary);

    std::cout << "stability: threshold "
              << (thr.power ? num(*thr.power / kUw) + " uW" : std::string("none below p_max"))
              << ", unstable area " << num(map.area / (kUm * kUm)) << " um^2 at "
              << num(c.power / kUw) << " uW\n";
    return assertion_result(ctx, failures);
}

int cmd_threshold(const Context& ctx) {
    const RunConfig& c = ctx.config;
    const ForceField field = require_field(c, "threshold");
    const ThresholdSearch thr =
        minimum_threshold(c.device, field, c.grid, c.stability.p_max, ctx.threads);
    {
        auto out = ctx.out.csv("threshold_map.csv", "x_um,z_um,threshold_uW");
        for (std::size_t k = 0; k < c.grid.size(); ++k) {
            const Vec2 r = c.grid.node(k);
            const auto& t = thr.per_node[k];
            out << num(r.x / kUm) << ',' << num(r.z / kUm) << ',' << num(t ? *t / kUw : kNan) << '\n';
        }
    }
    std::size_t n = 0;
    for (const auto& t : thr.per_node) n += t.has_value();
    ctx.out.json("threshold.json",
                 {{"threshold_uw", thr.power ? json(*thr.power / kUw) : json(nullptr)},
                  {"location_um", thr.power ? um_pair(thr.location) : json(nullptr)},
                  {"p_max_uw", c.stability.p_max / kUw},
                  {"nodes_with_threshold", n}});
    std::cout << "threshold: "
              << (thr.power ? num(*thr.power / kUw) + " uW at (" + num(thr.location.x / kUm) + ", " +
                                  num(thr.location.z / kUm) + ") um"
                            : std::string("none below p_max"))
              << '\n';
    return exit_ok;
}

int cmd_splitting(const Context& ctx) {
    const RunConfig& c = ctx.config;
    const ModalParams& p = c.device;
    const ForceField field = require_field(c, "splitting");

    SplittingOptions opt;
    opt.source = c.splitting.source;
    if (c.splitting.readout_angle) opt.e_beta = unit_vector(*c.splitting.readout_angle);
    opt.n_segments = c.splitting.n_segments;
    opt.threads = ctx.threads;
    const SplittingComparison cmp =
        splitting_comparison(p, field, c.grid, c.power, c.env, c.simulation.seed, opt);

    {
        auto out = ctx.out.csv("splitting_map.csv", "x_um,z_um,direct_Hz,predicted_Hz,excluded");
        for (std::size_t k = 0; k < c.grid.size(); ++k) {
            const Vec2 r = c.grid.node(k);
            std::string reason = cmp.excluded[k];
            std::replace(reason.begin(), reason.end(), ',', ';');
            out << num(r.x / kUm) << ',' << num(r.z / kUm) << ','
                << num(cmp.direct[k] ? hz(*cmp.direct[k]) : kNan) << ','
                << num(cmp.predicted[k] ? hz(*cmp.predicted[k]) : kNan) << ',' << reason << '\n';
        }
    }
    json excluded = json::array();
    for (std::size_t k = 0; k < c.grid.size(); ++k)
        if (!cmp.excluded[k].empty())
            excluded.push_back({{"position_um", um_pair(c.grid.node(k))}, {"reason", cmp.excluded[k]}});
    ctx.out.json("splitting_summary.json",
                 {{"power_uw", c.power / kUw},
                  {"bare_splitting_hz", hz(cmp.bare_splitting)},
                  {"rms_relative_deviation", maybe(cmp.rms_relative_deviation)},
                  {"rms_shift_deviation", maybe(cmp.rms_shift_deviation)},
                  {"n_used", cmp.n_used},
                  {"n_below_bare", cmp.n_below_bare},
                  {"n_excluded", excluded.size()},
                  {"excluded_nodes", excluded}});

    std::vector<std::string> failures;
    if (!(cmp.rms_relative_deviation <= 0.05)) failures.push_back("RMS deviation from the bisector above 5%");
    if (cmp.n_below_bare == 0) failures.push_back("no node splits below the bare value");
    std::cout << "splitting: " << cmp.n_used << " nodes used, " << excluded.size()
              << " excluded, rms deviation " << num(100.0 * cmp.rms_relative_deviation) << " %, "
              << cmp.n_below_bare << " below bare\n";
    return assertion_result(ctx, failures);
}

} // namespace optomech2d::cli
