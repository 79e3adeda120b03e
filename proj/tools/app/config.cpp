#include "config.hpp"

#include "optomech2d/grid_csv.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace optomech2d::cli {

using nlohmann::json;

namespace {

constexpr double kDeg = kPi / 180.0;

class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* find(const std::string& key) {
        used_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) return nullptr;
        return &*it;
    }

    std::optional<double> number(const std::string& key) {
        const json* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_number()) throw ConfigError(at(key), "expected a number");
        const double d = v->get<double>();
        if (!std::isfinite(d)) throw ConfigError(at(key), "must be finite");
        return d;
    }

    std::optional<double> positive(const std::string& key) {
        auto d = number(key);
        if (d && !(*d > 0.0)) throw ConfigError(at(key), "must be > 0");
        return d;
    }

    std::optional<double> non_negative(const std::string& key) {
        auto d = number(key);
        if (d && !(*d >= 0.0)) throw ConfigError(at(key), "must be >= 0");
        return d;
    }

    std::optional<std::uint64_t> unsigned_integer(const std::string& key) {
        const json* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_number_integer() || (v->is_number_integer() && v->get<std::int64_t>() < 0 &&
                                        !v->is_number_unsigned()))
            throw ConfigError(at(key), "expected a non-negative integer");
        return v->get<std::uint64_t>();
    }

    std::optional<bool> boolean(const std::string& key) {
        const json* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_boolean()) throw ConfigError(at(key), "expected true or false");
        return v->get<bool>();
    }

    std::optional<std::string> string(const std::string& key,
                                      std::initializer_list<const char*> allowed = {}) {
        const json* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_string()) throw ConfigError(at(key), "expected a string");
        std::string s = v->get<std::string>();
        if (allowed.size() > 0) {
            bool ok = false;
            std::string list;
            for (const char* a : allowed) {
                ok = ok || s == a;
                list += list.empty() ? a : std::string(", ") + a;
            }
            if (!ok) throw ConfigError(at(key), "must be one of: " + list);
        }
        return s;
    }

    std::optional<std::vector<double>> numbers(const std::string& key, std::size_t n = 0) {
        const json* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_array()) throw ConfigError(at(key), "expected an array of numbers");
        if (n > 0 && v->size() != n)
            throw ConfigError(at(key), "expected " + std::to_string(n) + " numbers");
        std::vector<double> out;
        for (std::size_t k = 0; k < v->size(); ++k) {
            const json& e = (*v)[k];
            if (!e.is_number() || !std::isfinite(e.get<double>()))
                throw ConfigError(at(key) + "[" + std::to_string(k) + "]", "expected a finite number");
            out.push_back(e.get<double>());
        }
        return out;
    }

    std::optional<Section> section(const std::string& key) {
        const json* v = find(key);
        if (!v) return std::nullopt;
        return Section(*v, at(key));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class F>
void rethrow_as(const std::string& path, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(path, e.what());
    }
}

void parse_device(Section s, RunConfig& c) {
    c.device_preset = s.string("preset", {"reference", "desk", "custom"}).value_or("desk");
    ModalParams p = c.device_preset == "reference" ? reference_device() : desk_device();
    const bool custom = c.device_preset == "custom";
    const auto mass = s.positive("mass_fg");
    const auto f1 = s.positive("f1_khz");
    const auto f2 = s.positive("f2_khz");
    const auto q = s.positive("quality_factor");
    const auto theta = s.number("theta1_deg");
    const auto time_scale = s.positive("time_scale");
    s.finish();
    if (custom && !(mass && f1 && f2 && q))
        throw ConfigError(s.at("preset"),
                          "custom device needs mass_fg, f1_khz, f2_khz and quality_factor");
    const double quality = q.value_or(p.omega1 / p.gamma);
    if (mass) p.mass = *mass * 1e-18;
    if (f1) p.omega1 = kTwoPi * *f1 * 1e3;
    if (f2) p.omega2 = kTwoPi * *f2 * 1e3;
    if (theta) p.theta1 = *theta * kDeg;
    p.gamma = p.omega1 / quality;
    if (time_scale) p = rescale_time(p, *time_scale);
    rethrow_as(s.at(""), [&] { p.validate(); });
    c.device = p;
}

void parse_beam(Section s, RunConfig& c) {
    auto& b = c.beam;
    const std::string model =
        s.string("model", {"gaussian", "tabulated", "linear", "none"}).value_or("gaussian");
    b.kind = model == "gaussian"    ? FieldKind::gaussian
             : model == "tabulated" ? FieldKind::tabulated
             : model == "linear"    ? FieldKind::linear
                                    : FieldKind::none;
    b.preset = s.string("preset", {"532nm", "633nm", "custom"}).value_or("532nm");
    const auto wavelength = s.positive("wavelength_nm");
    const auto waist = s.positive("waist_nm");
    const auto peak = s.non_negative("peak_force_fn");
    const auto ref = s.positive("ref_power_uw");
    const auto path = s.string("path");
    const auto gradient = s.numbers("gradient_n_per_m", 4);
    const auto offset = s.numbers("offset_fn", 2);
    const auto origin = s.numbers("origin_um", 2);
    s.finish();

    if (b.kind == FieldKind::gaussian) {
        GaussianBeamField g = b.preset == "633nm" ? GaussianBeamField::preset_633nm()
                                                  : GaussianBeamField::preset_532nm();
        if (b.preset == "custom" && !(wavelength && waist && peak && ref))
            throw ConfigError(s.at("preset"),
                              "custom beam needs wavelength_nm, waist_nm, peak_force_fn and ref_power_uw");
        rethrow_as(s.at(""), [&] {
            g = GaussianBeamField::make(wavelength ? *wavelength * 1e-9 : g.wavelength,
                                        waist ? *waist * 1e-9 : g.waist,
                                        peak ? *peak * 1e-15 : g.peak_force,
                                        ref ? *ref * 1e-6 : g.ref_power);
        });
        b.gaussian = g;
    } else if (b.kind == FieldKind::tabulated) {
        if (!path) throw ConfigError(s.at("path"), "required for a tabulated field");
        if (!ref) throw ConfigError(s.at("ref_power_uw"), "required for a tabulated field");
        b.path = *path;
        b.ref_power = *ref * 1e-6;
    } else if (b.kind == FieldKind::linear) {
        if (!gradient) throw ConfigError(s.at("gradient_n_per_m"), "required for a linear field");
        b.ref_power = ref.value_or(100.0) * 1e-6;
        b.linear.gradient = {(*gradient)[0], (*gradient)[1], (*gradient)[2], (*gradient)[3]};
        if (offset) b.linear.offset = {(*offset)[0] * 1e-15, (*offset)[1] * 1e-15};
        if (origin) b.linear.origin = {(*origin)[0] * 1e-6, (*origin)[1] * 1e-6};
        b.linear.ref_power = b.ref_power;
    }
}

void parse_simulation(Section s, RunConfig& c) {
    auto& sim = c.simulation;
    const auto dt = s.positive("dt_s");
    const auto duration = s.positive("duration_s");
    const auto seed = s.unsigned_integer("seed");
    const auto decimation = s.unsigned_integer("decimation");
    const auto integrator = s.string("integrator", {"exact", "euler"});
    const auto angle = s.number("readout_angle_deg");
    const auto segment = s.unsigned_integer("segment_len");
    const auto overlap = s.number("overlap");
    const auto position = s.numbers("position_um", 2);
    const auto disp = s.numbers("initial_displacement_nm", 2);
    const auto write = s.boolean("write_trajectory");
    const auto stride = s.unsigned_integer("trajectory_stride");
    s.finish();
    if (dt) sim.dt = *dt;
    if (duration) sim.duration = *duration;
    if (seed) sim.seed = *seed;
    if (decimation) {
        if (*decimation == 0) throw ConfigError(s.at("decimation"), "must be >= 1");
        sim.decimation = *decimation;
    }
    if (integrator)
        sim.integrator = *integrator == "euler" ? Integrator::semi_implicit_euler
                                                : Integrator::exact_linear_splitting;
    if (angle) sim.readout_angle = *angle * kDeg;
    if (segment) {
        if (*segment < 2 || (*segment & (*segment - 1)) != 0)
            throw ConfigError(s.at("segment_len"), "must be a power of two >= 2");
        sim.segment_len = *segment;
    }
    if (overlap) {
        if (!(*overlap >= 0.0 && *overlap < 1.0)) throw ConfigError(s.at("overlap"), "must be in [0, 1)");
        sim.overlap = *overlap;
    }
    if (position) sim.position = {(*position)[0] * 1e-6, (*position)[1] * 1e-6};
    if (disp) sim.initial_displacement = {(*disp)[0] * 1e-9, (*disp)[1] * 1e-9};
    if (write) sim.write_trajectory = *write;
    if (stride) {
        if (*stride == 0) throw ConfigError(s.at("trajectory_stride"), "must be >= 1");
        sim.trajectory_stride = *stride;
    }
}

void parse_grid(Section s, RunConfig& c) {
    const auto x0 = s.number("x_min_um");
    const auto x1 = s.number("x_max_um");
    const auto nx = s.unsigned_integer("nx");
    const auto z0 = s.number("z_min_um");
    const auto z1 = s.number("z_max_um");
    const auto nz = s.unsigned_integer("nz");
    s.finish();
    const double ax = x0.value_or(c.grid.x.front() * 1e6), bx = x1.value_or(c.grid.x.back() * 1e6);
    const double az = z0.value_or(c.grid.z.front() * 1e6), bz = z1.value_or(c.grid.z.back() * 1e6);
    const std::size_t mx = nx.value_or(c.grid.nx()), mz = nz.value_or(c.grid.nz());
    if (mx < 2) throw ConfigError(s.at("nx"), "must be >= 2");
    if (mz < 2) throw ConfigError(s.at("nz"), "must be >= 2");
    if (!(bx > ax)) throw ConfigError(s.at("x_max_um"), "must exceed x_min_um");
    if (!(bz > az)) throw ConfigError(s.at("z_max_um"), "must exceed z_min_um");
    c.grid = RectGrid::uniform(ax * 1e-6, bx * 1e-6, mx, az * 1e-6, bz * 1e-6, mz);
}

void parse_protocol(Section s, RunConfig& c) {
    auto& p = c.protocol;
    const auto depth = s.number("delta_p_over_p");
    const auto bw = s.positive("bandwidth_hz");
    const auto noise = s.non_negative("noise_scale");
    const auto ppl = s.positive("points_per_linewidth");
    const auto span = s.non_negative("span_linewidths");
    const auto snr = s.non_negative("snr_threshold");
    const auto compare = s.boolean("compare_to_truth");
    auto tr = s.section("transmission");
    s.finish();
    if (depth) {
        if (!(*depth > 0.0 && *depth <= 1.0))
            throw ConfigError(s.at("delta_p_over_p"), "must be in (0, 1]");
        p.protocol.delta_p_over_p = *depth;
    }
    if (bw) p.protocol.bandwidth_hz = *bw;
    if (noise) p.protocol.noise_scale = *noise;
    if (ppl) p.protocol.points_per_linewidth = *ppl;
    if (span) p.protocol.span_linewidths = *span;
    if (snr) p.snr_threshold = *snr;
    if (compare) p.compare_to_truth = *compare;
    if (tr) {
        const auto model = tr->string("model", {"synthetic", "tabulated"}).value_or("synthetic");
        const auto v0 = tr->number("v0_v");
        const auto spacing = tr->positive("spacing_nm");
        const auto path = tr->string("path");
        tr->finish();
        p.transmission.synthetic = model == "synthetic";
        if (v0) {
            if (*v0 == 0.0) throw ConfigError(tr->at("v0_v"), "must be non-zero");
            p.transmission.v0 = *v0;
        }
        if (spacing) p.transmission.spacing = *spacing * 1e-9;
        if (!p.transmission.synthetic) {
            if (!path) throw ConfigError(tr->at("path"), "required for a tabulated transmission map");
            p.transmission.path = *path;
        }
    }
}

void parse_stability(Section s, RunConfig& c) {
    const auto pmax = s.positive("p_max_uw");
    const auto factors = s.numbers("power_factors");
    const auto overlay = s.boolean("quadratic_overlay");
    s.finish();
    if (pmax) c.stability.p_max = *pmax * 1e-6;
    if (factors) {
        for (std::size_t k = 0; k < factors->size(); ++k)
            if (!((*factors)[k] > 0.0))
                throw ConfigError(s.at("power_factors") + "[" + std::to_string(k) + "]", "must be > 0");
        c.stability.power_factors = *factors;
    }
    if (overlay) c.stability.quadratic_overlay = *overlay;
}

void parse_splitting(Section s, RunConfig& c) {
    const auto source = s.string("source", {"frequency", "time"});
    const auto segments = s.unsigned_integer("n_segments");
    const auto angle = s.number("readout_angle_deg");
    s.finish();
    if (source)
        c.splitting.source = *source == "time" ? SpectrumSource::time_domain
                                               : SpectrumSource::frequency_domain;
    if (segments) {
        if (*segments < 1) throw ConfigError(s.at("n_segments"), "must be >= 1");
        c.splitting.n_segments = static_cast<int>(*segments);
    }
    if (angle) c.splitting.readout_angle = *angle * kDeg;
}

std::size_t pow2_at_least(double n) {
    std::size_t p = 2;
    while (static_cast<double>(p) < n) p <<= 1;
    return p;
}

void resolve_defaults(RunConfig& c) {
    auto& sim = c.simulation;
    const ModalParams& p = c.device;
    const double dt_max = max_time_step(p);
    if (sim.dt == 0.0) sim.dt = dt_max;
    if (sim.dt > dt_max * (1.0 + 1e-12))
        throw ConfigError("simulation.dt_s", "must not exceed 2 pi / (50 max Omega_i)");
    if (sim.duration == 0.0) sim.duration = 2000.0 / p.gamma;
    if (sim.decimation == 0) {
        const double f_max = std::max(p.omega1, p.omega2) / kTwoPi;
        sim.decimation = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(1.0 / (2.5 * f_max * sim.dt))));
    }
    const double ts = sim.dt * static_cast<double>(sim.decimation);
    const auto samples = static_cast<std::size_t>(sim.duration / ts);
    if (samples < 2)
        throw ConfigError("simulation.duration_s", "too short for two samples at this decimation");
    if (sim.segment_len == 0) {
        std::size_t L = pow2_at_least(9.0 * kTwoPi / (p.gamma * ts));
        while (L > 16 && samples < 16 * (L / 2)) L /= 2;
        sim.segment_len = std::min(L, std::size_t{1} << 20);
    }
    if (sim.trajectory_stride == 0)
        sim.trajectory_stride = std::max<std::size_t>(1, (samples + 199999) / 200000);
    if (c.protocol.protocol.bandwidth_hz <= 0.0)
        c.protocol.protocol.bandwidth_hz = p.gamma / kTwoPi / 20.0;
    c.protocol.protocol.power = c.power;
}

json vec(Vec2 v) { return json::array({v.x, v.z}); }

} // namespace

RunConfig parse_config(const json& j) {
    RunConfig c;
    Section root(j, "");
    if (auto s = root.section("device")) parse_device(*s, c);
    if (auto s = root.section("beam")) parse_beam(*s, c);
    if (auto p = root.non_negative("power_uw")) c.power = *p * 1e-6;
    if (auto s = root.section("environment")) {
        const auto t = s->non_negative("temperature_k");
        const auto floor = s->non_negative("detection_floor_m2_per_hz");
        s->finish();
        if (t) c.env.temperature = *t;
        if (floor) c.env.detection_floor = *floor;
    }
    if (auto s = root.section("simulation")) parse_simulation(*s, c);
    if (auto s = root.section("grid")) parse_grid(*s, c);
    if (auto s = root.section("protocol")) parse_protocol(*s, c);
    if (auto s = root.section("stability")) parse_stability(*s, c);
    if (auto s = root.section("splitting")) parse_splitting(*s, c);
    if (auto s = root.section("output")) {
        const auto dir = s->string("directory");
        s->finish();
        if (dir) {
            if (dir->empty()) throw ConfigError("output.directory", "must not be empty");
            c.output_dir = *dir;
        }
    }
    root.finish();
    resolve_defaults(c);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot open " + path);
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

std::optional<ForceField> RunConfig::make_field() const {
    switch (beam.kind) {
    case FieldKind::none: return std::nullopt;
    case FieldKind::gaussian: return ForceField(beam.gaussian);
    case FieldKind::linear: return ForceField(beam.linear);
    case FieldKind::tabulated: return ForceField(load_force_map(beam.path, beam.ref_power));
    }
    return std::nullopt;
}

TransmissionMap RunConfig::make_transmission() const {
    const auto& t = protocol.transmission;
    if (!t.synthetic) return load_transmission_map(t.path);
    SyntheticTransmission model = SyntheticTransmission::from_beam(beam.gaussian, t.v0);
    const double margin = 5.0 * t.spacing;
    const double x0 = grid.x.front() - margin, x1 = grid.x.back() + margin;
    const double z0 = grid.z.front() - margin, z1 = grid.z.back() + margin;
    const auto nx = static_cast<std::size_t>(std::ceil((x1 - x0) / t.spacing)) + 1;
    const auto nz = static_cast<std::size_t>(std::ceil((z1 - z0) / t.spacing)) + 1;
    return model.tabulate(RectGrid::uniform(x0, x1, nx, z0, z1, nz));
}

json RunConfig::effective() const {
    json j;
    const ModalParams& p = device;
    j["device"] = {{"preset", device_preset},      {"mass_kg", p.mass},
                   {"omega1_rad_s", p.omega1},     {"omega2_rad_s", p.omega2},
                   {"gamma_rad_s", p.gamma},       {"theta1_rad", p.theta1}};
    json b;
    switch (beam.kind) {
    case FieldKind::none: b["model"] = "none"; break;
    case FieldKind::gaussian:
        b = {{"model", "gaussian"},
             {"preset", beam.preset},
             {"wavelength_m", beam.gaussian.wavelength},
             {"waist_m", beam.gaussian.waist},
             {"rayleigh_range_m", beam.gaussian.rayleigh_range},
             {"peak_force_n", beam.gaussian.peak_force},
             {"ref_power_w", beam.gaussian.ref_power}};
        break;
    case FieldKind::tabulated:
        b = {{"model", "tabulated"}, {"path", beam.path}, {"ref_power_w", beam.ref_power}};
        break;
    case FieldKind::linear: {
        const auto& g = beam.linear.gradient;
        b = {{"model", "linear"},
             {"gradient_n_per_m", {g.d_xFx, g.d_xFz, g.d_zFx, g.d_zFz}},
             {"offset_n", vec(beam.linear.offset)},
             {"origin_m", vec(beam.linear.origin)},
             {"ref_power_w", beam.ref_power}};
        break;
    }
    }
    j["beam"] = b;
    j["power_w"] = power;
    j["environment"] = {{"temperature_k", env.temperature},
                        {"detection_floor_m2_per_hz", env.detection_floor}};
    const auto& s = simulation;
    j["simulation"] = {
        {"dt_s", s.dt},
        {"duration_s", s.duration},
        {"seed", s.seed},
        {"decimation", s.decimation},
        {"integrator", s.integrator == Integrator::semi_implicit_euler ? "euler" : "exact"},
        {"readout_angle_rad", s.readout_angle ? json(*s.readout_angle) : json(nullptr)},
        {"segment_len", s.segment_len},
        {"overlap", s.overlap},
        {"position_m", vec(s.position)},
        {"initial_displacement_m", vec(s.initial_displacement)},
        {"write_trajectory", s.write_trajectory},
        {"trajectory_stride", s.trajectory_stride}};
    j["grid"] = {{"x_min_m", grid.x.front()}, {"x_max_m", grid.x.back()}, {"nx", grid.nx()},
                 {"z_min_m", grid.z.front()}, {"z_max_m", grid.z.back()}, {"nz", grid.nz()}};
    const auto& pr = protocol.protocol;
    j["protocol"] = {
        {"delta_p_over_p", pr.delta_p_over_p},
        {"bandwidth_hz", pr.bandwidth_hz},
        {"noise_scale", pr.noise_scale},
        {"points_per_linewidth", pr.points_per_linewidth},
        {"span_linewidths", pr.span_linewidths},
        {"snr_threshold", protocol.snr_threshold},
        {"compare_to_truth", protocol.compare_to_truth},
        {"transmission",
         {{"model", protocol.transmission.synthetic ? "synthetic" : "tabulated"},
          {"v0_v", protocol.transmission.v0},
          {"spacing_m", protocol.transmission.spacing},
          {"path", protocol.transmission.path}}}};
    j["stability"] = {{"p_max_w", stability.p_max},
                      {"power_factors", stability.power_factors},
                      {"quadratic_overlay", stability.quadratic_overlay}};
    j["splitting"] = {
        {"source", splitting.source == SpectrumSource::time_domain ? "time" : "frequency"},
        {"n_segments", splitting.n_segments},
        {"readout_angle_rad",
         splitting.readout_angle ? json(*splitting.readout_angle) : json(nullptr)}};
    j["output"] = {{"directory", output_dir}};
    return j;
}

} // namespace optomech2d::cli
