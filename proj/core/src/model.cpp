#include "optomech2d/model.hpp"

#include "optomech2d/errors.hpp"

#include <algorithm>
#include <array>
#include <string>

namespace optomech2d {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument(what);
}

bool positive_finite(double v) { return std::isfinite(v) && v > 0.0; }

// Clamped-free roots beta_n L of cos(x) cosh(x) = -1.
constexpr std::array<double, 5> kClampedFreeRoots{1.8751041, 4.6940911, 7.8547574,
                                                  10.995541, 14.137168};

} // namespace

void ModalParams::validate() const {
    require(positive_finite(mass), "mass must be > 0");
    require(positive_finite(omega1), "omega1 must be > 0");
    require(positive_finite(omega2), "omega2 must be > 0");
    require(positive_finite(gamma), "gamma must be > 0");
    require(std::isfinite(theta1), "theta1 must be finite");
}

ModalParams ModalParams::from_quality_factor(double mass, double f1_hz, double f2_hz,
                                             double quality, double theta1) {
    require(positive_finite(quality), "quality factor must be > 0");
    ModalParams p{mass, kTwoPi * f1_hz, kTwoPi * f2_hz, kTwoPi * f1_hz / quality, theta1};
    p.validate();
    return p;
}

ModalParams rescale_time(const ModalParams& p, double factor) {
    require(positive_finite(factor), "time rescaling factor must be > 0");
    return {p.mass / (factor * factor), p.omega1 * factor, p.omega2 * factor,
            p.gamma * factor, p.theta1};
}

ModalParams reference_device() {
    return ModalParams::from_quality_factor(376e-18, 113.0e3, 113.04e3, 2890.0,
                                            20.0 * kPi / 180.0);
}

ModalParams desk_device() {
    const ModalParams ref = reference_device();
    ModalParams p = ModalParams::from_quality_factor(1.0, 1.0e3, 1.005e3, 2890.0, ref.theta1);
    p.mass = ref.stiffness(0) / (p.omega1 * p.omega1);
    return p;
}

void Environment::validate() const {
    require(positive_finite(temperature) || temperature == 0.0,
            "temperature must be >= 0");
    require(std::isfinite(detection_floor) && detection_floor >= 0.0,
            "detection_floor must be >= 0");
}

double thermal_force_psd(const ModalParams& p, const Environment& env) {
    return 2.0 * p.mass * p.gamma * kBoltzmann * env.temperature;
}

double thermal_force_psd_one_sided(const ModalParams& p, const Environment& env) {
    return 2.0 * thermal_force_psd(p, env);
}

double equipartition_variance(const ModalParams& p, int mode, const Environment& env) {
    return kBoltzmann * env.temperature / p.stiffness(mode);
}

// ---------------------------------------------------------------------------
// Gaussian beam

GaussianBeamField GaussianBeamField::make(double wavelength, double waist, double peak_force,
                                          double ref_power) {
    GaussianBeamField f{wavelength, waist, kPi * waist * waist / wavelength, peak_force,
                        ref_power};
    f.validate();
    return f;
}

GaussianBeamField GaussianBeamField::preset_532nm() {
    return make(532e-9, 550e-9, 70e-15, 96e-6);
}

GaussianBeamField GaussianBeamField::preset_633nm() {
    return make(633e-9, 550e-9, 14e-15, 96e-6);
}

void GaussianBeamField::validate() const {
    require(positive_finite(wavelength), "wavelength must be > 0");
    require(positive_finite(waist), "waist must be > 0");
    require(positive_finite(rayleigh_range), "rayleigh range must be > 0");
    require(std::abs(rayleigh_range - kPi * waist * waist / wavelength) <=
                1e-12 * rayleigh_range,
            "rayleigh range inconsistent with waist and wavelength");
    require(std::isfinite(peak_force) && peak_force >= 0.0, "peak_force must be >= 0");
    require(positive_finite(ref_power), "ref_power must be > 0");
}

double GaussianBeamField::beam_radius(double z) const {
    const double u = z / rayleigh_range;
    return waist * std::sqrt(1.0 + u * u);
}

double GaussianBeamField::relative_intensity(Vec2 r) const {
    const double w = beam_radius(r.z);
    const double ratio = waist / w;
    return ratio * ratio * std::exp(-2.0 * r.x * r.x / (w * w));
}

Vec2 GaussianBeamField::force(Vec2 r, double power) const {
    // Wavefront normal: transverse slope x/R(z) with R(z) = (z^2 + zR^2)/z.
    const double slope = r.x * r.z / (r.z * r.z + rayleigh_range * rayleigh_range);
    const double inv_norm = 1.0 / std::sqrt(1.0 + slope * slope);
    const double magnitude = peak_force * (power / ref_power) * relative_intensity(r);
    return {magnitude * slope * inv_norm, magnitude * inv_norm};
}

Vec2 gaussian_force(const GaussianBeamField& field, Vec2 r, double power) {
    return field.force(r, power);
}

// ---------------------------------------------------------------------------
// Grids

RectGrid RectGrid::uniform(double x_min, double x_max, std::size_t nx, double z_min,
                           double z_max, std::size_t nz) {
    require(nx >= 2 && nz >= 2, "grid needs at least 2 nodes per axis");
    require(x_max > x_min && z_max > z_min, "grid ranges must be increasing");
    RectGrid g;
    g.x.resize(nx);
    g.z.resize(nz);
    for (std::size_t i = 0; i < nx; ++i)
        g.x[i] = x_min + (x_max - x_min) * static_cast<double>(i) / static_cast<double>(nx - 1);
    for (std::size_t j = 0; j < nz; ++j)
        g.z[j] = z_min + (z_max - z_min) * static_cast<double>(j) / static_cast<double>(nz - 1);
    return g;
}

void RectGrid::validate() const {
    require(x.size() >= 2 && z.size() >= 2, "grid needs at least 2 nodes per axis");
    for (std::size_t i = 1; i < x.size(); ++i)
        require(x[i] > x[i - 1], "grid x coordinates must be strictly increasing");
    for (std::size_t j = 1; j < z.size(); ++j)
        require(z[j] > z[j - 1], "grid z coordinates must be strictly increasing");
}

bool RectGrid::contains(Vec2 r) const {
    return r.x >= x.front() && r.x <= x.back() && r.z >= z.front() && r.z <= z.back();
}

double RectGrid::min_step() const {
    double h = x[1] - x[0];
    for (std::size_t i = 1; i < x.size(); ++i) h = std::min(h, x[i] - x[i - 1]);
    for (std::size_t j = 1; j < z.size(); ++j) h = std::min(h, z[j] - z[j - 1]);
    return h;
}

RectGrid::Cell RectGrid::locate(Vec2 r) const {
    if (!contains(r))
        throw OutOfRangeError("position (" + std::to_string(r.x) + ", " +
                              std::to_string(r.z) + ") m is outside the grid hull");
    auto bracket = [](const std::vector<double>& axis, double v, std::size_t& lo, double& t) {
        auto it = std::upper_bound(axis.begin(), axis.end(), v);
        std::size_t hi = static_cast<std::size_t>(it - axis.begin());
        hi = std::clamp<std::size_t>(hi, 1, axis.size() - 1);
        lo = hi - 1;
        t = (v - axis[lo]) / (axis[hi] - axis[lo]);
    };
    Cell c{};
    bracket(x, r.x, c.i, c.tx);
    bracket(z, r.z, c.j, c.tz);
    return c;
}

namespace {

template <class T>
T bilinear(const RectGrid& g, const std::vector<T>& values, Vec2 r) {
    const auto c = g.locate(r);
    const T& v00 = values[g.index(c.i, c.j)];
    const T& v01 = values[g.index(c.i, c.j + 1)];
    const T& v10 = values[g.index(c.i + 1, c.j)];
    const T& v11 = values[g.index(c.i + 1, c.j + 1)];
    // Exact at nodes: the weights collapse to 0/1 there.
    return (1.0 - c.tx) * ((1.0 - c.tz) * v00 + c.tz * v01) +
           c.tx * ((1.0 - c.tz) * v10 + c.tz * v11);
}

} // namespace

void TabulatedField::validate() const {
    grid.validate();
    require(values.size() == grid.size(), "force table size does not match grid");
    require(positive_finite(ref_power), "tabulated field ref_power must be > 0");
    for (const auto& v : values) require(v.finite(), "force table contains non-finite values");
}

Vec2 TabulatedField::force(Vec2 r, double power) const {
    return (power / ref_power) * bilinear(grid, values, r);
}

Vec2 tabulated_force(const TabulatedField& field, Vec2 r, double power) {
    return field.force(r, power);
}

void TransmissionMap::validate() const {
    grid.validate();
    require(values.size() == grid.size(), "transmission table size does not match grid");
    for (double v : values) require(std::isfinite(v), "transmission map contains non-finite values");
}

double TransmissionMap::value(Vec2 r) const { return bilinear(grid, values, r); }

Vec2 LinearField::force(Vec2 r, double power) const {
    return (power / ref_power) * (offset + gradient.apply(r - origin));
}

// ---------------------------------------------------------------------------
// ForceField

Vec2 ForceField::force(Vec2 r, double power) const {
    return std::visit([&](const auto& f) { return f.force(r, power); }, model_);
}

bool ForceField::contains(Vec2 r) const {
    if (const auto* t = std::get_if<TabulatedField>(&model_)) return t->grid.contains(r);
    return r.finite();
}

double ForceField::native_step() const {
    if (const auto* g = std::get_if<GaussianBeamField>(&model_)) return g->waist / 100.0;
    if (const auto* t = std::get_if<TabulatedField>(&model_)) return t->grid.min_step();
    return 1e-9;
}

double ForceField::ref_power() const {
    return std::visit([](const auto& f) { return f.ref_power; }, model_);
}

// ---------------------------------------------------------------------------

std::vector<double> cantilever_eigenfrequencies(double length, double diameter,
                                                double youngs_modulus, double density,
                                                int n_modes) {
    require(positive_finite(length) && positive_finite(diameter) &&
                positive_finite(youngs_modulus) && positive_finite(density),
            "beam geometry and material constants must be > 0");
    require(n_modes >= 1 && n_modes <= static_cast<int>(kClampedFreeRoots.size()),
            "n_modes must be in [1, 5]");
    const double area = kPi * diameter * diameter / 4.0;
    const double inertia = kPi * std::pow(diameter, 4) / 64.0;
    const double scale = std::sqrt(youngs_modulus * inertia / (density * area)) /
                         (length * length);
    std::vector<double> f(static_cast<std::size_t>(n_modes));
    for (int n = 0; n < n_modes; ++n) {
        const double b = kClampedFreeRoots[static_cast<std::size_t>(n)];
        f[static_cast<std::size_t>(n)] = b * b / kTwoPi * scale;
    }
    return f;
}

} // namespace optomech2d
