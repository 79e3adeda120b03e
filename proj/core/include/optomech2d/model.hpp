#pragma once

// Domain types, force-field models and closed-form helpers shared by every
// other part of the library.
//
// Frame and units: positions live in the horizontal plane spanned by e_x
// (transverse) and e_z (optical axis). Everything is strict SI. Conversions
// to display units happen only at the tool boundary.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <variant>
#include <vector>

namespace optomech2d {

inline constexpr double kBoltzmann = 1.380649e-23; // J/K
inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Vec2 {
    double x{0.0};
    double z{0.0};

    constexpr Vec2& operator+=(Vec2 o) { x += o.x; z += o.z; return *this; }
    constexpr Vec2& operator-=(Vec2 o) { x -= o.x; z -= o.z; return *this; }
    constexpr Vec2& operator*=(double s) { x *= s; z *= s; return *this; }

    double norm() const { return std::hypot(x, z); }
    bool finite() const { return std::isfinite(x) && std::isfinite(z); }
    friend constexpr bool operator==(Vec2, Vec2) = default;
};

constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.z + b.z}; }
constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.z - b.z}; }
constexpr Vec2 operator-(Vec2 a) { return {-a.x, -a.z}; }
constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.z}; }
constexpr Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.z}; }
constexpr Vec2 operator/(Vec2 a, double s) { return {a.x / s, a.z / s}; }
constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.z * b.z; }
// z-component of a x b when (x, z) is read as a right-handed planar frame.
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.z - a.z * b.x; }
inline Vec2 unit_vector(double angle) { return {std::cos(angle), std::sin(angle)}; }

/// Force-gradient matrix G_ab = d_a F_b at one point, lab frame, N/m.
///
/// Row index is the derivative direction, column index the force component,
/// so a small displacement dr changes the force by dF_b = sum_a dr_a G_ab.
struct GradientMatrix {
    double d_xFx{0.0};
    double d_xFz{0.0};
    double d_zFx{0.0};
    double d_zFz{0.0};

    /// Force change produced by the displacement dr.
    constexpr Vec2 apply(Vec2 dr) const {
        return {dr.x * d_xFx + dr.z * d_zFx, dr.x * d_xFz + dr.z * d_zFz};
    }
    constexpr GradientMatrix scaled(double s) const {
        return {s * d_xFx, s * d_xFz, s * d_zFx, s * d_zFz};
    }
    /// d_x F_z - d_z F_x, the out-of-plane curl.
    constexpr double curl() const { return d_xFz - d_zFx; }
    constexpr double divergence() const { return d_xFx + d_zFz; }
    constexpr GradientMatrix symmetric_part() const {
        const double s = 0.5 * (d_xFz + d_zFx);
        return {d_xFx, s, s, d_zFz};
    }
    constexpr GradientMatrix antisymmetric_part() const {
        const double a = 0.5 * (d_xFz - d_zFx);
        return {0.0, a, -a, 0.0};
    }
    bool finite() const {
        return std::isfinite(d_xFx) && std::isfinite(d_xFz) && std::isfinite(d_zFx) &&
               std::isfinite(d_zFz);
    }
    friend constexpr bool operator==(const GradientMatrix&, const GradientMatrix&) = default;
};

constexpr GradientMatrix operator+(const GradientMatrix& a, const GradientMatrix& b) {
    return {a.d_xFx + b.d_xFx, a.d_xFz + b.d_xFz, a.d_zFx + b.d_zFx, a.d_zFz + b.d_zFz};
}

/// Identity of the mechanical doublet: one effective mass, two eigenfrequencies
/// along perpendicular directions, one shared damping rate.
///
/// e1 points at angle theta1 from the x axis; e2 is e1 rotated by +pi/2.
struct ModalParams {
    double mass{0.0};   // kg
    double omega1{0.0}; // rad/s
    double omega2{0.0}; // rad/s
    double gamma{0.0};  // rad/s, energy damping rate
    double theta1{0.0}; // rad

    Vec2 e1() const { return unit_vector(theta1); }
    Vec2 e2() const { return {-std::sin(theta1), std::cos(theta1)}; }
    Vec2 mode_direction(int i) const { return i == 0 ? e1() : e2(); }
    double omega(int i) const { return i == 0 ? omega1 : omega2; }
    double mean_omega() const { return 0.5 * (omega1 + omega2); }
    double stiffness(int i) const { return mass * omega(i) * omega(i); }

    /// Lab-frame vector from mode-frame components.
    Vec2 to_lab(Vec2 modal) const { return modal.x * e1() + modal.z * e2(); }
    /// Mode-frame components (stored as {e1, e2}) of a lab-frame vector.
    Vec2 to_modal(Vec2 lab) const { return {dot(lab, e1()), dot(lab, e2())}; }

    /// Throws InvalidArgument naming the first offending field.
    void validate() const;

    static ModalParams from_quality_factor(double mass, double f1_hz, double f2_hz,
                                           double quality, double theta1);
};

/// Copy of p with all rates multiplied by `factor` and the mass divided by
/// factor^2, so that spring constants, thermal amplitudes and the backaction
/// ratios g/Omega^2 are unchanged. Only the time axis is rescaled.
ModalParams rescale_time(const ModalParams& p, double factor);

/// 376 fg, 113 kHz, Q = 2890, theta1 = 20 deg. The second frequency is placed
/// 40 Hz above the first; with the 532 nm beam preset this puts the onset of
/// self-oscillation near 120 uW on the off-axis vorticity lobe.
ModalParams reference_device();

/// Frequency-scaled twin used for desk-scale time-domain runs: 1 kHz and
/// 1.005 kHz, Q = 2890, stiffness of the reference device.
ModalParams desk_device();

struct Environment {
    double temperature{300.0};   // K
    double detection_floor{0.0}; // m^2/Hz, one-sided, flat

    void validate() const;
};

/// Double-sided Langevin force PSD 2 M Gamma kB T (N^2 s), with the
/// convention variance = int S dOmega / 2pi.
double thermal_force_psd(const ModalParams& p, const Environment& env);
/// One-sided per-Hz equivalent, 4 M Gamma kB T (N^2/Hz).
double thermal_force_psd_one_sided(const ModalParams& p, const Environment& env);
/// Thermal positional variance kB T / (M Omega_i^2) of mode i (0 or 1).
double equipartition_variance(const ModalParams& p, int mode, const Environment& env);

/// Scattering-force model of a focused Gaussian beam.
///
/// The force points along the local wavefront normal and its magnitude follows
/// the beam intensity, normalised so that |F| = peak_force at the focus when
/// the power equals ref_power. The field converges upstream (z < 0) and
/// diverges downstream, which gives it vorticity off axis.
struct GaussianBeamField {
    double wavelength{0.0};    // m
    double waist{0.0};         // m, 1/e^2 intensity radius at focus
    double rayleigh_range{0.0}; // m, pi w0^2 / lambda
    double peak_force{0.0};    // N
    double ref_power{0.0};     // W

    static GaussianBeamField make(double wavelength, double waist, double peak_force,
                                  double ref_power);
    /// 532 nm, w0 = 550 nm, 70 fN at 96 uW.
    static GaussianBeamField preset_532nm();
    /// 633 nm, w0 = 550 nm, 14 fN at 96 uW.
    static GaussianBeamField preset_633nm();

    void validate() const;
    double beam_radius(double z) const;
    /// Intensity relative to the focus, I(x,z)/I(0,0).
    double relative_intensity(Vec2 r) const;
    Vec2 force(Vec2 r, double power) const;
};

/// Rectilinear grid with strictly increasing coordinates. Node (i, j) sits at
/// (x[i], z[j]); values are stored with x as the slow index.
struct RectGrid {
    std::vector<double> x;
    std::vector<double> z;

    static RectGrid uniform(double x_min, double x_max, std::size_t nx, double z_min,
                            double z_max, std::size_t nz);

    std::size_t nx() const { return x.size(); }
    std::size_t nz() const { return z.size(); }
    std::size_t size() const { return x.size() * z.size(); }
    std::size_t index(std::size_t i, std::size_t j) const { return i * z.size() + j; }
    Vec2 node(std::size_t i, std::size_t j) const { return {x[i], z[j]}; }
    Vec2 node(std::size_t flat) const { return node(flat / z.size(), flat % z.size()); }
    bool contains(Vec2 r) const;
    /// Smallest spacing along either axis.
    double min_step() const;

    void validate() const;

    struct Cell {
        std::size_t i, j; // lower-left node
        double tx, tz;    // local coordinates in [0, 1]
    };
    /// Throws OutOfRangeError outside the hull.
    Cell locate(Vec2 r) const;
};

/// Tabulated force map; bilinear inside the hull, error outside.
struct TabulatedField {
    RectGrid grid;
    std::vector<Vec2> values; // N at ref_power
    double ref_power{0.0};    // W

    void validate() const;
    Vec2 force(Vec2 r, double power) const;
};

/// Static differential transmission V(r0) in volts on a grid.
struct TransmissionMap {
    RectGrid grid;
    std::vector<double> values;

    void validate() const;
    double value(Vec2 r) const;
};

/// F(r) = offset + G (r - origin) at ref_power, scaled linearly with power.
/// Synthetic test field whose gradient is known exactly.
struct LinearField {
    Vec2 origin{};
    Vec2 offset{};
    GradientMatrix gradient{};
    double ref_power{1.0};

    Vec2 force(Vec2 r, double power) const;
};

/// Any force field, evaluated at a position and optical power.
class ForceField {
public:
    using Model = std::variant<GaussianBeamField, TabulatedField, LinearField>;

    ForceField(GaussianBeamField f) : model_(std::move(f)) {}
    ForceField(TabulatedField f) : model_(std::move(f)) {}
    ForceField(LinearField f) : model_(std::move(f)) {}

    Vec2 force(Vec2 r, double power) const;
    bool contains(Vec2 r) const;
    /// Finite-difference step: w0/100 for the beam model, the grid step for
    /// tables, 1 nm for linear fields.
    double native_step() const;
    double ref_power() const;
    const Model& model() const { return model_; }

private:
    Model model_;
};

Vec2 gaussian_force(const GaussianBeamField& field, Vec2 r, double power);
Vec2 tabulated_force(const TabulatedField& field, Vec2 r, double power);

/// Eigenfrequencies (Hz) of the first n_modes flexural modes of a
/// singly-clamped cylindrical beam (Euler-Bernoulli). n_modes <= 5.
std::vector<double> cantilever_eigenfrequencies(double length, double diameter,
                                                double youngs_modulus, double density,
                                                int n_modes);

} // namespace optomech2d
