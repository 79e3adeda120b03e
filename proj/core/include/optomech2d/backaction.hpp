#pragma once

// Consequences of the force-gradient matrix: effective stiffness, exact
// damped eigenmodes, approximate splitting, Pauli decomposition, work per
// cycle, instability thresholds and maps.

#include "optomech2d/errors.hpp"
#include "optomech2d/model.hpp"
#include "optomech2d/spectral.hpp"

#include <Eigen/Core>

#include <array>
#include <complex>
#include <optional>
#include <vector>

namespace optomech2d {

/// K = [[W1^2 - g11, -g21], [-g12, W2^2 - g22]] in the e1/e2 frame, rad^2/s^2,
/// with g_ij = (1/M) d_i F_j. The linearised motion is q'' = -K q - Gamma q'.
struct EffectiveStiffness {
    Eigen::Matrix2d k{Eigen::Matrix2d::Zero()};
    Eigen::Matrix2d coupling{Eigen::Matrix2d::Zero()}; // g_ij, rad^2/s^2

    double discriminant() const; // (K11 - K22)^2 + 4 K12 K21
    bool finite() const { return k.allFinite(); }
};

/// Rotates the lab gradient G (given at the reference power) into the e1/e2
/// frame, scales it by power_scale = P / P_ref and divides by M.
EffectiveStiffness effective_stiffness(const ModalParams& params, const GradientMatrix& G,
                                       double power_scale = 1.0);

/// (1 / 2 mean Omega) sqrt(discriminant), principal root.
std::complex<double> splitting_approx(const ModalParams& params, const EffectiveStiffness& K);

struct ModeEllipse {
    double major{1.0};       // normalised to 1
    double minor{0.0};       // minor / major
    double orientation{0.0}; // rad in [0, pi), lab frame
    int handedness{0};       // sign Im(v_x conj v_z); 0 for linear modes
};

/// Damped eigenmodes. Index 0 is the "minus" mode (lower Omega_eff, or lower
/// Gamma_eff when the frequencies coincide), index 1 the "plus" mode.
/// Each lambda is the representative with Im lambda >= 0; its conjugate is
/// the other root of the pair.
struct StabilityReport {
    std::array<std::complex<double>, 2> lambda{};
    double omega_minus{0.0}; // rad/s, |Im lambda|
    double omega_plus{0.0};
    double gamma_minus{0.0}; // rad/s, -2 Re lambda
    double gamma_plus{0.0};
    std::complex<double> splitting{};
    bool unstable{false};    // max Re lambda > 0
    std::array<ModeEllipse, 2> ellipses{};
};

StabilityReport exact_modes(const ModalParams& params, const EffectiveStiffness& K);

/// Lab-frame decomposition G = c0 1 + cx sx + cy (i sy) + cz sz with the
/// matrix arranged as [[dxFx, dzFx], [dxFz, dzFz]] (the map dr -> dF) and
/// i sy = [[0, 1], [-1, 0]]. N/m.
struct PauliDecomposition {
    double c0{0.0}; // divergence / 2
    double cx{0.0}; // symmetric shear
    double cy{0.0}; // rotational, (dzFx - dxFz) / 2
    double cz{0.0}; // normal shear
    GradientMatrix reconstruct() const;
};

PauliDecomposition pauli_decompose(const GradientMatrix& G);

/// Work done by the linear field over one turn of the ellipse
/// (a cos t, b sin t): sense * pi a b (dxFz - dzFx). sense = +1 is
/// counterclockwise in the (x, z) plane.
double work_per_cycle(const GradientMatrix& G, double a, double b, int sense);

/// Exact modes of the field linearised at r (no static deflection).
StabilityReport stability_at(const ModalParams& params, const ForceField& field, Vec2 r,
                             double power);

/// Smallest power in (0, p_max] with max Re lambda > 0, to 0.1% relative
/// (coarse scan of 200 powers, then bisection). Gradients are taken once at
/// the field's reference power and scaled linearly.
std::optional<double> threshold_power(const ModalParams& params, const ForceField& field,
                                      Vec2 r0, double p_max);

struct ThresholdSearch {
    std::optional<double> power; // W, minimum over the grid
    Vec2 location{};             // where it is reached
    std::vector<std::optional<double>> per_node;
};

ThresholdSearch minimum_threshold(const ModalParams& params, const ForceField& field,
                                  const RectGrid& grid, double p_max, unsigned threads = 1);

struct StabilityMapOptions {
    unsigned threads{1};
    bool refine_boundary{true}; // one subdivision level on sign-changing cells
};

struct StabilityMap {
    RectGrid grid;
    std::vector<StabilityReport> reports; // grid.index(i, j)
    double area{0.0};                     // m^2 of the unstable region
    std::vector<std::vector<Vec2>> contours; // Gamma_minus = 0 polylines
    bool any_unstable() const;
};

/// Exact modes at every node, unstable area by cell counting with linear
/// edge interpolation, and the Gamma_minus = 0 contours by marching squares.
StabilityMap stability_map(const ModalParams& params, const ForceField& field,
                           const RectGrid& grid, double power,
                           const StabilityMapOptions& options = {});

/// Second-order model of Gamma_minus around its spatial minimum:
/// area = 2 pi s0 / sqrt(det H) with s0 = -Gamma_minus(min).
struct QuadraticAreaEstimate {
    Vec2 minimum{};
    double gamma_min{0.0}; // rad/s
    Eigen::Matrix2d hessian{Eigen::Matrix2d::Zero()}; // rad/s/m^2
    double area{0.0};      // m^2, 0 when gamma_min >= 0
};

QuadraticAreaEstimate quadratic_area_estimate(const ModalParams& params,
                                              const ForceField& field, Vec2 start,
                                              double power, double step);

/// One-sided per-Hz spectrum of the readout along e_beta for the coupled
/// linear system q'' = -K q - Gamma q' + dF_th / M (thermal forces
/// independent per mode), plus the detection floor.
SpectrumEstimate coupled_projected_psd(const ModalParams& params, const EffectiveStiffness& K,
                                       Vec2 e_beta, const std::vector<double>& freqs_hz,
                                       const Environment& env);

} // namespace optomech2d
