#pragma once

// Spectral estimation and calibration.
//
// Convention: internal spectral densities are double-sided in angular
// frequency with variance = int S dOmega / 2pi. Every SpectrumEstimate handed
// out by this header is one-sided per Hz (the double-sided value folded, x2,
// evaluated at Omega = 2 pi f), and says so in its `convention` tag.

#include "optomech2d/errors.hpp"
#include "optomech2d/model.hpp"

#include <span>
#include <vector>

namespace optomech2d {

enum class SpectrumConvention { one_sided_per_hz, double_sided_per_rad };

struct SpectrumEstimate {
    std::vector<double> freqs; // Hz, strictly increasing, >= 0
    std::vector<double> psd;   // m^2/Hz
    SpectrumConvention convention{SpectrumConvention::one_sided_per_hz};
    int n_segments{0};         // 0 for analytic spectra
    double resolution_bw{0.0}; // Hz, equivalent noise bandwidth of the window
    double frequency_step{0.0}; // Hz, bin spacing
    // Variance of the analysed signal after window-power correction, computed
    // in the time domain. Parseval ties it to sum(psd) * frequency_step.
    double windowed_variance{0.0};

    /// Riemann sum of psd over the bins, m^2.
    double integrated_power() const;
};

class NoResonanceError : public Error {
public:
    using Error::Error;
};

/// Hann-windowed averaged periodogram with per-segment mean removal and
/// window-power compensation. segment_len must be a power of two no longer
/// than the series; 0 <= overlap < 1.
SpectrumEstimate welch_psd(std::span<const double> series, double dt,
                           std::size_t segment_len, double overlap = 0.5);

/// Sum_i (e_i . e_beta)^2 |chi_i|^2 S_F + detection floor, one-sided per Hz.
SpectrumEstimate analytic_projected_psd(const ModalParams& params, Vec2 e_beta,
                                        const std::vector<double>& freqs_hz,
                                        const Environment& env);

struct DoubletFit {
    double omega_plus{0.0};  // rad/s, omega_plus >= omega_minus
    double omega_minus{0.0};
    double gamma_plus{0.0};  // rad/s
    double gamma_minus{0.0};
    double area_plus{0.0};   // m^2, integrated peak power
    double area_minus{0.0};
    // Thermal energy seen through the readout, M Omega^2 area (J); equals
    // kB T (e_i . e_beta)^2 for a thermalised mode.
    double projected_energy_plus{0.0};
    double projected_energy_minus{0.0};
    double floor{0.0};       // m^2/Hz
    double residual{0.0};    // normalised chi^2 of relative residuals
    bool merged{false};      // peaks closer than the resolution bandwidth
    int iterations{0};
};

struct DoubletFitOptions {
    bool fit_floor{false}; // otherwise the floor is held at env.detection_floor
    int max_iterations{500};
    double parameter_tolerance{1e-8};
    double window_linewidths{20.0};
};

/// Least-squares fit of  sum_pm a/((W^2 - w^2)^2 + w^2 G^2) + floor  on a
/// +-20 Gamma window around the doublet, started from the two highest peaks
/// (or one peak split by +- resolution_bw when they are merged).
///
/// Throws NoResonanceError when nothing stands 3x above the floor and
/// ConvergenceError when the iteration budget runs out.
DoubletFit fit_doublet(const SpectrumEstimate& spectrum, double mass, const Environment& env,
                       const DoubletFitOptions& options = {});

/// Effective mass kB T / (variance Omega^2).
double equipartition_mass(double variance, double omega, const Environment& env);

struct OrientationFit {
    double theta1{0.0};       // rad in [0, pi)
    double theta2{0.0};       // rad in [0, pi)
    double amplitude1{0.0};   // m
    double amplitude2{0.0};
    double angle_between{0.0}; // (theta2 - theta1) mod pi, rad
};

/// Fits rms_i(angle) = A_i |cos(angle - theta_i)| per mode. Needs >= 8
/// distinct readout angles spanning more than pi/2.
OrientationFit orientation_fit(std::span<const double> angles,
                               std::span<const std::pair<double, double>> rms_pairs);

} // namespace optomech2d
