#pragma once

// Virtual force-mapping experiment: readout vectors from transmission maps,
// synthetic modulated-force measurements, inversion of the driven response
// into local force vectors, whole-map assembly and scoring, and the
// direct-vs-predicted splitting comparison.

#include "optomech2d/backaction.hpp"
#include "optomech2d/dynamics.hpp"
#include "optomech2d/errors.hpp"
#include "optomech2d/model.hpp"
#include "optomech2d/spectral.hpp"

#include <Eigen/Core>

#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace optomech2d {

/// beta = grad V at `origin`, V/m.
struct MeasurementVector {
    Vec2 beta{};
    Vec2 origin{};
    double magnitude() const { return beta.norm(); }
    Vec2 direction() const { return beta / beta.norm(); }
};

class DegenerateReadoutError : public Error {
public:
    using Error::Error;
};

/// V = v0 (x / w0) exp(-x^2 / w0^2 - z^2 / (2 zR^2)), odd in x: a stand-in for
/// a split-detector transmission map of a beam focused on the probe.
struct SyntheticTransmission {
    double v0{1.0};            // V
    double waist{550e-9};      // m
    double rayleigh_range{0.0}; // m

    static SyntheticTransmission from_beam(const GaussianBeamField& beam, double v0 = 1.0);
    double value(Vec2 r) const;
    Vec2 gradient(Vec2 r) const;
    TransmissionMap tabulate(const RectGrid& grid) const;
};

/// Central-difference gradient of the map at r0 with the grid's smallest
/// step. `beta_floor` (V/m) below which the readout is degenerate; <= 0 picks
/// 1e-9 max|V| / step.
MeasurementVector measurement_vector(const TransmissionMap& map, Vec2 r0,
                                     double beta_floor = 0.0);

struct MeasurementProtocol {
    double power{100e-6};          // W, mean power P0
    double delta_p_over_p{0.5};    // modulation depth
    double bandwidth_hz{0.0};      // demodulation bandwidth; <= 0 selects Gamma / 20 in Hz
    double noise_scale{1.0};       // 0 gives the noiseless surrogate
    double points_per_linewidth{10.0};
    double span_linewidths{10.0};
};

struct SyntheticMeasurement {
    Vec2 delta_force{};        // N, F(r0) dP / P0
    ResponseSweep sweep;       // m along e_beta
    SpectrumEstimate brownian; // analytic projected thermal spectrum
    double bandwidth_hz{0.0};
};

/// Driven response to the modulated force with phase 0, plus circular complex
/// Gaussian noise per point. Noise is thermal force noise of one-sided
/// density 4 M Gamma kB T integrated over the demodulation bandwidth, drawn
/// independently per mode and passed through chi_i (e_i . e_beta).
SyntheticMeasurement synthesize_measurement(const ModalParams& params, const ForceField& field,
                                            Vec2 r0, const MeasurementVector& beta,
                                            const MeasurementProtocol& protocol,
                                            const std::vector<double>& omegas,
                                            const Environment& env, std::uint64_t seed);

struct ForceMeasurement {
    double magnitude{0.0};   // N
    double direction{0.0};   // rad, lab frame
    double phase{0.0};       // rad in (-pi/2, pi/2]
    double sigma_magnitude{0.0};
    double sigma_direction{0.0};
    double sigma_phase{0.0};
    double snr{0.0};
    double phase_spread{0.0}; // rad, phase difference between the two projections
    std::array<std::complex<double>, 2> amplitude{};  // fitted C_i, N
    std::array<std::complex<double>, 2> projection{}; // dF . e_i including phase, N
    Eigen::Matrix4d covariance{Eigen::Matrix4d::Zero()}; // Re C1, Im C1, Re C2, Im C2

    Vec2 force() const { return magnitude * unit_vector(direction); }
};

class PartialResultError : public Error {
public:
    PartialResultError(const std::string& what, int unconstrained_mode)
        : Error(what), mode_(unconstrained_mode) {}
    /// 0 for e1, 1 for e2.
    int unconstrained_mode() const noexcept { return mode_; }

private:
    int mode_;
};

/// Least squares for C_i in dr_beta = sum_i chi_i C_i, then dF . e_i =
/// C_i / (e_i . e_beta). Needs >= 4 points; throws PartialResultError when
/// |e_i . e_beta| < 0.05 for a mode.
ForceMeasurement fit_force(const ResponseSweep& sweep, const ModalParams& params,
                           const MeasurementVector& beta);

struct ForceMapOptions {
    MeasurementProtocol protocol;
    double snr_threshold{10.0};
    bool compare_to_truth{true};
    unsigned threads{1};
    double beta_floor{0.0};
};

struct ForceErrorStats {
    double rms_angle_error{0.0};     // rad
    double rms_magnitude_error{0.0}; // relative
    double max_relative_error{0.0};  // over all measured nodes, magnitude-normalised vector error
    std::size_t n_used{0};           // nodes with snr above threshold
    std::size_t n_measured{0};
};

struct ForceMap {
    RectGrid grid;
    std::vector<std::optional<ForceMeasurement>> nodes; // grid.index order
    std::vector<std::string> gap_reason;                 // empty for measured nodes
    std::vector<Vec2> truth;                             // N, dF at each node
    std::vector<double> readout_overlap;                 // |e1 . e_beta| per node
    std::optional<ForceErrorStats> stats;
    std::size_t gaps() const;
};

ForceMap map_force_field(const ModalParams& params, const ForceField& field,
                         const TransmissionMap& tmap, const RectGrid& grid,
                         const ForceMapOptions& options, const Environment& env,
                         std::uint64_t seed);

/// Pauli coefficient maps from central differences of a sampled vector field
/// (edge nodes use one-sided differences). NaN where a neighbour is missing.
struct PauliMaps {
    std::vector<double> c0, cx, cy, cz; // grid.index order
};

PauliMaps pauli_maps(const RectGrid& grid, const std::vector<Vec2>& forces);

/// Pearson correlation over indices where both maps are finite.
double map_correlation(const std::vector<double>& a, const std::vector<double>& b);

enum class SpectrumSource {
    // Exact coupled-mode spectrum with chi-square(2 n_segments) bin scatter.
    frequency_domain,
    // Langevin simulation in the full field, then Welch.
    time_domain,
};

struct SplittingOptions {
    SpectrumSource source{SpectrumSource::frequency_domain};
    std::optional<Vec2> e_beta;   // default (e1 + e2) / sqrt 2
    int n_segments{200};
    double bins_per_linewidth{9.0}; // frequency-domain grid density
    std::size_t segment_len{0};   // time domain; 0 picks the smallest power of two with bin <= Gamma / 9
    unsigned threads{1};
};

struct SplittingComparison {
    RectGrid grid;
    std::vector<std::optional<double>> direct;    // rad/s, Omega_+ - Omega_- from the fit
    std::vector<std::optional<double>> predicted; // rad/s, Re splitting_approx
    std::vector<std::string> excluded;            // reason per node, empty when used (unstable, complex splitting, fit failure)
    double bare_splitting{0.0};                   // rad/s
    double rms_relative_deviation{0.0};           // RMS of (direct - predicted) / predicted
    double rms_shift_deviation{0.0};              // RMS(direct - predicted) / RMS(predicted - bare)
    std::size_t n_used{0};
    std::size_t n_below_bare{0};                  // nodes with both maps below the bare value
};

SplittingComparison splitting_comparison(const ModalParams& params, const ForceField& field,
                                         const RectGrid& grid, double power,
                                         const Environment& env, std::uint64_t seed,
                                         const SplittingOptions& options = {});

} // namespace optomech2d
