#pragma once

#include "optomech2d/dynamics.hpp"
#include "optomech2d/model.hpp"
#include "optomech2d/reconstruct.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace optomech2d::cli {

/// Validation failure; the message starts with the offending field path.
class ConfigError : public Error {
public:
    ConfigError(const std::string& path, const std::string& what)
        : Error(path + ": " + what), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

enum class FieldKind { none, gaussian, tabulated, linear };

struct BeamConfig {
    FieldKind kind{FieldKind::gaussian};
    std::string preset{"532nm"};
    GaussianBeamField gaussian{GaussianBeamField::preset_532nm()};
    std::string path;        // tabulated force map CSV
    double ref_power{0.0};   // W, tabulated and linear
    LinearField linear;
};

struct TransmissionConfig {
    bool synthetic{true};
    double v0{1.0};          // V
    double spacing{10e-9};   // m, tabulation step of the synthetic map
    std::string path;
};

struct SimulationConfig {
    double dt{0.0};               // 0 selects the largest allowed step
    double duration{0.0};         // 0 selects 2000 / Gamma
    std::uint64_t seed{1};
    std::size_t decimation{0};    // 0 selects ~2.5 samples per period of the faster mode
    Integrator integrator{Integrator::exact_linear_splitting};
    std::optional<double> readout_angle; // rad; default (e1 + e2) / sqrt 2
    std::size_t segment_len{0};   // 0 selects bins of <= Gamma / 9
    double overlap{0.5};
    Vec2 position{};              // m, rest position r0 in the field
    Vec2 initial_displacement{};  // m, on top of the static deflection
    bool write_trajectory{true};
    std::size_t trajectory_stride{0}; // 0 keeps at most 200000 rows
};

struct ProtocolConfig {
    MeasurementProtocol protocol;
    double snr_threshold{10.0};
    bool compare_to_truth{true};
    TransmissionConfig transmission;
};

struct StabilityConfig {
    double p_max{1e-3};                  // W
    std::vector<double> power_factors{0.5, 0.9, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0};
    bool quadratic_overlay{true};
};

struct SplittingConfig {
    SpectrumSource source{SpectrumSource::frequency_domain};
    int n_segments{200};
    std::optional<double> readout_angle; // rad
};

struct RunConfig {
    std::string device_preset{"desk"};
    ModalParams device{desk_device()};
    BeamConfig beam;
    double power{100e-6}; // W
    Environment env;
    SimulationConfig simulation;
    RectGrid grid{RectGrid::uniform(-0.8e-6, 0.8e-6, 20, -1.5e-6, 1.5e-6, 20)};
    ProtocolConfig protocol;
    StabilityConfig stability;
    SplittingConfig splitting;
    std::string output_dir{"out"};

    /// Normalised copy in SI units with every default resolved.
    nlohmann::json effective() const;
    /// Force field described by `beam`, or nullopt for kind none.
    std::optional<ForceField> make_field() const;
    TransmissionMap make_transmission() const;
};

RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

} // namespace optomech2d::cli
