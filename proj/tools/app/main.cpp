#include "commands.hpp"
#include "config.hpp"
#include "output.hpp"

#include "optomech2d/dynamics.hpp"
#include "optomech2d/spectral.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>

#ifndef OPTOMECH2D_VERSION
#define OPTOMECH2D_VERSION "0.0.0"
#endif

using namespace optomech2d;
using namespace optomech2d::cli;

int main(int argc, char** argv) {
    CLI::App app{"Two-mode optomechanical probe toolkit: simulation, force mapping and backaction"};
    app.set_version_flag("--version", std::string(OPTOMECH2D_VERSION));
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    unsigned threads = 0;
    bool assert_mode = false;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides simulation.seed)");
    app.add_option("--out", out_dir, "output directory (overrides output.directory)");
    app.add_option("--threads", threads, "worker threads, 0 = all cores");
    app.add_flag("--assert", assert_mode, "exit 4 when acceptance thresholds are missed");

    const std::map<std::string, std::pair<std::string, std::function<int(const Context&)>>> commands{
        {"simulate", {"Langevin run, trajectory and Welch spectrum", cmd_simulate}},
        {"psd", {"analytic spectrum of the linearised doublet", cmd_psd}},
        {"map-force", {"virtual force-mapping experiment", cmd_map_force}},
        {"stability", {"stability map, threshold and area vs power", cmd_stability}},
        {"threshold", {"self-oscillation threshold over the grid", cmd_threshold}},
        {"splitting", {"direct vs predicted splitting maps", cmd_splitting}},
    };
    for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.first)->fallthrough();
    app.require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_validation;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        RunConfig cfg = config_path.empty() ? parse_config(nlohmann::json::object())
                                            : load_config(config_path);
        if (seed_opt->count() > 0) cfg.simulation.seed = seed;
        if (!out_dir.empty()) cfg.output_dir = out_dir;

        nlohmann::json eff = cfg.effective();
        nlohmann::json hashed = eff;
        hashed.erase("output");
        const Provenance prov{OPTOMECH2D_VERSION, sha256_hex(hashed.dump()), cfg.simulation.seed};
        ArtifactWriter writer(cfg.output_dir, prov);
        writer.json("effective_config.json", eff);

        const Context ctx{cfg, writer, threads, assert_mode};
        return commands.at(command).second(ctx);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_validation;
    } catch (const InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << '\n';
        return exit_validation;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return exit_validation;
    } catch (const OutOfRangeError& e) {
        std::cerr << "out of range: " << e.what() << '\n';
        return exit_validation;
    } catch (const ConvergenceError& e) {
        std::cerr << "no convergence: " << e.what() << '\n';
        return exit_numerical;
    } catch (const NoResonanceError& e) {
        std::cerr << "no resonance: " << e.what() << '\n';
        return exit_numerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
}
