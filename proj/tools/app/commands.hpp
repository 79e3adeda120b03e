#pragma once

#include "config.hpp"
#include "output.hpp"

#include <string>

namespace optomech2d::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_validation = 2,
    exit_numerical = 3,
    exit_assertion = 4,
};

struct Context {
    RunConfig config;
    ArtifactWriter out;
    unsigned threads{0};
    bool assert_mode{false};
};

/// Each returns an exit code; library exceptions propagate to the caller.
int cmd_simulate(const Context& ctx);
int cmd_psd(const Context& ctx);
int cmd_map_force(const Context& ctx);
int cmd_stability(const Context& ctx);
int cmd_threshold(const Context& ctx);
int cmd_splitting(const Context& ctx);

} // namespace optomech2d::cli
