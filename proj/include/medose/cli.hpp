#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "medose/errors.hpp"

namespace medose::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
    exit_ok = 0,
    exit_config = 1,
    exit_data = 2,
    exit_nonconvergence = 3,
    exit_numeric = 4,
};

int exit_code_for(ErrorKind kind);

/// Runs one subcommand (fit, ed, rp, predict, simulate). `args` excludes the
/// program name. Results go to --out or `out`; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace medose::cli
