// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: analyze, search, simulate, gen-trace.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "nbsim/specs.h"

namespace nbsim::cli {

// Environment variable naming the default directory for spec files.
inline constexpr const char* kConfigDirEnv = "NBSIM_CONFIG_DIR";

// Runs one command. Returns the process exit status; diagnostics go to err.
int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err);

// Resolves a spec reference: an existing file, a file in $NBSIM_CONFIG_DIR
// (with or without .yaml), or a built-in catalog name.
HardwareSpec resolve_hardware(std::string_view ref);
ModelConfig resolve_model(std::string_view ref);
WorkloadStats resolve_workload(std::string_view ref);

}  // namespace nbsim::cli
