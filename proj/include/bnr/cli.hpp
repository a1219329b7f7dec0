// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace bnr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitValidation = 2;

/// Runs the command line `args` (args[0] is the program name). Reports go to
/// `out`, diagnostics and warnings to `err`. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

} // namespace bnr::cli
