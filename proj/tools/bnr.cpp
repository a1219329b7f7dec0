// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#include "bnr/cli.hpp"

int main(int argc, char** argv) {
    return bnr::cli::run({argv, argv + argc});
}
