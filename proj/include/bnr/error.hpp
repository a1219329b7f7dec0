// Copyright (c) 2026, the bnr authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>
#include <string>

namespace bnr {

/// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad shapes, out-of-range parameters, corrupt manifests.
/// The CLI maps this to exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure (missing file, unwritable directory). Exit code 1.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace bnr
