// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace napmat {

// Raised for malformed user configuration (unknown keys, bad schedules, ...).
// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised for malformed input data (images, schedule files, ...).
// The CLI maps this to exit code 3.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when tensor/grid dimensions do not line up.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace napmat
