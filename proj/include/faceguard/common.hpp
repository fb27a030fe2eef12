// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <concepts>
#include <stdexcept>
#include <string>

namespace faceguard {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and cache formats assume a little-endian host");

template <class T>
concept Scalar = std::floating_point<T>;

// Base error. Subclasses map to CLI exit codes: ValidationError and
// ShapeError exit 2, everything else exits 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed config, violated preconditions, schema issues.
struct ValidationError : Error {
  using Error::Error;
};

// Filesystem problems: missing files, unreadable/unwritable paths.
struct IoError : Error {
  using Error::Error;
};

// Byte-level problems in an otherwise present file (undecodable image,
// corrupt checkpoint).
struct FormatError : Error {
  using Error::Error;
};

// Tensor/network dimension mismatches.
struct ShapeError : Error {
  using Error::Error;
};

// Degenerate numeric input (zero-norm vector, empty reduction).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace faceguard
