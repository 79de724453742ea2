// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace maskgram {

/// Violated precondition or malformed input. CLI exit code 1.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or conflicting configuration keys. Maps to exit code 1 like contract errors.
class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// File system or format failure. CLI exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values detected during a forward/backward pass or optimizer step.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MASKGRAM_REQUIRE(cond, msg)                          \
  do {                                                       \
    if (!(cond)) throw ::maskgram::ContractError(msg);       \
  } while (0)

}  // namespace maskgram
