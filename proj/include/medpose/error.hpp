// Copyright 2026 The medpose Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace medpose {

enum class ErrorKind {
  kParse,       // malformed input file
  kValidation,  // well-formed input violating an invariant
  kConfig,      // invalid configuration values
  kShape,       // tensor shape mismatch at runtime
  kNumeric,     // non-finite values, divergence, singular matrices
  kIo,          // unreadable / unwritable files
  kFormat,      // binary format errors (bad magic, truncation, version)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string subject = {})
      : std::runtime_error(message), kind_(kind), subject_(std::move(subject)) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The offending entity (file path, parameter name, ...), possibly empty.
  const std::string& subject() const noexcept { return subject_; }

 private:
  ErrorKind kind_;
  std::string subject_;
};

const char* to_string(ErrorKind kind) noexcept;

/// Process exit code for an error kind: 2 config/validation, 3 runtime/numeric, 4 I/O.
int exit_code(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message,
                              std::string subject = {}) {
  throw Error(kind, message, std::move(subject));
}

}  // namespace medpose
