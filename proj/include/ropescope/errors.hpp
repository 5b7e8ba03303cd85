// Copyright 2026 The ropescope Authors.
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

namespace ropescope {

// Precondition violations in the numeric core are reported as
// std::invalid_argument. The classes below cover the toolkit layer, where
// each family maps onto a process exit code.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedRecordError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnknownDtypeError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class LayoutError : public FormatError {
 public:
  using FormatError::FormatError;
};

class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace exit_code {
inline constexpr int kSuccess = 0;
inline constexpr int kConfig = 2;
inline constexpr int kInputFormat = 3;
inline constexpr int kInvariant = 4;
}  // namespace exit_code

}  // namespace ropescope
