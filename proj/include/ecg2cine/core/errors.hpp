// Copyright 2026 The ecg2cine Authors
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

#ifndef ECG2CINE_CORE_ERRORS_HPP_
#define ECG2CINE_CORE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace ecg2cine {

// Base error. Subclasses map onto CLI exit codes (see pipeline/cli).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A value outside its documented range (rates, ratios, step counts, ...).
class ParamError : public Error {
 public:
  using Error::Error;
};

// Array dimensions incompatible with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// No usable beat/cycle structure in a signal (too few peaks, no full
// phase traversal, degenerate cycle).
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// Empty or unusable dataset/split.
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem or archive failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed configuration; message names the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A required upstream artifact is missing; message names the path.
class DependencyError : public Error {
 public:
  using Error::Error;
};

// Metric undefined for the given inputs (e.g. AUC on single-class labels).
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace ecg2cine

#endif  // ECG2CINE_CORE_ERRORS_HPP_
