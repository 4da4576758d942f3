// Copyright 2026 The safe-cf Authors. All Rights Reserved.
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

namespace safe {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input tensor did not have the shape the receiver expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (bad flags, empty datasets, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A request that is well-formed but semantically invalid, e.g. a
/// counterfactual whose target label equals the current label.
class InvalidRequest : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity showed up where a finite value is required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Metric evaluated on an input for which it is undefined (e.g. no pairs).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

/// Failure reading or writing files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace safe
