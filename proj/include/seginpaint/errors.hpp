// Copyright 2026 The seginpaint Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SEGINPAINT_ERRORS_HPP
#define SEGINPAINT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace seginpaint {

// Bad configuration values or tables (unmapped ids, non-positive widths, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable / unwritable files. The message always names the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed user data: decoded rasters, label edits, masks.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint digest mismatch or truncated container.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace seginpaint

#endif  // SEGINPAINT_ERRORS_HPP
