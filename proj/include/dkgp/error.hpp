/*
 * Copyright 2026 The dkgp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dkgp {

enum class ErrorKind {
  Schema,
  Parse,
  DuplicateVisit,
  Config,
  Split,
  History,
  Shape,
  Factorization,
  Optimizer,
  Cache,
  Training,
  Fit,
  Format,
  GridCoverage,
  Benchmark,
  Parameter,
  Io,
  Leakage,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Every recoverable failure in the library surfaces as one of these.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
        kind_(kind),
        detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

inline std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::DuplicateVisit: return "duplicate-visit";
    case ErrorKind::Config: return "config";
    case ErrorKind::Split: return "split";
    case ErrorKind::History: return "history";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Factorization: return "factorization";
    case ErrorKind::Optimizer: return "optimizer";
    case ErrorKind::Cache: return "cache";
    case ErrorKind::Training: return "training";
    case ErrorKind::Fit: return "fit";
    case ErrorKind::Format: return "format";
    case ErrorKind::GridCoverage: return "grid-coverage";
    case ErrorKind::Benchmark: return "benchmark";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Io: return "io";
    case ErrorKind::Leakage: return "split leakage";
  }
  return "unknown";
}

}  // namespace dkgp
