// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace moelab {

/// Tensor shape / dimension mismatch.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Token id outside the vocabulary, or an unusable vocabulary.
struct VocabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Two artifacts (teacher/student, checkpoint/model) that cannot be combined.
struct CompatibilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A checkpoint or data file that fails structural validation.
struct CorruptionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An invalid or inconsistent run configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace moelab
