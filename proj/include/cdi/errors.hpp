#pragma once

#include <stdexcept>
#include <string>

namespace cdi {

// Feature extraction produced a non-finite value or otherwise failed
// numerically. Samples hitting this are excluded downstream, not imputed.
class ExtractionFailure : public std::runtime_error {
public:
    explicit ExtractionFailure(const std::string& what) : std::runtime_error(what) {}
};

// A white-box feature was requested from a model surface that does not
// expose input gradients. Distinct from numeric failure on purpose.
class AccessViolation : public std::runtime_error {
public:
    explicit AccessViolation(const std::string& what) : std::runtime_error(what) {}
};

// Training loss went non-finite.
class TrainingDiverged : public std::runtime_error {
public:
    explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cdi
