#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cshape {

/// Every stochastic routine takes one of these by reference; nothing seeds itself.
using Rng = std::mt19937_64;

using RealVec = std::vector<double>;

/// Raised when a configuration document is structurally valid JSON but semantically wrong.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by file readers. Carries the 1-based line where parsing stopped.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A state has no admissible action for a solver (no observed (s, x) pair).
class CoverageError : public std::runtime_error {
public:
    CoverageError(const std::string& what, int state)
        : std::runtime_error(what), state_(state) {}

    int state() const noexcept { return state_; }

private:
    int state_;
};

/// A training loop produced a NaN or diverged; the message carries diagnostics.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double standard_normal(Rng& rng) {
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

/// Inverse-CDF categorical draw. Probabilities need not be normalized exactly;
/// the last index with positive mass absorbs rounding.
inline int sample_categorical(const RealVec& probs, Rng& rng) {
    const double r = uniform01(rng);
    double acc = 0.0;
    int last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last_positive = static_cast<int>(i);
        acc += probs[i];
        if (r < acc) return last_positive;
    }
    return last_positive;
}

}  // namespace cshape
