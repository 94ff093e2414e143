#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mfl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct PreconditionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// integrator step underflow or Newton stagnation
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IntegrationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct HypothesisError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RefusalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Counter-based generator: every draw is a pure function of (seed, stream, index).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    std::uint64_t bits(std::uint64_t index) const;
    double uniform(std::uint64_t index) const;  // [0,1)
    double normal(std::uint64_t index) const;

    // sequential convenience wrappers
    double next_uniform() { return uniform(counter_++); }
    double next_normal() { return normal(counter_++); }
    CounterRng substream(std::uint64_t k) const { return CounterRng(seed_, stream_ * 0x9E3779B97F4A7C15ULL + k + 1); }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

Vec random_normal_vector(CounterRng& rng, int n);

}  // namespace mfl
