#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace ovb {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IndexVector = Eigen::VectorXi;

// All library failures are reported as ovb::Error; `kind` is a stable
// machine-readable tag that the CLI copies into its error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

// SplitMix64 finalizer. Used to derive independent seeds for folds,
// replications and trees from a single user seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Number of worker threads used by parallel_for. Defaults to 1.
void set_num_threads(int n);
int num_threads();

// Runs body(i) for i in [0, count). Each index is processed exactly once;
// callers write results into index-addressed slots so the output does not
// depend on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

double mean(const Vector& v);
// Population variance (divisor n).
double variance(const Vector& v);
double correlation(const Vector& a, const Vector& b);

// Standard normal quantile and cdf.
double normal_quantile(double p);
double normal_cdf(double x);

}  // namespace ovb
