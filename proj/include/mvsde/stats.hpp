#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace mvsde {

// Streaming count/mean/M2 (Welford) with the Chan et al. pairwise merge.
class RunningMoments {
public:
    RunningMoments() = default;

    // Throws NumericError on non-finite input.
    void push(double x);
    void merge(const RunningMoments& other) noexcept;

    [[nodiscard]] std::uint64_t count() const noexcept { return count_; }
    [[nodiscard]] double mean() const noexcept { return mean_; }
    [[nodiscard]] double m2() const noexcept { return m2_; }

    // Unbiased sample variance m2/(n-1); zero for fewer than two samples.
    [[nodiscard]] double variance() const noexcept;
    // sqrt(variance / count)
    [[nodiscard]] double standard_error() const noexcept;

private:
    std::uint64_t count_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

[[nodiscard]] RunningMoments merge(RunningMoments a, const RunningMoments& b) noexcept;

// Pushes values in index order.
[[nodiscard]] RunningMoments moments_of(std::span<const double> values);

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

struct RatePoint {
    double x;
    double y;
};

// Ordinary least squares of log y on log x. With `skip_first` the first point is
// dropped (pre-asymptotic coarsest level).
[[nodiscard]] RateFit loglog_fit(std::span<const RatePoint> points, bool skip_first = false);

// Two-sided normal quantile for confidence 0.90, 0.95 or 0.99.
[[nodiscard]] double normal_quantile(double confidence);

// mean -/+ z * standard error
[[nodiscard]] std::pair<double, double> normal_ci(const RunningMoments& moments, double confidence = 0.95);

// Normal-approximation interval for the unbiased variance of `values`, built from
// the per-sample squared deviations. Returns (lo, hi).
[[nodiscard]] std::pair<double, double> variance_ci(std::span<const double> values, double confidence = 0.95);

}  // namespace mvsde
