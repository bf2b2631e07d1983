#include "mvsde/stats.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "mvsde/errors.hpp"

namespace mvsde {

void RunningMoments::push(double x) {
    if (!std::isfinite(x)) throw NumericError("RunningMoments::push: non-finite sample");
    ++count_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
}

void RunningMoments::merge(const RunningMoments& other) noexcept {
    if (other.count_ == 0) return;
    if (count_ == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(count_);
    const double nb = static_cast<double>(other.count_);
    const double n = na + nb;
    const double delta = other.mean_ - mean_;
    mean_ += delta * (nb / n);
    m2_ += other.m2_ + delta * delta * (na * nb / n);
    count_ += other.count_;
}

double RunningMoments::variance() const noexcept {
    if (count_ < 2) return 0.0;
    return std::max(0.0, m2_ / static_cast<double>(count_ - 1));
}

double RunningMoments::standard_error() const noexcept {
    if (count_ == 0) return 0.0;
    return std::sqrt(variance() / static_cast<double>(count_));
}

RunningMoments merge(RunningMoments a, const RunningMoments& b) noexcept {
    a.merge(b);
    return a;
}

RunningMoments moments_of(std::span<const double> values) {
    RunningMoments m;
    for (double v : values) m.push(v);
    return m;
}

RateFit loglog_fit(std::span<const RatePoint> points, bool skip_first) {
    if (skip_first && !points.empty()) points = points.subspan(1);
    std::set<double> distinct;
    for (const auto& p : points) {
        if (!(p.x > 0.0) || !(p.y > 0.0)) {
            throw DomainError("loglog_fit: points must be positive (got x=" + std::to_string(p.x) +
                              ", y=" + std::to_string(p.y) + ")");
        }
        distinct.insert(p.x);
    }
    if (distinct.size() < 2) throw DegeneracyError("loglog_fit: need at least two distinct x values");

    const double n = static_cast<double>(points.size());
    double mx = 0.0, my = 0.0;
    for (const auto& p : points) {
        mx += std::log(p.x);
        my += std::log(p.y);
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& p : points) {
        const double dx = std::log(p.x) - mx;
        const double dy = std::log(p.y) - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    RateFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    // Constant y is fitted exactly by a zero slope.
    fit.r_squared = syy == 0.0 ? 1.0 : std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
    return fit;
}

double normal_quantile(double confidence) {
    if (confidence == 0.90) return 1.6448536269514722;
    if (confidence == 0.95) return 1.959963984540054;
    if (confidence == 0.99) return 2.5758293035489004;
    throw ConfigError("normal_ci: unsupported confidence " + std::to_string(confidence) +
                      " (use 0.90, 0.95 or 0.99)");
}

std::pair<double, double> normal_ci(const RunningMoments& moments, double confidence) {
    const double z = normal_quantile(confidence);
    if (moments.count() < 2) throw DegeneracyError("normal_ci: need at least two samples");
    const double half = z * moments.standard_error();
    return {moments.mean() - half, moments.mean() + half};
}

std::pair<double, double> variance_ci(std::span<const double> values, double confidence) {
    const auto base = moments_of(values);
    if (base.count() < 2) throw DegeneracyError("variance_ci: need at least two samples");
    const double n = static_cast<double>(base.count());
    RunningMoments squared;
    for (double v : values) {
        const double dev = v - base.mean();
        squared.push(dev * dev * n / (n - 1.0));
    }
    const double z = normal_quantile(confidence);
    const double half = z * squared.standard_error();
    const double var = base.variance();
    return {std::max(0.0, var - half), var + half};
}

}  // namespace mvsde
