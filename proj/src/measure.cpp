#include "mvsde/measure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mvsde/errors.hpp"

namespace mvsde {

ParticleCloud::ParticleCloud(std::size_t m, std::size_t d, double fill) : m_(m), d_(d), positions_(m * d, fill) {
    if (m == 0 || d == 0) throw ShapeError("particle cloud needs m >= 1 and d >= 1");
}

ParticleCloud::ParticleCloud(std::size_t m, std::size_t d, std::vector<double> positions)
    : m_(m), d_(d), positions_(std::move(positions)) {
    if (m == 0 || d == 0) throw ShapeError("particle cloud needs m >= 1 and d >= 1");
    if (positions_.size() != m * d) {
        throw ShapeError("particle cloud expects " + std::to_string(m * d) + " entries, got " +
                         std::to_string(positions_.size()));
    }
}

ParticleCloud ParticleCloud::filled(std::size_t m, std::span<const double> point) {
    ParticleCloud cloud(m, point.size());
    for (std::size_t i = 0; i < m; ++i) std::copy(point.begin(), point.end(), cloud.particle(i).begin());
    return cloud;
}

ParticleCloud ParticleCloud::from_scalars(std::vector<double> xs) {
    const auto m = xs.size();
    return ParticleCloud(m, 1, std::move(xs));
}

bool ParticleCloud::all_finite() const noexcept {
    return std::all_of(positions_.begin(), positions_.end(), [](double v) { return std::isfinite(v); });
}

double moment_w2(const ParticleCloud& mu) {
    double acc = 0.0;
    for (double v : mu.positions()) acc += v * v;
    return std::sqrt(acc / static_cast<double>(mu.size()));
}

double w2_to_dirac(const ParticleCloud& mu, std::span<const double> point) {
    if (point.size() != mu.dim()) {
        throw ShapeError("w2_to_dirac: point has dimension " + std::to_string(point.size()) + ", cloud has " +
                         std::to_string(mu.dim()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const auto x = mu.particle(i);
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double diff = x[k] - point[k];
            acc += diff * diff;
        }
    }
    return std::sqrt(acc / static_cast<double>(mu.size()));
}

std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t n) {
    if (cost.size() != n * n) throw ShapeError("solve_assignment: cost matrix is not n x n");
    constexpr double inf = std::numeric_limits<double>::infinity();
    // Potentials u (rows), v (columns); 1-based with a virtual column 0.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> row_of(n + 1, 0), way(n + 1, 0);
    for (std::size_t row = 1; row <= n; ++row) {
        row_of[0] = row;
        std::size_t col0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[col0] = true;
            const std::size_t r = row_of[col0];
            double delta = inf;
            std::size_t col1 = 0;
            for (std::size_t c = 1; c <= n; ++c) {
                if (used[c]) continue;
                const double reduced = cost[(r - 1) * n + (c - 1)] - u[r] - v[c];
                if (reduced < minv[c]) {
                    minv[c] = reduced;
                    way[c] = col0;
                }
                if (minv[c] < delta) {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for (std::size_t c = 0; c <= n; ++c) {
                if (used[c]) {
                    u[row_of[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
        } while (row_of[col0] != 0);
        do {
            const std::size_t col1 = way[col0];
            row_of[col0] = row_of[col1];
            col0 = col1;
        } while (col0 != 0);
    }
    std::vector<std::size_t> assignment(n);
    for (std::size_t c = 1; c <= n; ++c) assignment[row_of[c] - 1] = c - 1;
    return assignment;
}

double wasserstein2(const ParticleCloud& mu, const ParticleCloud& nu, std::size_t assignment_cap) {
    if (mu.dim() != nu.dim()) {
        throw ShapeError("wasserstein2: dimension mismatch (" + std::to_string(mu.dim()) + " vs " +
                         std::to_string(nu.dim()) + ")");
    }
    if (mu.size() != nu.size()) {
        throw ShapeError("wasserstein2: only equal-size clouds are supported (" + std::to_string(mu.size()) +
                         " vs " + std::to_string(nu.size()) + ")");
    }
    const std::size_t m = mu.size();
    const std::size_t d = mu.dim();

    if (d == 1) {
        std::vector<double> xs(mu.positions().begin(), mu.positions().end());
        std::vector<double> ys(nu.positions().begin(), nu.positions().end());
        std::sort(xs.begin(), xs.end());
        std::sort(ys.begin(), ys.end());
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += (xs[j] - ys[j]) * (xs[j] - ys[j]);
        return std::sqrt(acc / static_cast<double>(m));
    }

    if (m > assignment_cap) {
        throw CapabilityError("wasserstein2: exact assignment limited to " + std::to_string(assignment_cap) +
                              " particles in d > 1 (got " + std::to_string(m) + ")");
    }
    std::vector<double> cost(m * m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = mu.particle(i)[k] - nu.particle(j)[k];
                acc += diff * diff;
            }
            cost[i * m + j] = acc;
        }
    }
    const auto match = solve_assignment(cost, m);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) total += cost[i * m + match[i]];
    return std::sqrt(total / static_cast<double>(m));
}

}  // namespace mvsde
