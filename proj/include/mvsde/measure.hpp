#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mvsde {

// M particles in R^d stored row-major. Also serves as the uniform empirical
// measure (1/M) sum_j delta_{x_j}.
class ParticleCloud {
public:
    ParticleCloud(std::size_t m, std::size_t d, double fill = 0.0);
    ParticleCloud(std::size_t m, std::size_t d, std::vector<double> positions);

    // Every particle placed at `point`.
    static ParticleCloud filled(std::size_t m, std::span<const double> point);
    // One-dimensional cloud from a list of scalar positions.
    static ParticleCloud from_scalars(std::vector<double> xs);

    [[nodiscard]] std::size_t size() const noexcept { return m_; }
    [[nodiscard]] std::size_t dim() const noexcept { return d_; }

    [[nodiscard]] std::span<const double> particle(std::size_t i) const noexcept {
        return {positions_.data() + i * d_, d_};
    }
    [[nodiscard]] std::span<double> particle(std::size_t i) noexcept { return {positions_.data() + i * d_, d_}; }

    [[nodiscard]] std::span<const double> positions() const noexcept { return positions_; }
    [[nodiscard]] std::span<double> positions() noexcept { return positions_; }

    [[nodiscard]] bool all_finite() const noexcept;

    friend bool operator==(const ParticleCloud&, const ParticleCloud&) = default;

private:
    std::size_t m_;
    std::size_t d_;
    std::vector<double> positions_;
};

inline constexpr std::size_t kDefaultAssignmentCap = 256;

// ((1/M) sum_j |x_j|^2)^{1/2}
[[nodiscard]] double moment_w2(const ParticleCloud& mu);

// Wasserstein-2 distance between two equal-size uniform clouds. Sorted matching in
// d = 1; exact optimal assignment for d > 1 up to `assignment_cap` particles.
[[nodiscard]] double wasserstein2(const ParticleCloud& mu, const ParticleCloud& nu,
                                  std::size_t assignment_cap = kDefaultAssignmentCap);

// W2 distance from mu to the Dirac mass at `point`.
[[nodiscard]] double w2_to_dirac(const ParticleCloud& mu, std::span<const double> point);

// Minimum-cost perfect matching on a square row-major cost matrix (Hungarian
// method, O(n^3)). Returns assignment[row] = column.
[[nodiscard]] std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t n);

}  // namespace mvsde
