#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace mvsde {

// Philox4x32-10 counter-based generator (Salmon et al., Random123).
// Stateless: the output is a pure function of (counter, key).
struct Philox4x32 {
    using counter_type = std::array<std::uint32_t, 4>;
    using key_type = std::array<std::uint32_t, 2>;

    static constexpr counter_type generate(counter_type ctr, key_type key) noexcept {
        for (int round = 0; round < 10; ++round) {
            ctr = single_round(ctr, key);
            key[0] += 0x9E3779B9u;
            key[1] += 0xBB67AE85u;
        }
        return ctr;
    }

private:
    static constexpr counter_type single_round(const counter_type& c, const key_type& k) noexcept {
        const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
        const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Folds a sequence of tags (experiment, level, sample index, ...) into one stream id.
constexpr std::uint64_t stream_id(std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t h = 0x243F6A8885A308D3ull;
    for (auto t : tags) h = splitmix64(h ^ splitmix64(t));
    return h;
}

// Standard normal variates addressed by (step, particle, component) inside one
// stream. Two streams with different ids (or seeds) use different Philox keys.
class GaussianStream {
public:
    GaussianStream(std::uint64_t seed, std::uint64_t stream) noexcept {
        const std::uint64_t k = splitmix64(seed ^ splitmix64(stream ^ 0x5851F42D4C957F2Dull));
        key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
    }

    // Writes the normals for components [0, count) of one (step, particle) cell.
    void fill(std::uint64_t step, std::uint64_t particle, double* out, std::size_t count) const noexcept {
        for (std::size_t pair = 0; 2 * pair < count; ++pair) {
            const auto z = normal_pair(step, particle, pair);
            out[2 * pair] = z[0];
            if (2 * pair + 1 < count) out[2 * pair + 1] = z[1];
        }
    }

    [[nodiscard]] double normal(std::uint64_t step, std::uint64_t particle, std::size_t component) const noexcept {
        return normal_pair(step, particle, component / 2)[component % 2];
    }

private:
    [[nodiscard]] std::array<double, 2> normal_pair(std::uint64_t step, std::uint64_t particle,
                                                    std::uint64_t pair) const noexcept {
        const Philox4x32::counter_type ctr{static_cast<std::uint32_t>(step),
                                           static_cast<std::uint32_t>(particle),
                                           static_cast<std::uint32_t>(pair),
                                           static_cast<std::uint32_t>(step >> 32) ^
                                               (static_cast<std::uint32_t>(particle >> 32) << 16)};
        const auto r = Philox4x32::generate(ctr, key_);
        const double u1 = to_open_unit(r[0], r[1]);
        const double u2 = to_open_unit(r[2], r[3]);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        return {radius * std::cos(theta), radius * std::sin(theta)};
    }

    // 53 random bits mapped to (0, 1); never 0 so the log above is finite.
    static double to_open_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
        const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    Philox4x32::key_type key_{};
};

}  // namespace mvsde
