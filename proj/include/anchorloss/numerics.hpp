#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace anchorloss {

using Vector = std::vector<double>;

// Probability floor applied symmetrically (clamp into [eps, 1-eps]) before any log.
inline constexpr double kProbabilityFloor = 1e-7;

// Default central-difference step.
inline constexpr double kFdStep = 1e-5;

/// ln(max(x, floor)). Total on x >= 0, monotone nondecreasing in x.
double stable_log(double x, double floor = kProbabilityFloor);

/// Clamp a probability into [floor, 1 - floor].
double clamp_probability(double q, double floor = kProbabilityFloor);

/// 1 / (1 + exp(-z)), overflow-free for any finite z. Output in (0, 1).
double sigmoid(double z);

/// Max-subtracted softmax. Throws std::invalid_argument("empty logits") on
/// an empty input.
Vector softmax(const Vector& logits);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
/// The caller keeps perturbed points inside f's domain. Throws
/// std::runtime_error naming the coordinate if f evaluates non-finite.
Vector finite_difference_gradient(const std::function<double(const Vector&)>& f,
                                  const Vector& x, double h = kFdStep);

/// Deterministic random stream (xoshiro256**, splitmix64-seeded). The same
/// seed yields the same draws on every platform. Single-owner: one stream
/// per worker, never shared.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller (spare draw cached).
    double normal();
    double normal(double mean, double stddev);

    /// Uniform index in [0, n), unbiased. n must be > 0.
    std::size_t index(std::size_t n);

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[index(i)]);
        }
    }

private:
    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace anchorloss
