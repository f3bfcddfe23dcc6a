#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace tinyforge {

/**
 * @brief Deterministic random source used by all sampling code.
 *
 * Wraps std::mt19937_64 but derives ints and reals directly from raw
 * engine output, so sequences are identical on every platform (the
 * standard <random> distributions are implementation-defined).
 */
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    size_t index(size_t n) { return static_cast<size_t>(next() % n); }

    /// Uniform integer in [lo, hi] inclusive.
    int64_t range(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(next() % static_cast<uint64_t>(hi - lo + 1));
    }

    /// Uniform real in [0, 1).
    double real01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    template <typename T>
    const T& pick(const std::vector<T>& options) {
        return options[index(options.size())];
    }

    /// Independent child seed; advances this stream.
    uint64_t fork() { return next(); }

private:
    std::mt19937_64 engine_;
};

} // namespace tinyforge
