#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "tinyforge/tensor.hpp"

namespace tinyforge {

/**
 * @brief Zeroes whole blocks of a weight tensor by L1 magnitude.
 *
 * The tensor is split into contiguous blocks of `block_size` elements;
 * the floor(sparsity * n_blocks) blocks with the smallest L1 norm are
 * set to zero. Ties keep the lower-index block in the pruned set.
 * Elements past the last full block are never pruned.
 */
std::vector<int8_t> prune_blockwise(std::span<const int8_t> weights,
                                    double sparsity, int block_size);

/// Indices (block numbers) that prune_blockwise would zero, sorted ascending.
std::vector<size_t> prune_selection(std::span<const int8_t> weights,
                                    double sparsity, int block_size);

/// Cubic sparsity ramp from `initial` at step `begin_step` to `final` after
/// `ramp_steps * step_stride` further steps. Outside the ramp the value is
/// clamped to the nearest endpoint.
struct AgpSchedule {
    double initial_sparsity = 0.0;
    double final_sparsity = 0.0;
    int64_t begin_step = 0;
    int64_t ramp_steps = 1;    // number of pruning events
    int64_t step_stride = 1;   // steps between pruning events

    double sparsity_at(int64_t step) const;
};

/// Quantization rule: symmetric grids center on zero, asymmetric grids
/// spend the zero point to cover the observed range exactly.
enum class QuantMode { SymmetricInt8, AsymmetricInt8 };

/// Scale and zero point for the observed [min, max] range. A degenerate
/// range (min == max) maps every value to quantized 0 with scale 1.
QuantParams calibrate_range(float min_val, float max_val, QuantMode mode);

/// Convenience wrapper: scans `values` for its range first.
QuantParams calibrate(std::span<const float> values, QuantMode mode);

/// Rounds to nearest, halves away from zero, then clamps to int8.
int8_t quantize_value(float x, const QuantParams& qp);

std::vector<int8_t> quantize(std::span<const float> values,
                             const QuantParams& qp);

float dequantize_value(int8_t q, const QuantParams& qp);

/**
 * @brief A positive real multiplier in fixed point.
 *
 * Stored as a Q0.31 mantissa in [2^30, 2^31) and a right shift (negative
 * for multipliers >= 2), so that multiplying an int32 accumulator happens
 * entirely in integer arithmetic. Used to fold (S_in * S_w / S_out) style
 * rescales into the kernels.
 */
struct FixedMultiplier {
    int32_t mantissa = 0;
    int right_shift = 0;

    static FixedMultiplier from_double(double value);

    /// acc * value, rounded half away from zero.
    int32_t apply(int32_t acc) const {
        const int64_t prod = static_cast<int64_t>(acc) * mantissa;
        if (right_shift >= 0) {
            if (right_shift >= 63) return 0;
            const int64_t half = int64_t{1} << right_shift >> 1;
            if (prod >= 0) {
                return static_cast<int32_t>((prod + half) >> right_shift);
            }
            return static_cast<int32_t>(-((-prod + half) >> right_shift));
        }
        // Multiplier >= 2: widen so the left shift cannot overflow 64 bits.
        const __int128 wide = static_cast<__int128>(prod) << (-right_shift);
        const __int128 lim_lo = std::numeric_limits<int32_t>::min();
        const __int128 lim_hi = std::numeric_limits<int32_t>::max();
        if (wide < lim_lo) return std::numeric_limits<int32_t>::min();
        if (wide > lim_hi) return std::numeric_limits<int32_t>::max();
        return static_cast<int32_t>(wide);
    }
};

/// apply() then add the output zero point and clamp to int8.
inline int8_t requantize(int32_t acc, const FixedMultiplier& m,
                         int32_t out_zero_point) {
    const int64_t shifted = static_cast<int64_t>(m.apply(acc)) + out_zero_point;
    return static_cast<int8_t>(std::clamp<int64_t>(shifted, -128, 127));
}

} // namespace tinyforge
