#include "tinyforge/compress.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>

#include "tinyforge/errors.hpp"

namespace tinyforge {

std::vector<size_t> prune_selection(std::span<const int8_t> weights,
                                    double sparsity, int block_size) {
    const size_t n_blocks = weights.size() / block_size;
    // The nudge keeps e.g. 0.3 * 10 from flooring to 2 after binary rounding.
    const size_t n_prune = static_cast<size_t>(
        std::floor(sparsity * static_cast<double>(n_blocks) + 1e-9));

    std::vector<int64_t> norms(n_blocks, 0);
    for (size_t blk = 0; blk < n_blocks; ++blk) {
        int64_t acc = 0;
        for (int i = 0; i < block_size; ++i) {
            acc += std::abs(static_cast<int>(weights[blk * block_size + i]));
        }
        norms[blk] = acc;
    }

    std::vector<size_t> order(n_blocks);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return norms[a] < norms[b]; });

    std::vector<size_t> selected(order.begin(), order.begin() + n_prune);
    std::sort(selected.begin(), selected.end());
    return selected;
}

std::vector<int8_t> prune_blockwise(std::span<const int8_t> weights,
                                    double sparsity, int block_size) {
    std::vector<int8_t> out(weights.begin(), weights.end());
    for (size_t blk : prune_selection(weights, sparsity, block_size)) {
        std::fill_n(out.begin() + blk * block_size, block_size, int8_t{0});
    }
    return out;
}

double AgpSchedule::sparsity_at(int64_t step) const {
    const int64_t span = ramp_steps * step_stride;
    if (step <= begin_step) return initial_sparsity;
    if (step >= begin_step + span) return final_sparsity;
    const double t = static_cast<double>(step - begin_step) /
                     static_cast<double>(span);
    const double keep = 1.0 - t;
    return final_sparsity +
           (initial_sparsity - final_sparsity) * keep * keep * keep;
}

QuantParams calibrate_range(float min_val, float max_val, QuantMode mode) {
    QuantParams qp;
    if (min_val == max_val) {
        qp.scale = 1.0f;
        qp.zero_point = 0;
        return qp;
    }
    if (mode == QuantMode::SymmetricInt8) {
        const float bound = std::max(std::fabs(min_val), std::fabs(max_val));
        qp.scale = bound / 127.0f;
        qp.zero_point = 0;
    } else {
        qp.scale = (max_val - min_val) / 255.0f;
        const double z = -128.0 - std::round(min_val / qp.scale);
        qp.zero_point = static_cast<int32_t>(
            std::clamp(z, -128.0, 127.0));
    }
    return qp;
}

QuantParams calibrate(std::span<const float> values, QuantMode mode) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (values.empty()) { lo = 0.0f; hi = 0.0f; }
    return calibrate_range(lo, hi, mode);
}

int8_t quantize_value(float x, const QuantParams& qp) {
    const double q = std::round(static_cast<double>(x) / qp.scale) + qp.zero_point;
    return static_cast<int8_t>(std::clamp(q, -128.0, 127.0));
}

std::vector<int8_t> quantize(std::span<const float> values,
                             const QuantParams& qp) {
    std::vector<int8_t> out(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        out[i] = quantize_value(values[i], qp);
    }
    return out;
}

float dequantize_value(int8_t q, const QuantParams& qp) {
    return qp.scale * static_cast<float>(static_cast<int32_t>(q) - qp.zero_point);
}

FixedMultiplier FixedMultiplier::from_double(double value) {
    if (!(value > 0.0) || !std::isfinite(value)) {
        throw Error("fixed-point multiplier must be finite and positive");
    }
    int exp = 0;
    const double frac = std::frexp(value, &exp);  // frac in [0.5, 1)
    auto mant = static_cast<int64_t>(std::llround(frac * (int64_t{1} << 31)));
    if (mant == (int64_t{1} << 31)) {  // rounded all the way up
        mant >>= 1;
        ++exp;
    }
    FixedMultiplier m;
    m.mantissa = static_cast<int32_t>(mant);
    m.right_shift = 31 - exp;
    return m;
}

} // namespace tinyforge
