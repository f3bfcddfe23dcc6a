#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

namespace tinyforge {

/// Linear quantization parameters: real = scale * (q - zero_point).
struct QuantParams {
    float scale = 1.0f;
    int32_t zero_point = 0;

    bool operator==(const QuantParams&) const = default;
};

/// Element count of a row-major shape (1 for the empty shape, scalar style).
/// Throws ShapeMismatch on a negative dimension.
size_t numel_of(const std::vector<int32_t>& shape);

/**
 * @brief Quantized INT8 tensor, row-major.
 *
 * Shapes used by the toolkit: {C,H,W} for feature maps (batch of one),
 * {T,C} for token sequences, {F} for flat feature vectors.
 */
struct TensorI8 {
    std::vector<int32_t> shape;
    std::vector<int8_t> data;
    QuantParams qparams;

    TensorI8() = default;
    TensorI8(std::vector<int32_t> s, QuantParams q)
        : shape(std::move(s)), data(numel_of(shape)), qparams(q) {}

    int64_t numel() const { return static_cast<int64_t>(numel_of(shape)); }
};

/// {C,H,W} -> {H*W, C} (tokens over spatial positions, channels last).
TensorI8 chw_to_tokens(const TensorI8& t);

/// {T,C} -> {C,H,W} with T == H*W.
TensorI8 tokens_to_chw(const TensorI8& t, int32_t height, int32_t width);

} // namespace tinyforge
