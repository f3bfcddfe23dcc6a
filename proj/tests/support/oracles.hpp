#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tinyforge/compress.hpp"
#include "tinyforge/tensor.hpp"

// Plain-loop INT8 references. Each accumulates (x - Z_in) * w in int64 over
// every tap and shares only the fixed-point requantizer with the library;
// none of the streaming, packing, or zero-point-correction tricks appear
// here, which is the point of comparing against them.
namespace testutil {

inline tinyforge::TensorI8 ref_conv(const tinyforge::TensorI8& in,
                                    const std::vector<int8_t>& w,
                                    const std::vector<int32_t>& bias,
                                    tinyforge::QuantParams w_q,
                                    tinyforge::QuantParams out_q,
                                    int32_t out_c, int32_t kernel,
                                    int32_t stride, int32_t padding,
                                    int32_t groups) {
    const int32_t in_c = in.shape[0], in_h = in.shape[1], in_w = in.shape[2];
    const int32_t ipg = in_c / groups, opg = out_c / groups;
    const int32_t oh_n = (in_h + 2 * padding - kernel) / stride + 1;
    const int32_t ow_n = (in_w + 2 * padding - kernel) / stride + 1;
    const int32_t zin = in.qparams.zero_point;
    const auto m = tinyforge::FixedMultiplier::from_double(
        static_cast<double>(in.qparams.scale) * w_q.scale / out_q.scale);

    tinyforge::TensorI8 out({out_c, oh_n, ow_n}, out_q);
    for (int32_t oc = 0; oc < out_c; ++oc) {
        for (int32_t oy = 0; oy < oh_n; ++oy) {
            for (int32_t ox = 0; ox < ow_n; ++ox) {
                int64_t acc = bias.empty() ? 0 : bias[oc];
                for (int32_t ic = 0; ic < ipg; ++ic) {
                    const int32_t gic = (oc / opg) * ipg + ic;
                    for (int32_t ky = 0; ky < kernel; ++ky) {
                        const int32_t iy = oy * stride + ky - padding;
                        for (int32_t kx = 0; kx < kernel; ++kx) {
                            const int32_t ix = ox * stride + kx - padding;
                            const int32_t xv =
                                (iy >= 0 && iy < in_h && ix >= 0 && ix < in_w)
                                    ? in.data[(static_cast<size_t>(gic) * in_h +
                                               iy) * in_w + ix]
                                    : zin;
                            const int8_t wv =
                                w[((static_cast<size_t>(oc) * ipg + ic) *
                                       kernel + ky) * kernel + kx];
                            acc += static_cast<int64_t>(xv - zin) * wv;
                        }
                    }
                }
                out.data[(static_cast<size_t>(oc) * oh_n + oy) * ow_n + ox] =
                    tinyforge::requantize(static_cast<int32_t>(acc), m,
                                          out_q.zero_point);
            }
        }
    }
    return out;
}

inline std::vector<int8_t> ref_linear(std::span<const int8_t> x,
                                      tinyforge::QuantParams in_q,
                                      int32_t rows,
                                      const std::vector<int8_t>& w,
                                      int32_t in_f, int32_t out_f,
                                      const std::vector<int32_t>& bias,
                                      tinyforge::QuantParams w_q,
                                      tinyforge::QuantParams out_q) {
    const int32_t zin = in_q.zero_point;
    const auto m = tinyforge::FixedMultiplier::from_double(
        static_cast<double>(in_q.scale) * w_q.scale / out_q.scale);
    std::vector<int8_t> out(static_cast<size_t>(rows) * out_f);
    for (int32_t r = 0; r < rows; ++r) {
        for (int32_t j = 0; j < out_f; ++j) {
            int64_t acc = bias.empty() ? 0 : bias[j];
            for (int32_t i = 0; i < in_f; ++i) {
                acc += static_cast<int64_t>(
                           x[static_cast<size_t>(r) * in_f + i] - zin) *
                       w[static_cast<size_t>(j) * in_f + i];
            }
            out[static_cast<size_t>(r) * out_f + j] = tinyforge::requantize(
                static_cast<int32_t>(acc), m, out_q.zero_point);
        }
    }
    return out;
}

/// Float layer norm, then quantize: the fidelity baseline.
inline std::vector<int8_t> ref_layernorm_float(
    const tinyforge::TensorI8& in, std::span<const float> gamma,
    std::span<const float> beta, tinyforge::QuantParams out_q) {
    const auto channels = static_cast<size_t>(in.shape.back());
    const size_t rows = in.data.size() / channels;
    std::vector<int8_t> out(in.data.size());
    for (size_t r = 0; r < rows; ++r) {
        const int8_t* x = in.data.data() + r * channels;
        double mean = 0.0;
        for (size_t i = 0; i < channels; ++i) {
            mean += tinyforge::dequantize_value(x[i], in.qparams);
        }
        mean /= static_cast<double>(channels);
        double var = 0.0;
        for (size_t i = 0; i < channels; ++i) {
            const double d =
                tinyforge::dequantize_value(x[i], in.qparams) - mean;
            var += d * d;
        }
        const double sigma = std::sqrt(var / static_cast<double>(channels));
        for (size_t i = 0; i < channels; ++i) {
            const double xn =
                sigma > 0.0
                    ? (tinyforge::dequantize_value(x[i], in.qparams) - mean) /
                          sigma
                    : 0.0;
            out[r * channels + i] = tinyforge::quantize_value(
                static_cast<float>(gamma[i] * xn + beta[i]), out_q);
        }
    }
    return out;
}

/// Same pipeline but the normalized value is rounded straight to an int16
/// step of 1.0 instead of carrying the 2^7 gain; the comparison baseline
/// for the scaled variant's fidelity claim.
inline std::vector<int8_t> ref_layernorm_unscaled16(
    const tinyforge::TensorI8& in, std::span<const float> gamma,
    std::span<const float> beta, tinyforge::QuantParams out_q) {
    const auto channels = static_cast<size_t>(in.shape.back());
    const size_t rows = in.data.size() / channels;
    std::vector<int8_t> out(in.data.size());
    for (size_t r = 0; r < rows; ++r) {
        const int8_t* x = in.data.data() + r * channels;
        double mean = 0.0;
        for (size_t i = 0; i < channels; ++i) {
            mean += tinyforge::dequantize_value(x[i], in.qparams);
        }
        mean /= static_cast<double>(channels);
        double var = 0.0;
        for (size_t i = 0; i < channels; ++i) {
            const double d =
                tinyforge::dequantize_value(x[i], in.qparams) - mean;
            var += d * d;
        }
        const double sigma = std::sqrt(var / static_cast<double>(channels));
        for (size_t i = 0; i < channels; ++i) {
            const double xn =
                sigma > 0.0
                    ? (tinyforge::dequantize_value(x[i], in.qparams) - mean) /
                          sigma
                    : 0.0;
            const double snapped = std::clamp(std::round(xn), -32768.0, 32767.0);
            out[r * channels + i] = tinyforge::quantize_value(
                static_cast<float>(gamma[i] * snapped + beta[i]), out_q);
        }
    }
    return out;
}

} // namespace testutil
