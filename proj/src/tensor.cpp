#include "tinyforge/tensor.hpp"

#include <string>

#include "tinyforge/errors.hpp"

namespace tinyforge {

size_t numel_of(const std::vector<int32_t>& shape) {
    size_t n = 1;
    for (int32_t d : shape) {
        if (d < 0) throw ShapeMismatch("negative dimension in shape");
        n *= static_cast<size_t>(d);
    }
    return n;
}

TensorI8 chw_to_tokens(const TensorI8& x) {
    if (x.shape.size() != 3) {
        throw ShapeMismatch("expected rank-3 [C,H,W] input, got rank " +
                            std::to_string(x.shape.size()));
    }
    const int32_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    TensorI8 out;
    out.shape = {h * w, c};
    out.qparams = x.qparams;
    out.data.resize(x.data.size());
    const size_t plane = static_cast<size_t>(h) * w;
    for (size_t t = 0; t < plane; ++t) {
        for (int32_t ch = 0; ch < c; ++ch) {
            out.data[t * c + ch] = x.data[ch * plane + t];
        }
    }
    return out;
}

TensorI8 tokens_to_chw(const TensorI8& x, int32_t h, int32_t w) {
    if (x.shape.size() != 2) {
        throw ShapeMismatch("expected rank-2 [T,C] input, got rank " +
                            std::to_string(x.shape.size()));
    }
    if (x.shape[0] != h * w) {
        throw ShapeMismatch("token count " + std::to_string(x.shape[0]) +
                            " does not equal " + std::to_string(h) + "x" +
                            std::to_string(w));
    }
    const int32_t c = x.shape[1];
    TensorI8 out;
    out.shape = {c, h, w};
    out.qparams = x.qparams;
    out.data.resize(x.data.size());
    const size_t plane = static_cast<size_t>(h) * w;
    for (size_t t = 0; t < plane; ++t) {
        for (int32_t ch = 0; ch < c; ++ch) {
            out.data[ch * plane + t] = x.data[t * c + ch];
        }
    }
    return out;
}

} // namespace tinyforge
