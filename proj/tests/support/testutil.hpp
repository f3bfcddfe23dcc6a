#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "tinyforge/rng.hpp"
#include "tinyforge/sparse_codec.hpp"
#include "tinyforge/tensor.hpp"

namespace testutil {

/// Nonzero int8 draw, so generated block structure is exactly as built and
/// no block is zero by accident.
inline int8_t nonzero_i8(tinyforge::Rng& rng) {
    const auto m = static_cast<int8_t>(rng.range(1, 127));
    return (rng.next() & 1) ? m : static_cast<int8_t>(-m);
}

inline std::vector<int8_t> random_i8(tinyforge::Rng& rng, size_t n,
                                     int lo = -128, int hi = 127) {
    std::vector<int8_t> v(n);
    for (auto& x : v) x = static_cast<int8_t>(rng.range(lo, hi));
    return v;
}

/// Blockwise-sparse vector built directly: every full block is either all
/// zero or all nonzero, with floor(rho * n_blocks) zero blocks drawn at
/// random; tail elements stay nonzero.
inline std::vector<int8_t> random_block_pruned(tinyforge::Rng& rng, size_t n,
                                               int block, double rho) {
    std::vector<int8_t> v(n);
    for (auto& x : v) x = nonzero_i8(rng);
    const size_t n_blocks = n / static_cast<size_t>(block);
    const auto n_zero = static_cast<size_t>(
        rho * static_cast<double>(n_blocks) + 1e-9);
    std::vector<size_t> idx(n_blocks);
    std::iota(idx.begin(), idx.end(), size_t{0});
    for (size_t i = 0; i < n_zero; ++i) {
        std::swap(idx[i], idx[i + rng.index(n_blocks - i)]);
        std::fill_n(v.begin() + static_cast<ptrdiff_t>(idx[i] * block), block,
                    int8_t{0});
    }
    return v;
}

/// Record walker independent of the library decoder. Padding records are
/// ordinary all-zero records, so no special case is needed.
inline std::vector<int8_t> reference_decode(const tinyforge::EncodedWeights& e) {
    const int b = e.block_size;
    std::vector<int8_t> out(e.original_len, 0);
    size_t cursor = 0;
    size_t off = 0;
    for (size_t r = 0; r < e.n_records; ++r) {
        const size_t start = cursor + e.stream.at(off++);
        for (int i = 0; i < b; ++i) {
            out.at(start + static_cast<size_t>(i)) =
                static_cast<int8_t>(e.stream.at(off++));
        }
        cursor = start + static_cast<size_t>(b);
    }
    std::copy(e.trailer.begin(), e.trailer.end(),
              out.end() - static_cast<ptrdiff_t>(e.trailer.size()));
    return out;
}

inline tinyforge::TensorI8 random_tensor(tinyforge::Rng& rng,
                                         std::vector<int32_t> shape,
                                         tinyforge::QuantParams q) {
    tinyforge::TensorI8 t(std::move(shape), q);
    for (auto& x : t.data) x = static_cast<int8_t>(rng.range(-128, 127));
    return t;
}

} // namespace testutil
