#include "tinyforge/sparse_codec.hpp"

#include <algorithm>
#include <cmath>

#include "tinyforge/errors.hpp"

namespace tinyforge {

StoredWeights StoredWeights::make_dense(std::vector<int8_t> w) {
    StoredWeights s;
    s.format = Format::Dense;
    s.dense = std::move(w);
    return s;
}

StoredWeights StoredWeights::make_sparse(EncodedWeights enc) {
    StoredWeights s;
    s.format = Format::Sparse;
    s.sparse = std::move(enc);
    return s;
}

namespace {

bool block_all_zero(std::span<const int8_t> w, size_t start, int b) {
    for (int i = 0; i < b; ++i) {
        if (w[start + i] != 0) return false;
    }
    return true;
}

bool block_any_zero(std::span<const int8_t> w, size_t start, int b) {
    for (int i = 0; i < b; ++i) {
        if (w[start + i] == 0) return true;
    }
    return false;
}

} // namespace

EncodedWeights encode_blockwise_rle(std::span<const int8_t> weights,
                                    const SparseConfig& cfg,
                                    bool strict) {
    const int b = cfg.block_size;
    EncodedWeights enc;
    enc.block_size = b;
    enc.original_len = weights.size();

    const size_t aligned = (weights.size() / b) * b;
    enc.trailer.assign(weights.begin() + aligned, weights.end());

    size_t prev_end = 0;  // element index just past the last emitted block
    for (size_t start = 0; start < aligned; start += b) {
        if (block_all_zero(weights, start, b)) continue;
        if (strict && block_any_zero(weights, start, b)) {
            throw UnalignedSparsity(
                "block at offset " + std::to_string(start) +
                " mixes zero and nonzero values; tensor is not blockwise-pruned");
        }
        // Bridge gaps wider than one byte with all-zero padding records.
        while (start - prev_end > 255) {
            enc.stream.push_back(255);
            for (int i = 0; i < b; ++i) enc.stream.push_back(0);
            ++enc.n_records;
            prev_end += 255 + b;
        }
        enc.stream.push_back(static_cast<uint8_t>(start - prev_end));
        for (int i = 0; i < b; ++i) {
            enc.stream.push_back(static_cast<uint8_t>(weights[start + i]));
        }
        ++enc.n_records;
        prev_end = start + b;
    }
    return enc;
}

std::vector<int8_t> decode_blockwise_rle(const EncodedWeights& enc) {
    const int b = enc.block_size;
    if (enc.stream.size() != enc.n_records * (1 + b)) {
        throw CorruptStream("stream length " + std::to_string(enc.stream.size()) +
                            " does not match " + std::to_string(enc.n_records) +
                            " records of " + std::to_string(1 + b) + " bytes");
    }
    const size_t aligned = (enc.original_len / b) * b;
    if (enc.trailer.size() != enc.original_len - aligned) {
        throw CorruptStream("trailer length does not match original length");
    }

    std::vector<int8_t> out(enc.original_len, 0);
    size_t pos = 0;
    const uint8_t* p = enc.stream.data();
    for (size_t r = 0; r < enc.n_records; ++r) {
        pos += *p++;
        if (pos + b > aligned) {
            throw CorruptStream("record " + std::to_string(r) +
                                " exceeds declared length");
        }
        for (int i = 0; i < b; ++i) {
            out[pos + i] = static_cast<int8_t>(*p++);
        }
        pos += b;
    }
    std::copy(enc.trailer.begin(), enc.trailer.end(), out.begin() + aligned);
    return out;
}

double compression_ratio(const SparseConfig& cfg) {
    return 1.0 / ((1.0 - cfg.sparsity) * (1.0 + 1.0 / cfg.block_size));
}

StoredWeights choose_storage_format(std::span<const int8_t> weights,
                                    const SparseConfig& cfg) {
    EncodedWeights enc = encode_blockwise_rle(weights, cfg);
    if (enc.size_bytes() < weights.size()) {
        return StoredWeights::make_sparse(std::move(enc));
    }
    return StoredWeights::make_dense({weights.begin(), weights.end()});
}

bool is_blockwise_aligned(std::span<const int8_t> weights, int block_size) {
    const size_t aligned = (weights.size() / block_size) * block_size;
    for (size_t start = 0; start < aligned; start += block_size) {
        if (!block_all_zero(weights, start, block_size) &&
            block_any_zero(weights, start, block_size)) {
            return false;
        }
    }
    return true;
}

} // namespace tinyforge
