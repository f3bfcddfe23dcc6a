#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tinyforge {

/// Per-layer pruning / coding configuration.
struct SparseConfig {
    double sparsity = 0.0;  // rho in [0, 1)
    int block_size = 4;     // 2 or 4 for conv/linear, 3 for depthwise rows

    bool operator==(const SparseConfig&) const = default;
};

/**
 * @brief Blockwise run-length encoded weights.
 *
 * The stream is a sequence of records [d:u8][v1:i8]...[vb:i8]. d is the
 * element distance from the end of the previous emitted block (or the
 * array start) to the current block start. Gaps wider than 255 are
 * bridged by all-zero padding records with d = 255. A tail shorter than
 * one block is stored densely in `trailer`.
 */
struct EncodedWeights {
    std::vector<uint8_t> stream;
    int block_size = 0;
    size_t original_len = 0;
    size_t n_records = 0;
    std::vector<int8_t> trailer;

    size_t size_bytes() const { return stream.size() + trailer.size(); }
};

/// Dense-or-sparse weight storage as picked by choose_storage_format.
struct StoredWeights {
    enum class Format { Dense, Sparse };
    Format format = Format::Dense;
    std::vector<int8_t> dense;
    EncodedWeights sparse;

    size_t size_bytes() const {
        return format == Format::Dense ? dense.size() : sparse.size_bytes();
    }
    size_t numel() const {
        return format == Format::Dense ? dense.size() : sparse.original_len;
    }
    static StoredWeights make_dense(std::vector<int8_t> w);
    static StoredWeights make_sparse(EncodedWeights enc);
};

/**
 * Encode a flat INT8 array blockwise. Blocks that are entirely zero are
 * skipped; every other block is emitted as one record. With strict set,
 * a block mixing zero and nonzero values throws UnalignedSparsity
 * (it means the tensor was not blockwise-pruned).
 */
EncodedWeights encode_blockwise_rle(std::span<const int8_t> weights,
                                    const SparseConfig& cfg,
                                    bool strict = false);

/// Inverse of encode_blockwise_rle, element-exact. Throws CorruptStream.
std::vector<int8_t> decode_blockwise_rle(const EncodedWeights& enc);

/// Analytic compression ratio eta = 1 / ((1 - rho) * (1 + 1/b)).
double compression_ratio(const SparseConfig& cfg);

/// Whichever representation is strictly smaller; ties go to Dense.
StoredWeights choose_storage_format(std::span<const int8_t> weights,
                                    const SparseConfig& cfg);

/// True iff zeros occur only in whole aligned blocks of cfg.block_size.
bool is_blockwise_aligned(std::span<const int8_t> weights, int block_size);

} // namespace tinyforge
