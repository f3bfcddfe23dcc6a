#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tinyforge/compress.hpp"
#include "tinyforge/ir.hpp"
#include "tinyforge/sparse_codec.hpp"
#include "tinyforge/tensor.hpp"

namespace tinyforge {

/// Work counters maintained by every kernel (process-global).
/// macs counts INT8 multiply-accumulates actually performed, so the sparse
/// paths report less work than dense ones; exp_evals counts exponential
/// evaluations, which the softmax table memoizes.
struct KernelCounters {
    uint64_t macs = 0;
    uint64_t exp_evals = 0;
};

KernelCounters& kernel_counters();
void reset_kernel_counters();

/// accumulator + w0*x0 + w1*x1 through the packed dual-lane route: both
/// operand pairs sign-extended to 16 bit, packed into one 32-bit word, and
/// multiplied lane-wise. Matches plain scalar arithmetic bit for bit.
int32_t paired_mac(int32_t acc, int8_t w0, int8_t w1, int8_t x0, int8_t x1);

/// floor(sqrt(v)) for v >= 0, by binary search; no FPU involvement.
int64_t isqrt_i64(int64_t v);

// ---------------------------------------------------------------------------
// Prepared weight forms: storage format already chosen (dense or run-length
// coded), biases in the 32-bit accumulator grid.

struct PreparedConv {
    StoredWeights w;  // [out][in/groups][k][k] flattened
    std::vector<int32_t> bias;
    QuantParams w_q;
    QuantParams out_q;
    int32_t out_channels = 0;
    int32_t kernel = 3;
    int32_t stride = 1;
    int32_t padding = 1;
    int32_t groups = 1;
};

struct PreparedLinear {
    StoredWeights w;  // [out][in] row-major
    std::vector<int32_t> bias;
    QuantParams w_q;
    QuantParams out_q;
    int32_t in_features = 0;
    int32_t out_features = 0;
};

struct PreparedSeqPool {
    PreparedLinear attn;  // channels -> 1 scoring row
    QuantParams out_q;
};

struct PreparedEncoder {
    NormParams ln1, ln2;
    PreparedLinear wq, wk, wv, wo, fc1, fc2;
    QuantParams scores_q;  // softmax input grid
    QuantParams ctx_q;     // attention-weighted value grid
    QuantParams res1_q;    // attention residual grid
    QuantParams out_q;
    int32_t heads = 1;
};

PreparedLinear prepare_linear(const LinearParams& p,
                              const std::optional<SparseConfig>& cfg);
PreparedEncoder prepare_encoder(const EncoderParams& p, int32_t heads,
                                QuantParams out_q,
                                const std::optional<SparseConfig>& cfg);

// ---------------------------------------------------------------------------
// Softmax lookup table: 257 Q0.31 exponentials indexed by the distance to
// the row maximum, filled lazily; a validity bitmap marks computed slots.

class SoftmaxLUT {
public:
    static constexpr int kMaxIndex = 256;

    explicit SoftmaxLUT(float in_scale);

    /// e^(-index * in_scale) in Q0.31; computes and memoizes on first use.
    uint32_t exp_q31(int index);

    float in_scale() const { return in_scale_; }
    int computed_entries() const;
    size_t footprint_bytes() const;

private:
    std::array<uint32_t, kMaxIndex + 1> table_{};
    std::array<uint8_t, (kMaxIndex + 1 + 7) / 8> bitmap_{};
    float in_scale_ = 1.0f;
};

/// Output grid of every softmax kernel: probabilities in [0,1] mapped to
/// the full INT8 range.
inline constexpr QuantParams kSoftmaxOutQ{1.0f / 256.0f, -128};

void softmax_row_lut(std::span<const int8_t> in, std::span<int8_t> out,
                     SoftmaxLUT& lut);
/// Table-free twin of softmax_row_lut; identical output bytes, one
/// exponential evaluation per element.
void softmax_row_exact(std::span<const int8_t> in, std::span<int8_t> out,
                       float in_scale);

// ---------------------------------------------------------------------------
// Raw-buffer cores (used by the executor over its arena).

struct ConvGeom {
    int32_t in_c = 0, in_h = 0, in_w = 0;
    int32_t out_c = 0;
    int32_t kernel = 3, stride = 1, padding = 1, groups = 1;

    int32_t out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
    int32_t out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
};

void conv2d_core(const int8_t* in, QuantParams in_q, const ConvGeom& g,
                 const PreparedConv& w, int8_t* out);
void linear_core(const int8_t* in, QuantParams in_q, int32_t rows,
                 const PreparedLinear& w, int8_t* out);
void relu_core(const int8_t* in, size_t n, int32_t zero_point, int8_t* out);
void maxpool2x2_core(const int8_t* in, int32_t c, int32_t h, int32_t w,
                     int8_t* out);
void avgpool2x2_core(const int8_t* in, QuantParams in_q, int32_t c, int32_t h,
                     int32_t w, QuantParams out_q, int8_t* out);
void residual_add_core(const int8_t* a, QuantParams a_q, const int8_t* b,
                       QuantParams b_q, size_t n, QuantParams out_q,
                       int8_t* out);
void layernorm_core(const int8_t* in, QuantParams in_q, int32_t rows,
                    int32_t channels, const NormParams& p, int8_t* out);
void softmax_core(const int8_t* in, int32_t rows, int32_t channels,
                  SoftmaxLUT& lut, int8_t* out);
void seqpool_core(const int8_t* in, QuantParams in_q, int32_t tokens,
                  int32_t channels, const PreparedSeqPool& w, int8_t* out);
void encoder_core(const int8_t* in, QuantParams in_q, int32_t tokens,
                  int32_t channels, const PreparedEncoder& w, int8_t* out);

// ---------------------------------------------------------------------------
// Tensor-level operators (allocate their result).

TensorI8 conv2d_int8(const TensorI8& in, const PreparedConv& w);
TensorI8 dwconv2d_int8(const TensorI8& in, const PreparedConv& w);
TensorI8 linear_int8(const TensorI8& in, const PreparedLinear& w);
TensorI8 relu_int8(const TensorI8& in);
TensorI8 maxpool2x2(const TensorI8& in);
TensorI8 avgpool2x2(const TensorI8& in, QuantParams out_q);
TensorI8 seqpool(const TensorI8& in, const PreparedSeqPool& w);
TensorI8 residual_add(const TensorI8& a, const TensorI8& b, QuantParams out_q);
TensorI8 scaled_layernorm(const TensorI8& in, const NormParams& p);
TensorI8 softmax_rows(const TensorI8& in, SoftmaxLUT& lut);
TensorI8 softmax_rows_exact(const TensorI8& in);
TensorI8 encoder_forward(const TensorI8& in, const PreparedEncoder& w);

} // namespace tinyforge
