#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tinyforge/rng.hpp"
#include "tinyforge/sparse_codec.hpp"
#include "tinyforge/tensor.hpp"

namespace tinyforge {

enum class LayerKind : uint16_t {
    Conv3x3,
    Conv1x1,
    DWConv3x3,
    Linear,
    MaxPool2x2,
    AvgPool2x2,
    SeqPool,
    ConvMaxPool,
    Encoder,
    ScaledLayerNorm,
    Softmax,
    ReLU,
    ResidualAdd,
};

const char* layer_kind_name(LayerKind kind);
std::optional<LayerKind> layer_kind_from_name(std::string_view name);

/// True for kinds that carry a weight tensor (conv, linear, seqpool attention).
bool kind_has_weight(LayerKind kind);

/// Per-channel affine parameters for the integer layer norm.
/// gamma is stored symmetric int16; beta is pre-divided by the 2^7
/// normalization gain so that gamma_q * n + beta_q shares one scale.
struct NormParams {
    std::vector<int16_t> gamma_q;
    std::vector<int32_t> beta_q;
    float gamma_scale = 1.0f;
    QuantParams out_q;
};

NormParams make_norm_params(std::span<const float> gamma,
                            std::span<const float> beta, QuantParams out_q);

struct LinearParams {
    TensorI8 w;                 // [out, in] row-major, symmetric qparams
    std::vector<int32_t> bias;  // out entries, may be empty
    QuantParams out_q;
};

/// Weight bundle for one pre-norm attention + MLP encoder layer.
struct EncoderParams {
    NormParams ln1;
    LinearParams wq, wk, wv, wo;
    NormParams ln2;
    LinearParams fc1, fc2;
    QuantParams scores_q;  // attention scores, softmax input grid
    QuantParams ctx_q;     // attention-weighted value sums
    QuantParams res1_q;    // attention residual sum grid
};

/// in0 value meaning "reads the graph input tensor".
inline constexpr int32_t kGraphInput = -1;

struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    int32_t in0 = kGraphInput;
    std::optional<int32_t> in1;  // second ResidualAdd operand

    int32_t out_channels = 0;  // conv/linear width; 0 = same as input
    int32_t stride = 1;
    int32_t heads = 0;   // Encoder
    int32_t hidden = 0;  // Encoder MLP width

    std::optional<SparseConfig> sparse_cfg;
    QuantParams out_q;
    QuantParams aux_q;  // SeqPool attention-logit grid

    std::optional<TensorI8> weight;  // conv [O,I,k,k]; linear [O,I]; seqpool [1,C]
    std::vector<int32_t> bias;
    std::optional<NormParams> norm;
    std::optional<EncoderParams> enc;

    std::string name;

    // Provenance tags set by sample_single_path.
    int32_t origin_block = -1;
    std::string origin_candidate;

    // Filled by infer_shapes.
    std::vector<int32_t> out_shape;
};

struct ModelGraph {
    std::vector<int32_t> input_shape;
    QuantParams input_q;
    std::vector<LayerSpec> layers;
};

/// Annotates every layer's out_shape in execution order. Idempotent.
/// Throws ShapeMismatch when a layer's input dims are incompatible.
void infer_shapes(ModelGraph& graph);

/// Shape of the tensor layer `index` reads through in0 (the graph input
/// shape for kGraphInput). infer_shapes must have run for producer layers.
const std::vector<int32_t>& layer_input_shape(const ModelGraph& graph,
                                              int32_t index);

/// Structural check; returns human-readable violations, empty when
/// well-formed. Never throws: shape errors come back as violations too.
std::vector<std::string> validate_graph(const ModelGraph& graph);

/// Weight element count a layer of this kind needs for the given input
/// shape, zero for weightless kinds. Bias count reported separately.
struct WeightShape {
    size_t weight_elems = 0;
    size_t bias_elems = 0;
};
WeightShape expected_weight_shape(const LayerSpec& layer,
                                  const std::vector<int32_t>& in_shape);

// ---------------------------------------------------------------------------
// Architecture family: choice blocks and the sampled-path supernet.

enum class BlockType : uint16_t { Downsample, MobileNetV2, Transformer, Pooling };

const char* block_type_name(BlockType type);
std::optional<BlockType> block_type_from_name(std::string_view name);

/// Candidate vocabulary per block type:
///   Downsample:  "conv_down" (3x3 stride 2) | "conv_maxpool" (3x3 + 2x2 max)
///   MobileNetV2: "ir_e2" | "ir_e4" (inverted residual, expansion 2 or 4)
///   Transformer: "enc_h2" | "enc_h4" (conv-wrapped encoder stack, 2/4 heads)
///   Pooling:     "seqpool" | "avgpool"
struct ChoiceBlock {
    BlockType block_type = BlockType::Downsample;
    std::vector<std::string> candidates;
    std::vector<int32_t> channel_options;
    std::vector<int32_t> repeat_options;  // used by MobileNetV2/Transformer
};

/// Candidate names valid for a block type, in canonical order.
std::vector<std::string> candidate_vocabulary(BlockType type);

struct SupernetSpec {
    std::vector<int32_t> input_shape;  // [C,H,W]
    int32_t n_classes = 10;
    std::vector<ChoiceBlock> choice_blocks;
};

/// Two downsample + inverted-residual + transformer stages, then pooling.
/// stage_channels/stage_repeats index the seven blocks in order.
SupernetSpec make_default_supernet(
    std::vector<int32_t> input_shape, int32_t n_classes,
    const std::vector<std::vector<int32_t>>& stage_channels,
    const std::vector<std::vector<int32_t>>& stage_repeats);

std::vector<std::string> validate_supernet(const SupernetSpec& sn);

/// Draws one candidate, one channel option and one repeat count per choice
/// block and materializes the flat layer list plus the classifier head.
/// Weights are left empty; origin tags record the drawn candidate.
ModelGraph sample_single_path(const SupernetSpec& sn, Rng& rng);
ModelGraph sample_single_path(const SupernetSpec& sn, uint64_t seed);

} // namespace tinyforge
