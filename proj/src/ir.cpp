#include "tinyforge/ir.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "tinyforge/errors.hpp"

namespace tinyforge {

namespace {

struct KindName {
    LayerKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::Conv3x3, "conv3x3"},
    {LayerKind::Conv1x1, "conv1x1"},
    {LayerKind::DWConv3x3, "dwconv3x3"},
    {LayerKind::Linear, "linear"},
    {LayerKind::MaxPool2x2, "maxpool2x2"},
    {LayerKind::AvgPool2x2, "avgpool2x2"},
    {LayerKind::SeqPool, "seqpool"},
    {LayerKind::ConvMaxPool, "conv_maxpool"},
    {LayerKind::Encoder, "encoder"},
    {LayerKind::ScaledLayerNorm, "layernorm"},
    {LayerKind::Softmax, "softmax"},
    {LayerKind::ReLU, "relu"},
    {LayerKind::ResidualAdd, "residual_add"},
};

} // namespace

const char* layer_kind_name(LayerKind kind) {
    for (const auto& e : kKindNames) {
        if (e.kind == kind) return e.name;
    }
    return "unknown";
}

std::optional<LayerKind> layer_kind_from_name(std::string_view name) {
    for (const auto& e : kKindNames) {
        if (name == e.name) return e.kind;
    }
    return std::nullopt;
}

bool kind_has_weight(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv3x3:
        case LayerKind::Conv1x1:
        case LayerKind::DWConv3x3:
        case LayerKind::Linear:
        case LayerKind::ConvMaxPool:
        case LayerKind::SeqPool:
            return true;
        default:
            return false;
    }
}

NormParams make_norm_params(std::span<const float> gamma,
                            std::span<const float> beta, QuantParams out_q) {
    if (gamma.size() != beta.size()) {
        throw ShapeMismatch("gamma and beta lengths differ");
    }
    float peak = 0.0f;
    for (float g : gamma) peak = std::max(peak, std::fabs(g));
    NormParams p;
    p.gamma_scale = peak > 0.0f ? peak / 32767.0f : 1.0f;
    p.out_q = out_q;
    p.gamma_q.resize(gamma.size());
    p.beta_q.resize(beta.size());
    for (size_t i = 0; i < gamma.size(); ++i) {
        const double gq = std::round(gamma[i] / p.gamma_scale);
        p.gamma_q[i] = static_cast<int16_t>(std::clamp(gq, -32767.0, 32767.0));
        // beta shares gamma's scale divided by the 2^7 normalization gain.
        p.beta_q[i] = static_cast<int32_t>(
            std::round(beta[i] * 128.0 / p.gamma_scale));
    }
    return p;
}

const std::vector<int32_t>& layer_input_shape(const ModelGraph& graph,
                                              int32_t index) {
    const LayerSpec& layer = graph.layers.at(index);
    if (layer.in0 == kGraphInput) return graph.input_shape;
    if (layer.in0 < 0 || layer.in0 >= index) {
        throw ShapeMismatch("layer " + std::to_string(index) +
                            " reads from layer " + std::to_string(layer.in0) +
                            " which is not earlier in the list");
    }
    return graph.layers[layer.in0].out_shape;
}

namespace {

int32_t channels_of(const std::vector<int32_t>& shape) {
    if (shape.size() == 2) return shape[1];  // [T, C]
    if (shape.size() == 3) return shape[0];  // [C, H, W]
    throw ShapeMismatch("expected rank-2 or rank-3 tensor");
}

void require_rank(const std::vector<int32_t>& shape, size_t rank,
                  const std::string& who) {
    if (shape.size() != rank) {
        throw ShapeMismatch(who + " expects rank-" + std::to_string(rank) +
                            " input, got rank " + std::to_string(shape.size()));
    }
}

std::vector<int32_t> infer_one(const ModelGraph& graph, int32_t index) {
    const LayerSpec& l = graph.layers[index];
    const std::vector<int32_t>& in = layer_input_shape(graph, index);
    const std::string who = "layer " + std::to_string(index) + " (" +
                            layer_kind_name(l.kind) + ")";
    switch (l.kind) {
        case LayerKind::Conv3x3: {
            require_rank(in, 3, who);
            if (l.stride != 1 && l.stride != 2) {
                throw ShapeMismatch(who + " stride must be 1 or 2");
            }
            // kernel 3, padding 1
            const int32_t h = (in[1] - 1) / l.stride + 1;
            const int32_t w = (in[2] - 1) / l.stride + 1;
            return {l.out_channels, h, w};
        }
        case LayerKind::Conv1x1: {
            require_rank(in, 3, who);
            return {l.out_channels, in[1], in[2]};
        }
        case LayerKind::DWConv3x3: {
            require_rank(in, 3, who);
            if (l.out_channels != 0 && l.out_channels != in[0]) {
                throw ShapeMismatch(who + " cannot change channel count");
            }
            if (l.stride != 1 && l.stride != 2) {
                throw ShapeMismatch(who + " stride must be 1 or 2");
            }
            const int32_t h = (in[1] - 1) / l.stride + 1;
            const int32_t w = (in[2] - 1) / l.stride + 1;
            return {in[0], h, w};
        }
        case LayerKind::Linear: {
            if (l.out_channels <= 0) {
                throw ShapeMismatch(who + " needs a positive output width");
            }
            return {l.out_channels};
        }
        case LayerKind::MaxPool2x2:
        case LayerKind::AvgPool2x2: {
            require_rank(in, 3, who);
            if (in[1] % 2 != 0 || in[2] % 2 != 0) {
                throw ShapeMismatch(who + " needs even spatial dims, got " +
                                    std::to_string(in[1]) + "x" +
                                    std::to_string(in[2]));
            }
            return {in[0], in[1] / 2, in[2] / 2};
        }
        case LayerKind::SeqPool: {
            return {channels_of(in)};
        }
        case LayerKind::ConvMaxPool: {
            require_rank(in, 3, who);
            if (in[1] % 2 != 0 || in[2] % 2 != 0) {
                throw ShapeMismatch(who + " needs even spatial dims, got " +
                                    std::to_string(in[1]) + "x" +
                                    std::to_string(in[2]));
            }
            return {l.out_channels, in[1] / 2, in[2] / 2};
        }
        case LayerKind::Encoder: {
            const int32_t c = channels_of(in);
            if (l.heads <= 0 || c % l.heads != 0) {
                throw ShapeMismatch(who + ": head count " +
                                    std::to_string(l.heads) +
                                    " does not divide " + std::to_string(c) +
                                    " channels");
            }
            return in;
        }
        case LayerKind::ScaledLayerNorm:
        case LayerKind::Softmax:
        case LayerKind::ReLU:
            if (in.empty()) throw ShapeMismatch(who + " input has no shape");
            return in;
        case LayerKind::ResidualAdd: {
            if (!l.in1) throw ShapeMismatch(who + " needs a second input");
            const std::vector<int32_t>& other =
                *l.in1 == kGraphInput ? graph.input_shape
                                      : graph.layers.at(*l.in1).out_shape;
            if (in != other) {
                throw ShapeMismatch(who + " operand shapes differ");
            }
            return in;
        }
    }
    throw ShapeMismatch(who + " has unknown kind");
}

} // namespace

void infer_shapes(ModelGraph& graph) {
    for (size_t i = 0; i < graph.layers.size(); ++i) {
        graph.layers[i].out_shape = infer_one(graph, static_cast<int32_t>(i));
    }
}

WeightShape expected_weight_shape(const LayerSpec& layer,
                                  const std::vector<int32_t>& in_shape) {
    WeightShape ws;
    const auto oc = static_cast<size_t>(layer.out_channels);
    switch (layer.kind) {
        case LayerKind::Conv3x3:
        case LayerKind::ConvMaxPool:
            ws.weight_elems = oc * static_cast<size_t>(in_shape.at(0)) * 9;
            ws.bias_elems = oc;
            break;
        case LayerKind::Conv1x1:
            ws.weight_elems = oc * static_cast<size_t>(in_shape.at(0));
            ws.bias_elems = oc;
            break;
        case LayerKind::DWConv3x3:
            ws.weight_elems = static_cast<size_t>(in_shape.at(0)) * 9;
            ws.bias_elems = static_cast<size_t>(in_shape.at(0));
            break;
        case LayerKind::Linear:
            ws.weight_elems = oc * numel_of(in_shape);
            ws.bias_elems = oc;
            break;
        case LayerKind::SeqPool:
            ws.weight_elems = static_cast<size_t>(
                in_shape.size() == 2 ? in_shape[1] : in_shape.at(0));
            ws.bias_elems = 1;
            break;
        default:
            break;
    }
    return ws;
}

namespace {

void check_layer(const ModelGraph& g, size_t i, std::vector<std::string>& out) {
    const LayerSpec& l = g.layers[i];
    auto flag = [&](const std::string& msg) {
        out.push_back("layer " + std::to_string(i) + " (" +
                      layer_kind_name(l.kind) + "): " + msg);
    };

    if (l.in0 < kGraphInput || l.in0 >= static_cast<int32_t>(i)) {
        flag("input reference " + std::to_string(l.in0) +
             " is not earlier in the list (cycle)");
    }
    if (l.in1 && (*l.in1 < kGraphInput || *l.in1 >= static_cast<int32_t>(i))) {
        flag("second input reference " + std::to_string(*l.in1) +
             " is not earlier in the list (cycle)");
    }
    if ((l.kind == LayerKind::ResidualAdd) != l.in1.has_value()) {
        flag(l.in1 ? "second input only allowed on residual adds"
                   : "residual add needs two inputs");
    }

    switch (l.kind) {
        case LayerKind::Conv3x3:
        case LayerKind::Conv1x1:
        case LayerKind::ConvMaxPool:
        case LayerKind::Linear:
            if (l.out_channels <= 0) flag("needs a positive output width");
            break;
        case LayerKind::Encoder:
            if (l.heads <= 0) flag("needs a positive head count");
            if (l.hidden <= 0) flag("needs a positive MLP width");
            break;
        default:
            break;
    }

    if (l.sparse_cfg) {
        const SparseConfig& c = *l.sparse_cfg;
        if (!(c.sparsity >= 0.0 && c.sparsity < 1.0)) {
            flag("sparsity must lie in [0, 1)");
        }
        const bool weighted = kind_has_weight(l.kind) ||
                              l.kind == LayerKind::Encoder;
        if (!weighted) {
            flag("pruning config on a weightless layer");
        } else if (l.kind == LayerKind::DWConv3x3) {
            if (c.block_size != 3) {
                flag("depthwise block size must be 3, got " +
                     std::to_string(c.block_size));
            }
        } else if (c.block_size != 2 && c.block_size != 4) {
            flag("block size must be 2 or 4, got " +
                 std::to_string(c.block_size));
        }
    }

    if (l.weight && !kind_has_weight(l.kind)) flag("unexpected weight tensor");
    if (l.norm && l.kind != LayerKind::ScaledLayerNorm) {
        flag("unexpected norm parameters");
    }
    if (l.enc && l.kind != LayerKind::Encoder) {
        flag("unexpected encoder parameters");
    }
}

} // namespace

std::vector<std::string> validate_graph(const ModelGraph& graph) {
    std::vector<std::string> out;
    for (size_t i = 0; i < graph.layers.size(); ++i) check_layer(graph, i, out);

    // Fan-out and sink structure: residual fan-out of 2, one terminal layer.
    std::vector<int> consumers(graph.layers.size(), 0);
    for (const LayerSpec& l : graph.layers) {
        if (l.in0 >= 0 && l.in0 < static_cast<int32_t>(graph.layers.size())) {
            ++consumers[l.in0];
        }
        if (l.in1 && *l.in1 >= 0 &&
            *l.in1 < static_cast<int32_t>(graph.layers.size())) {
            ++consumers[*l.in1];
        }
    }
    for (size_t i = 0; i < graph.layers.size(); ++i) {
        if (consumers[i] > 2) {
            out.push_back("layer " + std::to_string(i) + " feeds " +
                          std::to_string(consumers[i]) +
                          " consumers (at most 2 allowed)");
        }
        if (consumers[i] == 0 && i + 1 != graph.layers.size()) {
            out.push_back("layer " + std::to_string(i) +
                          " output is never consumed");
        }
    }

    ModelGraph probe = graph;
    try {
        infer_shapes(probe);
    } catch (const Error& e) {
        out.push_back(e.what());
        return out;
    }

    // Weight tensors, when present, must match the inferred geometry.
    for (size_t i = 0; i < probe.layers.size(); ++i) {
        const LayerSpec& l = probe.layers[i];
        if (!l.weight) continue;
        const WeightShape ws =
            expected_weight_shape(l, layer_input_shape(probe, i));
        if (l.weight->data.size() != ws.weight_elems) {
            out.push_back("layer " + std::to_string(i) + " weight has " +
                          std::to_string(l.weight->data.size()) +
                          " elements, expected " +
                          std::to_string(ws.weight_elems));
        }
        if (!l.bias.empty() && l.bias.size() != ws.bias_elems) {
            out.push_back("layer " + std::to_string(i) + " bias has " +
                          std::to_string(l.bias.size()) +
                          " entries, expected " + std::to_string(ws.bias_elems));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Supernet sampling.

const char* block_type_name(BlockType type) {
    switch (type) {
        case BlockType::Downsample: return "downsample";
        case BlockType::MobileNetV2: return "mobilenetv2";
        case BlockType::Transformer: return "transformer";
        case BlockType::Pooling: return "pooling";
    }
    return "unknown";
}

std::optional<BlockType> block_type_from_name(std::string_view name) {
    for (BlockType t : {BlockType::Downsample, BlockType::MobileNetV2,
                        BlockType::Transformer, BlockType::Pooling}) {
        if (name == block_type_name(t)) return t;
    }
    return std::nullopt;
}

std::vector<std::string> candidate_vocabulary(BlockType type) {
    switch (type) {
        case BlockType::Downsample: return {"conv_down", "conv_maxpool"};
        case BlockType::MobileNetV2: return {"ir_e2", "ir_e4"};
        case BlockType::Transformer: return {"enc_h2", "enc_h4"};
        case BlockType::Pooling: return {"seqpool", "avgpool"};
    }
    return {};
}

SupernetSpec make_default_supernet(
    std::vector<int32_t> input_shape, int32_t n_classes,
    const std::vector<std::vector<int32_t>>& stage_channels,
    const std::vector<std::vector<int32_t>>& stage_repeats) {
    constexpr BlockType kStages[7] = {
        BlockType::Downsample, BlockType::MobileNetV2, BlockType::Transformer,
        BlockType::Downsample, BlockType::MobileNetV2, BlockType::Transformer,
        BlockType::Pooling};
    if (stage_channels.size() != 7 || stage_repeats.size() != 7) {
        throw Error("default supernet takes exactly 7 stage option lists");
    }
    SupernetSpec sn;
    sn.input_shape = std::move(input_shape);
    sn.n_classes = n_classes;
    for (int i = 0; i < 7; ++i) {
        ChoiceBlock b;
        b.block_type = kStages[i];
        b.candidates = candidate_vocabulary(kStages[i]);
        b.channel_options = stage_channels[i];
        b.repeat_options = stage_repeats[i];
        sn.choice_blocks.push_back(std::move(b));
    }
    return sn;
}

std::vector<std::string> validate_supernet(const SupernetSpec& sn) {
    std::vector<std::string> out;
    if (sn.input_shape.size() != 3) {
        out.push_back("supernet input must be rank-3 [C,H,W]");
    }
    if (sn.n_classes <= 0) out.push_back("class count must be positive");
    for (size_t i = 0; i < sn.choice_blocks.size(); ++i) {
        const ChoiceBlock& b = sn.choice_blocks[i];
        auto flag = [&](const std::string& msg) {
            out.push_back("choice block " + std::to_string(i) + " (" +
                          block_type_name(b.block_type) + "): " + msg);
        };
        if (b.candidates.size() < 2 || b.candidates.size() > 3) {
            flag("must offer 2 or 3 candidates, has " +
                 std::to_string(b.candidates.size()));
        }
        const std::vector<std::string> vocab =
            candidate_vocabulary(b.block_type);
        for (const std::string& c : b.candidates) {
            if (std::find(vocab.begin(), vocab.end(), c) == vocab.end()) {
                flag("unknown candidate '" + c + "'");
            }
        }
        if (b.block_type != BlockType::Pooling && b.channel_options.empty()) {
            flag("needs at least one channel option");
        }
        if (b.block_type == BlockType::Transformer) {
            for (const std::string& c : b.candidates) {
                const int32_t heads = c == "enc_h4" ? 4 : 2;
                for (int32_t ch : b.channel_options) {
                    if (ch % heads != 0) {
                        flag("channel option " + std::to_string(ch) +
                             " not divisible by " + std::to_string(heads) +
                             " heads");
                    }
                }
            }
        }
        for (int32_t ch : b.channel_options) {
            if (ch <= 0) flag("channel option must be positive");
        }
        for (int32_t r : b.repeat_options) {
            if (r <= 0) flag("repeat option must be positive");
        }
    }
    return out;
}

namespace {

struct PathBuilder {
    ModelGraph& g;
    int32_t prev = kGraphInput;

    int32_t add(LayerSpec l) {
        if (l.in0 == kGraphInput && prev != kGraphInput) l.in0 = prev;
        g.layers.push_back(std::move(l));
        prev = static_cast<int32_t>(g.layers.size()) - 1;
        return prev;
    }
};

LayerSpec tagged(LayerKind kind, int32_t block, const std::string& cand,
                 const std::string& name) {
    LayerSpec l;
    l.kind = kind;
    l.origin_block = block;
    l.origin_candidate = cand;
    l.name = name;
    return l;
}

} // namespace

ModelGraph sample_single_path(const SupernetSpec& sn, Rng& rng) {
    ModelGraph g;
    g.input_shape = sn.input_shape;
    PathBuilder pb{g};
    int32_t cur = sn.input_shape.empty() ? 0 : sn.input_shape[0];

    for (size_t bi = 0; bi < sn.choice_blocks.size(); ++bi) {
        const ChoiceBlock& blk = sn.choice_blocks[bi];
        const std::string cand = rng.pick(blk.candidates);
        const int32_t ch = blk.channel_options.empty()
                               ? cur
                               : rng.pick(blk.channel_options);
        const int32_t rep =
            blk.repeat_options.empty() ? 1 : rng.pick(blk.repeat_options);
        const int32_t block = static_cast<int32_t>(bi);
        const std::string prefix = "b" + std::to_string(bi) + "_";

        switch (blk.block_type) {
            case BlockType::Downsample: {
                LayerSpec l = tagged(cand == "conv_down" ? LayerKind::Conv3x3
                                                         : LayerKind::ConvMaxPool,
                                     block, cand, prefix + cand);
                l.out_channels = ch;
                l.stride = cand == "conv_down" ? 2 : 1;
                pb.add(std::move(l));
                cur = ch;
                break;
            }
            case BlockType::MobileNetV2: {
                const int32_t expansion = cand == "ir_e2" ? 2 : 4;
                for (int32_t u = 0; u < rep; ++u) {
                    const int32_t unit_in = pb.prev;
                    const int32_t in_ch = cur;
                    const std::string up =
                        prefix + "u" + std::to_string(u) + "_";

                    LayerSpec expand = tagged(LayerKind::Conv1x1, block, cand,
                                              up + "expand");
                    expand.out_channels = in_ch * expansion;
                    pb.add(std::move(expand));
                    pb.add(tagged(LayerKind::ReLU, block, cand, up + "relu1"));

                    LayerSpec dw =
                        tagged(LayerKind::DWConv3x3, block, cand, up + "dw");
                    dw.out_channels = in_ch * expansion;
                    pb.add(std::move(dw));
                    pb.add(tagged(LayerKind::ReLU, block, cand, up + "relu2"));

                    LayerSpec project = tagged(LayerKind::Conv1x1, block, cand,
                                               up + "project");
                    project.out_channels = ch;
                    const int32_t proj_idx = pb.add(std::move(project));

                    if (in_ch == ch) {
                        LayerSpec res = tagged(LayerKind::ResidualAdd, block,
                                               cand, up + "add");
                        res.in0 = proj_idx;
                        res.in1 = unit_in;
                        pb.add(std::move(res));
                    }
                    cur = ch;
                }
                break;
            }
            case BlockType::Transformer: {
                const int32_t heads = cand == "enc_h4" ? 4 : 2;
                LayerSpec pre3 =
                    tagged(LayerKind::Conv3x3, block, cand, prefix + "pre3x3");
                pre3.out_channels = ch;
                pb.add(std::move(pre3));
                LayerSpec pre1 =
                    tagged(LayerKind::Conv1x1, block, cand, prefix + "pre1x1");
                pre1.out_channels = ch;
                pb.add(std::move(pre1));
                for (int32_t u = 0; u < rep; ++u) {
                    LayerSpec enc =
                        tagged(LayerKind::Encoder, block, cand,
                               prefix + "enc" + std::to_string(u));
                    enc.heads = heads;
                    enc.hidden = 2 * ch;
                    pb.add(std::move(enc));
                }
                LayerSpec post1 =
                    tagged(LayerKind::Conv1x1, block, cand, prefix + "post1x1");
                post1.out_channels = ch;
                pb.add(std::move(post1));
                LayerSpec post3 =
                    tagged(LayerKind::Conv3x3, block, cand, prefix + "post3x3");
                post3.out_channels = ch;
                pb.add(std::move(post3));
                cur = ch;
                break;
            }
            case BlockType::Pooling: {
                pb.add(tagged(cand == "seqpool" ? LayerKind::SeqPool
                                                : LayerKind::AvgPool2x2,
                              block, cand, prefix + cand));
                break;
            }
        }
    }

    LayerSpec head = tagged(LayerKind::Linear, -1, "head", "classifier");
    head.out_channels = sn.n_classes;
    pb.add(std::move(head));
    return g;
}

ModelGraph sample_single_path(const SupernetSpec& sn, uint64_t seed) {
    Rng rng(seed);
    return sample_single_path(sn, rng);
}

} // namespace tinyforge
