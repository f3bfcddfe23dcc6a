#include "tinyforge/runtime.hpp"

#include <chrono>
#include <cstring>

#include "tinyforge/compress.hpp"
#include "tinyforge/errors.hpp"

namespace tinyforge {

namespace {

void prune_in_place(TensorI8& w, const std::optional<SparseConfig>& cfg) {
    if (!cfg) return;
    w.data = prune_blockwise(w.data, cfg->sparsity, cfg->block_size);
}

StoredWeights store(const std::vector<int8_t>& data,
                    const std::optional<SparseConfig>& cfg) {
    return cfg ? choose_storage_format(data, *cfg)
               : StoredWeights::make_dense(data);
}

PreparedConv prepare_conv(const LayerSpec& l, int32_t in_channels) {
    if (!l.weight) throw Error("layer '" + l.name + "' has no weights");
    PreparedConv c;
    c.bias = l.bias;
    c.w_q = l.weight->qparams;
    c.out_q = l.out_q;
    c.out_channels = l.out_channels;
    switch (l.kind) {
        case LayerKind::Conv3x3:
            c.kernel = 3, c.stride = l.stride, c.padding = 1, c.groups = 1;
            break;
        case LayerKind::ConvMaxPool:
            c.kernel = 3, c.stride = 1, c.padding = 1, c.groups = 1;
            break;
        case LayerKind::Conv1x1:
            c.kernel = 1, c.stride = 1, c.padding = 0, c.groups = 1;
            break;
        case LayerKind::DWConv3x3:
            c.kernel = 3, c.stride = l.stride, c.padding = 1;
            c.groups = in_channels;
            c.out_channels = in_channels;
            break;
        default:
            throw Error("not a convolution kind");
    }
    TensorI8 w = *l.weight;
    prune_in_place(w, l.sparse_cfg);
    c.w = store(w.data, l.sparse_cfg);
    return c;
}

/// [C,H,W] plane-major to [T,C] token-major and back, around the
/// token-oriented cores.
void to_tokens(const int8_t* chw, int32_t c, int32_t t, int8_t* tok) {
    for (int32_t i = 0; i < t; ++i) {
        for (int32_t ch = 0; ch < c; ++ch) {
            tok[static_cast<size_t>(i) * c + ch] =
                chw[static_cast<size_t>(ch) * t + i];
        }
    }
}

void from_tokens(const int8_t* tok, int32_t c, int32_t t, int8_t* chw) {
    for (int32_t i = 0; i < t; ++i) {
        for (int32_t ch = 0; ch < c; ++ch) {
            chw[static_cast<size_t>(ch) * t + i] =
                tok[static_cast<size_t>(i) * c + ch];
        }
    }
}

} // namespace

PreparedModel PreparedModel::prepare(const ModelGraph& graph) {
    ModelGraph g = graph;
    infer_shapes(g);
    const auto violations = validate_graph(g);
    if (!violations.empty()) {
        std::string msg = "cannot prepare an invalid graph:";
        for (const auto& v : violations) msg += "\n  " + v;
        throw Error(msg);
    }

    PreparedModel m;
    m.input_shape_ = g.input_shape;
    m.input_q_ = g.input_q;

    std::vector<QuantParams> out_q(g.layers.size());
    const auto grid_of = [&](int32_t src) {
        return src == kGraphInput ? g.input_q
                                  : out_q[static_cast<size_t>(src)];
    };

    for (size_t i = 0; i < g.layers.size(); ++i) {
        const LayerSpec& l = g.layers[i];
        PreparedLayer p;
        p.kind = l.kind;
        p.in0 = l.in0;
        p.in1 = l.in1;
        p.in_shape = layer_input_shape(g, static_cast<int32_t>(i));
        p.out_shape = l.out_shape;
        p.in_q = grid_of(l.in0);
        if (l.in1) p.in1_q = grid_of(*l.in1);
        p.name = l.name.empty()
                     ? std::string(layer_kind_name(l.kind)) + "_" +
                           std::to_string(i)
                     : l.name;

        switch (l.kind) {
            case LayerKind::Conv3x3:
            case LayerKind::Conv1x1:
            case LayerKind::DWConv3x3:
            case LayerKind::ConvMaxPool:
                p.conv = prepare_conv(l, p.in_shape.at(0));
                p.out_q = l.out_q;
                break;
            case LayerKind::Linear: {
                if (!l.weight) {
                    throw Error("layer '" + p.name + "' has no weights");
                }
                LinearParams lp{*l.weight, l.bias, l.out_q};
                prune_in_place(lp.w, l.sparse_cfg);
                p.linear = prepare_linear(lp, l.sparse_cfg);
                p.out_q = l.out_q;
                break;
            }
            case LayerKind::SeqPool: {
                if (!l.weight) {
                    throw Error("layer '" + p.name + "' has no weights");
                }
                LinearParams lp{*l.weight, l.bias, l.aux_q};
                prune_in_place(lp.w, l.sparse_cfg);
                p.pool = PreparedSeqPool{prepare_linear(lp, l.sparse_cfg),
                                         l.out_q};
                p.out_q = l.out_q;
                break;
            }
            case LayerKind::Encoder: {
                if (!l.enc) {
                    throw Error("layer '" + p.name +
                                "' has no attention parameters");
                }
                EncoderParams e = *l.enc;
                for (LinearParams* lp :
                     {&e.wq, &e.wk, &e.wv, &e.wo, &e.fc1, &e.fc2}) {
                    prune_in_place(lp->w, l.sparse_cfg);
                }
                p.enc = prepare_encoder(e, l.heads, l.out_q, l.sparse_cfg);
                p.out_q = l.out_q;
                break;
            }
            case LayerKind::ScaledLayerNorm:
                if (!l.norm) {
                    throw Error("layer '" + p.name +
                                "' has no normalization parameters");
                }
                p.norm = *l.norm;
                p.out_q = l.norm->out_q;
                break;
            case LayerKind::Softmax:
                p.out_q = kSoftmaxOutQ;
                break;
            case LayerKind::ReLU:
            case LayerKind::MaxPool2x2:
                p.out_q = p.in_q;
                break;
            case LayerKind::AvgPool2x2:
            case LayerKind::ResidualAdd:
                p.out_q = l.out_q;
                break;
        }
        out_q[i] = p.out_q;
        m.layers_.push_back(std::move(p));
    }
    m.plan_ = plan_memory(g);
    return m;
}

PreparedModel PreparedModel::from_parts(std::vector<int32_t> input_shape,
                                        QuantParams input_q, MemoryPlan plan,
                                        std::vector<PreparedLayer> layers) {
    PreparedModel m;
    m.input_shape_ = std::move(input_shape);
    m.input_q_ = input_q;
    m.plan_ = std::move(plan);
    m.layers_ = std::move(layers);
    return m;
}

TensorI8 PreparedModel::run(const TensorI8& input, ExecutionStats* stats,
                            std::span<int8_t> arena_ext) const {
    if (input.shape != input_shape_) {
        throw ShapeMismatch("input shape does not match the prepared model");
    }
    if (layers_.empty()) {
        if (stats) *stats = {};
        return input;
    }
    std::vector<int8_t> backing;
    int8_t* arena = nullptr;
    if (!arena_ext.empty()) {
        if (arena_ext.size() < plan_.arena_size) {
            throw Error("supplied arena is smaller than the plan");
        }
        arena = arena_ext.data();
    } else {
        backing.resize(std::max<size_t>(plan_.arena_size, 1));
        arena = backing.data();
    }

    std::memcpy(arena + plan_.input.offset, input.data.data(),
                input.data.size());

    const size_t n = layers_.size();
    if (stats) {
        stats->layer_ms.assign(n, 0.0);
        stats->layer_macs.assign(n, 0);
        stats->total_ms = 0.0;
        stats->total_macs = 0;
        stats->exp_evals = 0;
        stats->arena_bytes = plan_.arena_size;
    }
    const uint64_t exp_before = kernel_counters().exp_evals;

    const auto buf = [&](int32_t src) -> const int8_t* {
        return src == kGraphInput
                   ? arena + plan_.input.offset
                   : arena + plan_.outputs[static_cast<size_t>(src)].offset;
    };

    for (size_t i = 0; i < n; ++i) {
        const PreparedLayer& p = layers_[i];
        const int8_t* a = buf(p.in0);
        int8_t* out = arena + plan_.outputs[i].offset;
        const auto& s = p.in_shape;

        const uint64_t macs_before = kernel_counters().macs;
        const auto t0 = std::chrono::steady_clock::now();

        switch (p.kind) {
            case LayerKind::Conv3x3:
            case LayerKind::Conv1x1:
            case LayerKind::DWConv3x3: {
                const PreparedConv& c = *p.conv;
                const ConvGeom geom{s[0],     s[1],     s[2],      c.out_channels,
                                    c.kernel, c.stride, c.padding, c.groups};
                conv2d_core(a, p.in_q, geom, c, out);
                break;
            }
            case LayerKind::ConvMaxPool: {
                const PreparedConv& c = *p.conv;
                const ConvGeom geom{s[0], s[1], s[2], c.out_channels,
                                    3,    1,    1,    1};
                std::vector<int8_t> pre(static_cast<size_t>(c.out_channels) *
                                        s[1] * s[2]);
                conv2d_core(a, p.in_q, geom, c, pre.data());
                maxpool2x2_core(pre.data(), c.out_channels, s[1], s[2], out);
                break;
            }
            case LayerKind::Linear: {
                const auto rows = static_cast<int32_t>(
                    numel_of(s) / static_cast<size_t>(p.linear->in_features));
                linear_core(a, p.in_q, rows, *p.linear, out);
                break;
            }
            case LayerKind::MaxPool2x2:
                maxpool2x2_core(a, s[0], s[1], s[2], out);
                break;
            case LayerKind::AvgPool2x2:
                avgpool2x2_core(a, p.in_q, s[0], s[1], s[2], p.out_q, out);
                break;
            case LayerKind::ReLU:
                relu_core(a, numel_of(s), p.in_q.zero_point, out);
                break;
            case LayerKind::Softmax: {
                SoftmaxLUT lut(p.in_q.scale);
                const int32_t ch = s.back();
                softmax_core(a, static_cast<int32_t>(numel_of(s) / ch), ch,
                             lut, out);
                break;
            }
            case LayerKind::ResidualAdd:
                residual_add_core(a, p.in_q, buf(*p.in1), p.in1_q, numel_of(s),
                                  p.out_q, out);
                break;
            case LayerKind::ScaledLayerNorm: {
                if (s.size() == 3) {
                    const int32_t c = s[0], t = s[1] * s[2];
                    std::vector<int8_t> tok(static_cast<size_t>(t) * c);
                    std::vector<int8_t> ntok(tok.size());
                    to_tokens(a, c, t, tok.data());
                    layernorm_core(tok.data(), p.in_q, t, c, *p.norm,
                                   ntok.data());
                    from_tokens(ntok.data(), c, t, out);
                } else {
                    const int32_t c = s.back();
                    layernorm_core(a, p.in_q,
                                   static_cast<int32_t>(numel_of(s) / c), c,
                                   *p.norm, out);
                }
                break;
            }
            case LayerKind::Encoder: {
                if (s.size() == 3) {
                    const int32_t c = s[0], t = s[1] * s[2];
                    std::vector<int8_t> tok(static_cast<size_t>(t) * c);
                    std::vector<int8_t> etok(tok.size());
                    to_tokens(a, c, t, tok.data());
                    encoder_core(tok.data(), p.in_q, t, c, *p.enc,
                                 etok.data());
                    from_tokens(etok.data(), c, t, out);
                } else {
                    encoder_core(a, p.in_q, s[0], s[1], *p.enc, out);
                }
                break;
            }
            case LayerKind::SeqPool: {
                if (s.size() == 3) {
                    const int32_t c = s[0], t = s[1] * s[2];
                    std::vector<int8_t> tok(static_cast<size_t>(t) * c);
                    to_tokens(a, c, t, tok.data());
                    seqpool_core(tok.data(), p.in_q, t, c, *p.pool, out);
                } else {
                    seqpool_core(a, p.in_q, s[0], s[1], *p.pool, out);
                }
                break;
            }
        }

        const auto t1 = std::chrono::steady_clock::now();
        if (stats) {
            stats->layer_ms[i] =
                std::chrono::duration<double, std::milli>(t1 - t0).count();
            stats->layer_macs[i] = kernel_counters().macs - macs_before;
            stats->total_ms += stats->layer_ms[i];
            stats->total_macs += stats->layer_macs[i];
        }
    }
    if (stats) stats->exp_evals = kernel_counters().exp_evals - exp_before;

    TensorI8 result;
    const PreparedLayer& last = layers_.back();
    result.shape = last.out_shape;
    result.qparams = last.out_q;
    const int8_t* src = arena + plan_.outputs.back().offset;
    result.data.assign(src, src + numel_of(last.out_shape));
    return result;
}

} // namespace tinyforge
