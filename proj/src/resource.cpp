#include "tinyforge/resource.hpp"

#include <algorithm>
#include <cmath>

#include "tinyforge/compress.hpp"
#include "tinyforge/errors.hpp"
#include "tinyforge/sparse_codec.hpp"

namespace tinyforge {

namespace {

size_t pruned_block_count(size_t n, const SparseConfig& cfg) {
    const size_t blocks = n / static_cast<size_t>(cfg.block_size);
    return static_cast<size_t>(static_cast<double>(blocks) * cfg.sparsity +
                               1e-9);
}

/// Elements left after blockwise pruning; the whole tensor without a config.
size_t kept_elems(size_t n, const std::optional<SparseConfig>& cfg) {
    if (!cfg) return n;
    return n - pruned_block_count(n, *cfg) * cfg->block_size;
}

/// Cheaper of dense and block-coded storage, from counts alone.
size_t analytic_weight_bytes(size_t n, const std::optional<SparseConfig>& cfg) {
    if (!cfg || n == 0) return n;
    const auto b = static_cast<size_t>(cfg->block_size);
    const size_t kept = n / b - pruned_block_count(n, *cfg);
    const size_t sparse = kept * (1 + b) + n % b;
    return std::min(n, sparse);
}

/// Cheaper of dense and block-coded storage, from the actual values.
size_t measured_weight_bytes(const std::vector<int8_t>& data,
                             const std::optional<SparseConfig>& cfg) {
    if (!cfg) return data.size();
    const auto pruned = prune_blockwise(data, cfg->sparsity, cfg->block_size);
    const auto enc = encode_blockwise_rle(pruned, *cfg);
    return std::min(data.size(), enc.size_bytes());
}

struct LayerFootprint {
    size_t weight_bytes = 0;
    size_t weight_elems_kept = 0;
    size_t bias_elems = 0;
    size_t norm_channels = 0;   // channels carrying gamma/beta pairs
    size_t tensor_entries = 0;  // directory entries the package writes
};

int32_t channels_of(const std::vector<int32_t>& shape) {
    if (shape.empty()) throw ShapeMismatch("rankless activation");
    return shape.size() == 3 ? shape[0] : shape.back();
}

LayerFootprint layer_footprint(const LayerSpec& l,
                               const std::vector<int32_t>& in_shape) {
    LayerFootprint f;
    const auto add_tensor = [&](size_t elems, const std::vector<int8_t>* data) {
        f.weight_bytes += data ? measured_weight_bytes(*data, l.sparse_cfg)
                               : analytic_weight_bytes(elems, l.sparse_cfg);
        f.weight_elems_kept += kept_elems(elems, l.sparse_cfg);
    };

    if (kind_has_weight(l.kind)) {
        const WeightShape ws = expected_weight_shape(l, in_shape);
        add_tensor(l.weight ? l.weight->data.size() : ws.weight_elems,
                   l.weight ? &l.weight->data : nullptr);
        f.bias_elems = ws.bias_elems;
        f.tensor_entries = 2;
        return f;
    }
    switch (l.kind) {
        case LayerKind::Encoder: {
            const auto c = static_cast<size_t>(channels_of(in_shape));
            const auto hid =
                static_cast<size_t>(l.hidden > 0 ? l.hidden : 2 * c);
            if (l.enc) {
                for (const LinearParams* p :
                     {&l.enc->wq, &l.enc->wk, &l.enc->wv, &l.enc->wo,
                      &l.enc->fc1, &l.enc->fc2}) {
                    add_tensor(p->w.data.size(), &p->w.data);
                    f.bias_elems += p->bias.size();
                }
            } else {
                for (int i = 0; i < 4; ++i) add_tensor(c * c, nullptr);
                add_tensor(hid * c, nullptr);
                add_tensor(c * hid, nullptr);
                f.bias_elems = 4 * c + hid + c;
            }
            f.norm_channels = 2 * c;
            // 6 linears with biases, 2 norm pairs, 3 activation carriers.
            f.tensor_entries = 19;
            return f;
        }
        case LayerKind::ScaledLayerNorm:
            f.norm_channels = static_cast<size_t>(channels_of(in_shape));
            f.tensor_entries = 2;
            return f;
        default:
            return f;
    }
}

} // namespace

size_t effective_param_count(const ModelGraph& graph) {
    ModelGraph shaped;
    const ModelGraph* g = &graph;
    if (std::any_of(graph.layers.begin(), graph.layers.end(),
                    [](const LayerSpec& l) { return l.out_shape.empty(); })) {
        shaped = graph;
        infer_shapes(shaped);
        g = &shaped;
    }
    size_t total = 0;
    for (size_t i = 0; i < g->layers.size(); ++i) {
        const auto& in = layer_input_shape(*g, static_cast<int32_t>(i));
        total += layer_footprint(g->layers[i], in).weight_elems_kept;
    }
    return total;
}

ResourceReport resource_eval(const ModelGraph& graph,
                             const ResourceBudget& budget) {
    ModelGraph shaped;
    const ModelGraph* g = &graph;
    if (std::any_of(graph.layers.begin(), graph.layers.end(),
                    [](const LayerSpec& l) { return l.out_shape.empty(); })) {
        shaped = graph;
        infer_shapes(shaped);
        g = &shaped;
    }

    ResourceReport r;
    r.storage_bytes = kPackageHeaderBytes;
    for (size_t i = 0; i < g->layers.size(); ++i) {
        const auto& in = layer_input_shape(*g, static_cast<int32_t>(i));
        const LayerFootprint f = layer_footprint(g->layers[i], in);
        r.storage_bytes += kLayerMetadataBytes + kQuantPairBytes +
                           kTensorEntryBytes * f.tensor_entries +
                           f.weight_bytes + 4 * f.bias_elems +
                           6 * f.norm_channels;
        r.effective_params += f.weight_elems_kept;
    }

    const MemoryPlan plan = plan_memory(*g);
    r.arena_bytes = plan.arena_size;
    r.peak_memory_bytes = plan.arena_size + kSoftmaxTableReserve;
    r.fits = r.storage_bytes <= budget.storage_limit &&
             r.peak_memory_bytes <= budget.memory_limit;
    return r;
}

} // namespace tinyforge
