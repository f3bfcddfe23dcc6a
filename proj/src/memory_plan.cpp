#include "tinyforge/memory_plan.hpp"

#include <algorithm>

#include "tinyforge/errors.hpp"

namespace tinyforge {

size_t buffer_bytes(const std::vector<int32_t>& shape) {
    return numel_of(shape);
}

namespace {

/// Worst-case transient bytes a layer needs beyond its arena slots.
size_t scratch_bytes(const LayerSpec& l, const std::vector<int32_t>& in_shape) {
    const size_t out_elems = numel_of(l.out_shape);
    switch (l.kind) {
        case LayerKind::Conv3x3:
        case LayerKind::Conv1x1:
        case LayerKind::DWConv3x3:
            // sparse path accumulator plane, one int32 per output pixel
            return out_elems / static_cast<size_t>(std::max(l.out_channels, 1)) *
                   4;
        case LayerKind::ConvMaxPool: {
            // full-resolution conv result before pooling, plus its plane
            const size_t pre = static_cast<size_t>(l.out_channels) *
                               in_shape[1] * in_shape[2];
            return pre + static_cast<size_t>(in_shape[1]) * in_shape[2] * 4;
        }
        case LayerKind::Linear:
            return 4;  // one int32 accumulator row in the sparse path
        case LayerKind::SeqPool: {
            const size_t tokens =
                in_shape.size() == 3
                    ? static_cast<size_t>(in_shape[1]) * in_shape[2]
                    : static_cast<size_t>(in_shape[0]);
            return 2 * tokens;  // logits and probabilities
        }
        case LayerKind::Encoder: {
            const size_t c = static_cast<size_t>(
                in_shape.size() == 3 ? in_shape[0] : in_shape[1]);
            const size_t t =
                in_shape.size() == 3
                    ? static_cast<size_t>(in_shape[1]) * in_shape[2]
                    : static_cast<size_t>(in_shape[0]);
            const size_t hidden = static_cast<size_t>(std::max(l.hidden, 1));
            return 9 * t * c + t * hidden + 2 * t;
        }
        default:
            return 0;
    }
}

} // namespace

MemoryPlan plan_memory(const ModelGraph& graph) {
    ModelGraph shaped;
    const ModelGraph* g = &graph;
    const bool needs_shapes = std::any_of(
        graph.layers.begin(), graph.layers.end(),
        [](const LayerSpec& l) { return l.out_shape.empty(); });
    if (needs_shapes) {
        shaped = graph;
        infer_shapes(shaped);
        g = &shaped;
    }

    const size_t n = g->layers.size();
    if (n == 0) return {};  // nothing runs: no arena, no slots

    // buffer 0 is the graph input, buffer 1 + i is layer i's output
    std::vector<size_t> size(n + 1, 0);
    std::vector<int> refs(n + 1, 0);
    size[0] = buffer_bytes(g->input_shape);
    for (size_t i = 0; i < n; ++i) {
        size[i + 1] = buffer_bytes(g->layers[i].out_shape);
        const auto bump = [&](int32_t src) {
            if (src == kGraphInput) {
                ++refs[0];
            } else {
                ++refs[static_cast<size_t>(src) + 1];
            }
        };
        bump(g->layers[i].in0);
        if (g->layers[i].in1) bump(*g->layers[i].in1);
    }
    if (n > 0) ++refs[n];  // the model output is read after the run

    std::vector<BufferSlot> slot(n + 1);
    std::vector<size_t> head_stack, tail_stack;
    size_t head_top = 0, tail_top = 0, peak = 0;

    const auto push = [&](size_t buf, Placement side) {
        slot[buf].size = size[buf];
        slot[buf].side = side;
        if (side == Placement::Head) {
            slot[buf].offset = head_top;
            head_top += size[buf];
            head_stack.push_back(buf);
        } else {
            tail_top += size[buf];
            // distance from the arena end to the buffer start; made
            // absolute once the arena size is known
            slot[buf].offset = tail_top;
            tail_stack.push_back(buf);
        }
        peak = std::max(peak, head_top + tail_top);
    };
    const auto pop_dead = [&](std::vector<size_t>& stack, size_t& top) {
        while (!stack.empty() && refs[stack.back()] == 0) {
            top -= size[stack.back()];
            stack.pop_back();
        }
    };

    push(0, Placement::Head);
    if (refs[0] == 0 && n > 0) {
        throw Error("graph never reads its input");
    }

    MemoryPlan plan;
    plan.outputs.resize(n);
    plan.scratch.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const LayerSpec& l = g->layers[i];
        const size_t in_buf =
            l.in0 == kGraphInput ? 0 : static_cast<size_t>(l.in0) + 1;
        const Placement out_side = slot[in_buf].side == Placement::Head
                                       ? Placement::Tail
                                       : Placement::Head;
        push(i + 1, out_side);

        const auto release = [&](int32_t src) {
            const size_t buf =
                src == kGraphInput ? 0 : static_cast<size_t>(src) + 1;
            --refs[buf];
        };
        release(l.in0);
        if (l.in1) release(*l.in1);
        pop_dead(head_stack, head_top);
        pop_dead(tail_stack, tail_top);

        plan.scratch[i] =
            scratch_bytes(l, layer_input_shape(*g, static_cast<int32_t>(i)));
    }

    plan.arena_size = peak;
    slot[0].offset = slot[0].side == Placement::Head
                         ? slot[0].offset
                         : peak - slot[0].offset;
    for (size_t i = 0; i < n; ++i) {
        if (slot[i + 1].side == Placement::Tail) {
            slot[i + 1].offset = peak - slot[i + 1].offset;
        }
        plan.outputs[i] = slot[i + 1];
    }
    plan.input = slot[0];
    return plan;
}

} // namespace tinyforge
