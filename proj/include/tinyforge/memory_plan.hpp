#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tinyforge/ir.hpp"

namespace tinyforge {

/// Which end of the arena a buffer is allocated from.
enum class Placement : uint8_t { Head, Tail };

struct BufferSlot {
    size_t offset = 0;  // absolute byte offset into the arena
    size_t size = 0;    // bytes
    Placement side = Placement::Head;
};

/**
 * @brief Static arena layout for one model graph.
 *
 * Every inter-layer activation gets a fixed slot decided ahead of time, so
 * execution needs no allocator: buffers grow from both ends of a single
 * arena and a layer's output always sits on the opposite end from its
 * primary input. `scratch` records each layer's worst-case transient bytes
 * (attention temporaries, pre-pool planes, sparse accumulators); those live
 * outside the arena and are reported for information only.
 */
struct MemoryPlan {
    size_t arena_size = 0;
    BufferSlot input;
    std::vector<BufferSlot> outputs;  // one per layer
    std::vector<size_t> scratch;      // one per layer
};

/// Bytes needed for one activation tensor (int8, so bytes == elements).
size_t buffer_bytes(const std::vector<int32_t>& shape);

/**
 * @brief Plans arena offsets by double-ended stack allocation.
 *
 * Layers are walked in execution order. A layer's output is pushed on the
 * end opposite its first input; a buffer is popped as soon as it is both
 * dead (all consumers done) and on top of its stack. Buffers with a second
 * pending consumer (residual connections) stay pinned where they are. The
 * arena size is the high-water mark of the two stack tops combined.
 *
 * Shapes are inferred on a copy if the graph has not been shaped yet.
 */
MemoryPlan plan_memory(const ModelGraph& graph);

} // namespace tinyforge
