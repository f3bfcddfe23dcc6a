#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tinyforge/ir.hpp"
#include "tinyforge/kernels.hpp"
#include "tinyforge/memory_plan.hpp"

namespace tinyforge {

/**
 * @brief One executable layer bound to its arena slots.
 *
 * Weights already sit in their final storage format (dense or block coded)
 * and every rescale is a fixed-point multiplier, so running a layer is pure
 * integer arithmetic over the arena.
 */
struct PreparedLayer {
    LayerKind kind = LayerKind::ReLU;
    int32_t in0 = kGraphInput;
    std::optional<int32_t> in1;
    std::vector<int32_t> in_shape;
    std::vector<int32_t> out_shape;
    QuantParams in_q;   // quantization of the in0 activation
    QuantParams in1_q;  // quantization of the in1 activation, if any
    QuantParams out_q;

    std::optional<PreparedConv> conv;
    std::optional<PreparedLinear> linear;
    std::optional<PreparedSeqPool> pool;
    std::optional<PreparedEncoder> enc;
    std::optional<NormParams> norm;

    std::string name;
};

/// Per-run measurements. Counters are deltas against the global kernel
/// counters, so concurrent runs in one process would interleave them.
struct ExecutionStats {
    std::vector<double> layer_ms;
    std::vector<uint64_t> layer_macs;
    double total_ms = 0.0;
    uint64_t total_macs = 0;
    uint64_t exp_evals = 0;
    size_t arena_bytes = 0;
};

/**
 * @brief A graph lowered to kernel calls over one planned arena.
 *
 * prepare() prunes weights per layer config, picks the cheaper storage
 * format per tensor, resolves every activation grid, and lays out the
 * arena. The same prepared form is what gets serialized, so a package
 * reloaded elsewhere reproduces the in-memory run byte for byte.
 */
class PreparedModel {
public:
    static PreparedModel prepare(const ModelGraph& graph);

    /// Assembles a model from already-lowered parts (package loading).
    static PreparedModel from_parts(std::vector<int32_t> input_shape,
                                    QuantParams input_q, MemoryPlan plan,
                                    std::vector<PreparedLayer> layers);

    /// Runs the model. `arena` may supply external backing of at least
    /// plan().arena_size bytes; pass {} to let the call allocate.
    TensorI8 run(const TensorI8& input, ExecutionStats* stats = nullptr,
                 std::span<int8_t> arena = {}) const;

    const MemoryPlan& plan() const { return plan_; }
    const std::vector<PreparedLayer>& layers() const { return layers_; }
    const std::vector<int32_t>& input_shape() const { return input_shape_; }
    QuantParams input_q() const { return input_q_; }

private:
    std::vector<int32_t> input_shape_;
    QuantParams input_q_;
    MemoryPlan plan_;
    std::vector<PreparedLayer> layers_;
};

} // namespace tinyforge
