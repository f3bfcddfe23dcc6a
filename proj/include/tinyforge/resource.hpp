#pragma once

#include <cstddef>
#include <cstdint>

#include "tinyforge/ir.hpp"
#include "tinyforge/memory_plan.hpp"

namespace tinyforge {

/// Fixed reserve for the softmax exponent table plus its presence bitmap,
/// counted against the memory budget once per model.
inline constexpr size_t kSoftmaxTableReserve = 1228;

/// Serialized package framing costs used by the storage estimate. Every
/// stored tensor also pays one directory entry carrying its quantization,
/// role, and extent.
inline constexpr size_t kPackageHeaderBytes = 32;
inline constexpr size_t kLayerMetadataBytes = 32;
inline constexpr size_t kTensorEntryBytes = 36;
inline constexpr size_t kQuantPairBytes = 8;  // scale + zero point

/// Deployment target budgets in bytes. Defaults model a microcontroller
/// with 1 MiB of flash and 320 KiB of RAM.
struct ResourceBudget {
    size_t storage_limit = 1u << 20;
    size_t memory_limit = 320u << 10;
};

struct ResourceReport {
    size_t storage_bytes = 0;      // packaged model size estimate
    size_t peak_memory_bytes = 0;  // arena high water plus the table reserve
    size_t arena_bytes = 0;
    size_t effective_params = 0;   // weight elements surviving pruning
    bool fits = false;
};

/// Weight elements that survive pruning, over all weighted layers. Bias and
/// normalization parameters are excluded.
size_t effective_param_count(const ModelGraph& graph);

/**
 * @brief Evaluates a graph against the target budgets.
 *
 * Storage counts the package header, per-layer metadata, the cheaper of
 * dense and block-coded weight bytes per weight tensor, bias words, and
 * normalization parameters. Layers carrying real weights are measured by
 * pruning and coding them; shape-only layers (as produced during search)
 * are costed analytically from the same block arithmetic, so both paths
 * agree on identical inputs.
 *
 * Memory is the planned arena high water plus the softmax table reserve.
 */
ResourceReport resource_eval(const ModelGraph& graph,
                             const ResourceBudget& budget = {});

} // namespace tinyforge
