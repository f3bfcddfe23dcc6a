#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tinyforge/resource.hpp"
#include "tinyforge/runtime.hpp"

namespace tinyforge {

/**
 * @brief Self-contained binary deployment artifact.
 *
 * Little-endian throughout. Layout:
 *   32-byte header: "TFPK", version u16, flags u16 (bit0 = little-endian),
 *   layer count u32, arena size u32, input rank u32, input scale f32,
 *   input zero point i32, reserved u32.
 *   input dims           i32 * rank
 *   arena slot table     input slot, then one slot per layer
 *                        (offset u32, size u32, end u16, pad u16)
 *   layer records        fixed fields, output shape, blob directory
 *   blob section         weight streams, bias words, norm parameters
 *
 * Everything the executor needs is in the file; loading rebuilds the same
 * prepared form that serialization started from, so a round trip through
 * the package reproduces in-memory inference byte for byte.
 */

/// Serializes a prepared model. Deterministic: equal models give equal bytes.
std::vector<uint8_t> serialize_package(const PreparedModel& m);

/**
 * @brief Serializes and writes to `path`, enforcing the budgets.
 *
 * Throws BudgetExceeded when the file would overflow the storage budget or
 * the planned arena plus the softmax table reserve would overflow the
 * memory budget, unless `override_budget` is set.
 */
void emit_package(const PreparedModel& m, const std::string& path,
                  const ResourceBudget& budget = {},
                  bool override_budget = false);

/// Parses a package image. Throws BadMagic on a foreign file and
/// CorruptStream on truncation or inconsistent tables.
PreparedModel load_package_bytes(std::span<const uint8_t> bytes);

/// Reads and parses a package file.
PreparedModel load_package(const std::string& path);

} // namespace tinyforge
