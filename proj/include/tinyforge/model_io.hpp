#pragma once

#include <memory>
#include <string>

#include "tinyforge/ir.hpp"
#include "tinyforge/nas.hpp"

namespace tinyforge {

/*
 * Model files are a JSON description plus a raw little-endian sidecar for
 * the numeric payloads. The JSON carries shapes, quantization grids and
 * per-tensor [offset, length) byte ranges into the sidecar; the sidecar
 * holds int8 weights, int32 biases and int16/int32 norm vectors back to
 * back. save_model derives the sidecar path from the JSON path (extension
 * replaced with .bin) and records only its basename, so the pair can move
 * between directories together.
 *
 * Malformed input raises ParseError whose message names the offending
 * field path, e.g. "layers[3].weight.length".
 */
void save_model(const ModelGraph& graph, const std::string& json_path);
ModelGraph load_model(const std::string& json_path);

/// Tensor files carry one ASCII header line "i8 d0 d1 ...\n" followed by
/// the row-major int8 payload. Quantization is by convention of the
/// producing graph and is not stored.
void save_tensor(const TensorI8& tensor, const std::string& path);
TensorI8 load_tensor(const std::string& path);

/// Everything a search run needs: the space itself, iteration counts and
/// the evaluator choice.
struct SearchConfig {
    SearchSpace space;
    uint64_t seed = 1;
    size_t screen_iterations = 1000;
    size_t t_supernets = 6;
    size_t t_paths = 4;
    size_t t_configs = 2;
    size_t path_iterations = 32;

    std::string evaluator_type = "surrogate";  // "surrogate" | "command"
    std::string evaluator_command;
    double surrogate_optimum = 0.0;  // 0 = midpoint of the acceptable band
    double surrogate_penalty = 0.05;
    double surrogate_width = 1.0;
};

SearchConfig load_search_config(const std::string& path);

/// Instantiates the evaluator a config asks for.
std::unique_ptr<AccuracyEvaluator> make_evaluator(const SearchConfig& cfg);

} // namespace tinyforge
