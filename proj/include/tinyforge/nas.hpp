#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tinyforge/ir.hpp"
#include "tinyforge/resource.hpp"
#include "tinyforge/rng.hpp"

namespace tinyforge {

/**
 * @brief Accuracy proxy for the search loops.
 *
 * Real training is out of scope, so candidates are scored by a surrogate
 * or an external process. Implementations must be deterministic for a
 * fixed seed; train_hint tells stateful evaluators how many epochs of
 * training to pretend happened before the next evaluate call.
 */
class AccuracyEvaluator {
public:
    virtual ~AccuracyEvaluator() = default;
    virtual void train_hint(int epochs) { (void)epochs; }
    /// Returns accuracy in [0, 1] for a concrete (model, sparsity) pair.
    virtual double evaluate(const ModelGraph& model,
                            const SparseConfig& cfg) = 0;
};

/**
 * @brief Deterministic stand-in evaluator.
 *
 * Scores peak when the model's kept parameter count hits `optimum_params`
 * and decay smoothly with log-distance from it; sparsity subtracts a
 * small penalty. Pure function of (param count, rho), so search results
 * are reproducible and enumerable in tests.
 */
class SurrogateEvaluator : public AccuracyEvaluator {
public:
    explicit SurrogateEvaluator(double optimum_params,
                                double sparsity_penalty = 0.05,
                                double width = 1.0);
    double evaluate(const ModelGraph& model, const SparseConfig& cfg) override;

private:
    double optimum_;
    double penalty_;
    double width_;
};

/**
 * @brief Bridges scoring to an external command.
 *
 * The command is run once per evaluation with the candidate written to a
 * temporary model file; it receives `<model.json> <sparsity> <block>` as
 * arguments and must print one floating-point accuracy to stdout.
 */
class CommandEvaluator : public AccuracyEvaluator {
public:
    explicit CommandEvaluator(std::string command);
    double evaluate(const ModelGraph& model, const SparseConfig& cfg) override;

private:
    std::string command_;
    int counter_ = 0;
};

/// One search log record sink; receives single-line structured text.
using SearchLog = std::function<void(const std::string&)>;

/**
 * @brief The whole search problem: architecture template plus sparsity
 * vocabulary plus the deployment budgets and acceptance bounds.
 */
struct SearchSpace {
    SupernetSpec supernet;                      // open channel/repeat ranges
    ResourceBudget budget;
    double lambda_lo = 0.8;
    double lambda_up = 2.8;
    std::vector<double> sparsity_options = {0.0, 0.5, 0.75};
    std::vector<int> block_options = {2, 4};    // depthwise rows force 3
};

/// Samples one concrete model from the space: a single path with random
/// widths/repeats, a global sparsity draw, and per-layer block sizes.
/// The drawn sparsity is recorded in `cfg` and on every weighted layer.
ModelGraph sample_model(const SearchSpace& space, Rng& rng, SparseConfig* cfg);

struct SpaceAnalysis {
    size_t n_samples = 0;
    size_t n_evaluable = 0;    // samples fitting both budgets
    size_t n_acceptable = 0;   // of those, kept params within lambda bounds
    double probability = 0.0;  // n_acceptable / n_evaluable
};

/**
 * @brief Search-space screening: sampling estimate of the probability
 * that a feasible sample has a parameter count worth training.
 *
 * Samples `iterations` (model, config) pairs; a sample is evaluable when
 * it fits both budgets and acceptable when its kept parameter count also
 * lies in [lambda_lo * L_m, lambda_up * L_m]. Throws NoFeasibleSample
 * when nothing is evaluable (the ratio would be 0/0).
 */
SpaceAnalysis analyze_search_space(const SearchSpace& space, size_t iterations,
                                   uint64_t seed);

/// Strict threshold: spaces are kept only when prob > 0.9.
bool accept_search_space(double probability);

/**
 * @brief Pre-screens one supernet: samples `paths` single-path models and
 * rejects when more than half exceed the memory budget.
 */
bool test_supernet(const SupernetSpec& supernet, const ResourceBudget& budget,
                   uint64_t seed, size_t paths = 100);

struct SupernetResult {
    SupernetSpec supernet;   // widths and repeats narrowed to singletons
    double mean_score = 0.0;
    size_t evaluated = 0;    // non-skipped (path, config) samples
};

/**
 * @brief Supernet architecture search.
 *
 * Samples `t_supernets` candidate supernets (channel and repeat ranges
 * narrowed to singletons, layer-type candidates kept open). Each one that
 * passes test_supernet is scored by the flat mean over `t_paths` sampled
 * paths times `t_configs` sparsity draws, one-shot pruned before
 * evaluation; resource-infeasible pairs are skipped. Returns the highest
 * mean. Throws NoFeasibleSupernet when every candidate was skipped.
 */
SupernetResult search_supernet(const SearchSpace& space,
                               AccuracyEvaluator& evaluator,
                               size_t t_supernets, size_t t_paths,
                               size_t t_configs, uint64_t seed,
                               const SearchLog& log = {});

struct SinglePathResult {
    ModelGraph model;        // concrete weights, pruned in place
    SparseConfig cfg;        // the winning global sparsity draw
    double score = 0.0;
    ResourceReport report;
};

/**
 * @brief Single-path model search over a (typically narrowed) supernet.
 *
 * Per iteration: sample a path and a sparsity config, skip when the
 * budgets fail, otherwise materialize weights and prune them along the
 * gradual schedule with a train_hint between steps, then evaluate.
 * Returns the argmax; its budget fit is re-checked before returning.
 * Throws NoFeasibleModel when every iteration was skipped.
 */
SinglePathResult search_single_path(const SupernetSpec& supernet,
                                    const SearchSpace& space,
                                    AccuracyEvaluator& evaluator,
                                    size_t iterations, uint64_t seed,
                                    const SearchLog& log = {});

/**
 * @brief Fills every weighted layer with deterministic placeholder
 * parameters (weights, biases, norm and attention tables, activation
 * grids) so a searched architecture can be pruned, packaged, and run.
 */
void materialize_weights(ModelGraph& graph, Rng& rng);

/// Gives every weighted layer one pruning config: the given sparsity and
/// block size, except depthwise layers whose rows are always 3 wide.
void assign_uniform_sparsity(ModelGraph& graph, double sparsity,
                             int block_size);

/// Prunes every configured weight tensor in place to its layer's target.
void prune_weights(ModelGraph& graph);

} // namespace tinyforge
