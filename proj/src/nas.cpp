#include "tinyforge/nas.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <unistd.h>

#include "json.hpp"
#include "tinyforge/compress.hpp"
#include "tinyforge/errors.hpp"
#include "tinyforge/kernels.hpp"
#include "tinyforge/model_io.hpp"

namespace tinyforge {

namespace {

using nlohmann::json;

int32_t channels_of(const std::vector<int32_t>& shape) {
    return shape.size() == 3 ? shape[0] : shape.back();
}

/// Per-layer sparsity assignment: one global rho, per-layer block sizes
/// (depthwise rows are always 3-wide).
void assign_sparsity(ModelGraph& g, double rho,
                     const std::vector<int>& block_options, Rng& rng) {
    for (LayerSpec& l : g.layers) {
        if (!kind_has_weight(l.kind) && l.kind != LayerKind::Encoder) continue;
        SparseConfig c;
        c.sparsity = rho;
        c.block_size = l.kind == LayerKind::DWConv3x3
                           ? 3
                           : (block_options.empty() ? 4
                                                    : rng.pick(block_options));
        l.sparse_cfg = c;
    }
}

/// Prunes every configured weight tensor to `rho` (block sizes stay per
/// layer). Idempotent in the sense that pruning to rising targets matches
/// a single prune to the last target.
void prune_model_to(ModelGraph& g, double rho) {
    for (LayerSpec& l : g.layers) {
        if (!l.sparse_cfg) continue;
        const int b = l.sparse_cfg->block_size;
        if (l.weight) {
            l.weight->data = prune_blockwise(l.weight->data, rho, b);
        }
        if (l.enc) {
            for (LinearParams* lp : {&l.enc->wq, &l.enc->wk, &l.enc->wv,
                                     &l.enc->wo, &l.enc->fc1, &l.enc->fc2}) {
                lp->w.data = prune_blockwise(lp->w.data, rho, b);
            }
        }
    }
}

void emit_log(const SearchLog& log, const json& record) {
    if (log) log(record.dump());
}

SupernetSpec narrow_supernet(const SupernetSpec& sn, Rng& rng) {
    SupernetSpec out = sn;
    for (ChoiceBlock& b : out.choice_blocks) {
        if (!b.channel_options.empty()) {
            b.channel_options = {rng.pick(b.channel_options)};
        }
        if (!b.repeat_options.empty()) {
            b.repeat_options = {rng.pick(b.repeat_options)};
        }
    }
    return out;
}

} // namespace

void assign_uniform_sparsity(ModelGraph& graph, double sparsity,
                             int block_size) {
    for (LayerSpec& l : graph.layers) {
        if (!kind_has_weight(l.kind) && l.kind != LayerKind::Encoder) continue;
        SparseConfig c;
        c.sparsity = sparsity;
        c.block_size = l.kind == LayerKind::DWConv3x3 ? 3 : block_size;
        l.sparse_cfg = c;
    }
}

void prune_weights(ModelGraph& graph) {
    for (LayerSpec& l : graph.layers) {
        if (!l.sparse_cfg) continue;
        const double rho = l.sparse_cfg->sparsity;
        const int b = l.sparse_cfg->block_size;
        if (l.weight) l.weight->data = prune_blockwise(l.weight->data, rho, b);
        if (l.enc) {
            for (LinearParams* lp : {&l.enc->wq, &l.enc->wk, &l.enc->wv,
                                     &l.enc->wo, &l.enc->fc1, &l.enc->fc2}) {
                lp->w.data = prune_blockwise(lp->w.data, rho, b);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluators.

SurrogateEvaluator::SurrogateEvaluator(double optimum_params,
                                       double sparsity_penalty, double width)
    : optimum_(optimum_params), penalty_(sparsity_penalty), width_(width) {
    if (!(optimum_ > 0.0)) throw Error("surrogate optimum must be positive");
}

double SurrogateEvaluator::evaluate(const ModelGraph& model,
                                    const SparseConfig& cfg) {
    const auto params =
        static_cast<double>(effective_param_count(model));
    const double x = std::log2(std::max(params, 1.0) / optimum_);
    const double base = std::exp(-(x * x) / (2.0 * width_ * width_));
    return std::clamp(base * (1.0 - penalty_ * cfg.sparsity), 0.0, 1.0);
}

CommandEvaluator::CommandEvaluator(std::string command)
    : command_(std::move(command)) {
    if (command_.empty()) throw Error("evaluator command is empty");
}

double CommandEvaluator::evaluate(const ModelGraph& model,
                                  const SparseConfig& cfg) {
    const std::string base = "/tmp/tinyforge_eval_" +
                             std::to_string(::getpid()) + "_" +
                             std::to_string(counter_++);
    const std::string json_path = base + ".json";
    save_model(model, json_path);
    const std::string cmd = command_ + " " + json_path + " " +
                            std::to_string(cfg.sparsity) + " " +
                            std::to_string(cfg.block_size);
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw Error("cannot launch evaluator command");
    double acc = 0.0;
    const int got = std::fscanf(pipe, "%lf", &acc);
    const int rc = ::pclose(pipe);
    std::remove(json_path.c_str());
    std::remove((base + ".bin").c_str());
    if (got != 1 || rc != 0) {
        throw Error("evaluator command did not produce an accuracy");
    }
    if (!(acc >= 0.0 && acc <= 1.0)) {
        throw Error("evaluator accuracy " + std::to_string(acc) +
                    " is outside [0, 1]");
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Sampling and placeholder parameters.

ModelGraph sample_model(const SearchSpace& space, Rng& rng,
                        SparseConfig* cfg) {
    ModelGraph g = sample_single_path(space.supernet, rng);
    SparseConfig c;
    c.sparsity =
        space.sparsity_options.empty() ? 0.0 : rng.pick(space.sparsity_options);
    c.block_size = space.block_options.empty() ? 4
                                               : rng.pick(space.block_options);
    assign_sparsity(g, c.sparsity, space.block_options, rng);
    if (cfg) *cfg = c;
    return g;
}

void materialize_weights(ModelGraph& g, Rng& rng) {
    infer_shapes(g);
    g.input_q = QuantParams{1.0f / 64.0f, 0};
    const QuantParams act{1.0f / 16.0f, 0};

    std::vector<QuantParams> grid(g.layers.size());
    const auto q_of = [&](int32_t src) {
        return src == kGraphInput ? g.input_q
                                  : grid[static_cast<size_t>(src)];
    };
    const auto fill = [&](TensorI8& t) {
        for (auto& v : t.data) {
            v = static_cast<int8_t>(rng.range(-127, 127));
        }
    };
    const auto weight_scale = [](size_t fan_in) {
        return QuantParams{
            1.0f / (127.0f * std::sqrt(static_cast<float>(fan_in))), 0};
    };
    const auto make_linear = [&](int32_t in_f, int32_t out_f) {
        LinearParams p;
        p.w = TensorI8({out_f, in_f}, weight_scale(static_cast<size_t>(in_f)));
        fill(p.w);
        p.bias.assign(static_cast<size_t>(out_f), 0);
        p.out_q = act;
        return p;
    };

    for (size_t i = 0; i < g.layers.size(); ++i) {
        LayerSpec& l = g.layers[i];
        const QuantParams in_q = q_of(l.in0);
        const auto& in_shape = layer_input_shape(g, static_cast<int32_t>(i));
        const auto c_in = static_cast<size_t>(
            in_shape.empty() ? 0 : channels_of(in_shape));

        switch (l.kind) {
            case LayerKind::Conv3x3:
            case LayerKind::ConvMaxPool:
                l.weight = TensorI8({l.out_channels, in_shape[0], 3, 3},
                                    weight_scale(9 * c_in));
                fill(*l.weight);
                l.bias.assign(static_cast<size_t>(l.out_channels), 0);
                l.out_q = QuantParams{in_q.scale, 0};
                break;
            case LayerKind::Conv1x1:
                l.weight = TensorI8({l.out_channels, in_shape[0], 1, 1},
                                    weight_scale(c_in));
                fill(*l.weight);
                l.bias.assign(static_cast<size_t>(l.out_channels), 0);
                l.out_q = QuantParams{in_q.scale, 0};
                break;
            case LayerKind::DWConv3x3:
                l.weight = TensorI8({in_shape[0], 1, 3, 3}, weight_scale(9));
                fill(*l.weight);
                l.bias.assign(static_cast<size_t>(in_shape[0]), 0);
                l.out_q = QuantParams{in_q.scale, 0};
                break;
            case LayerKind::Linear: {
                const auto in_f = static_cast<int32_t>(numel_of(in_shape));
                l.weight = TensorI8({l.out_channels, in_f},
                                    weight_scale(static_cast<size_t>(in_f)));
                fill(*l.weight);
                l.bias.assign(static_cast<size_t>(l.out_channels), 0);
                l.out_q = QuantParams{in_q.scale, 0};
                break;
            }
            case LayerKind::SeqPool:
                l.weight = TensorI8({1, static_cast<int32_t>(c_in)},
                                    weight_scale(c_in));
                fill(*l.weight);
                l.bias.assign(1, 0);
                l.aux_q = act;
                l.out_q = act;
                break;
            case LayerKind::Encoder: {
                const auto c = static_cast<int32_t>(c_in);
                const std::vector<float> ones(c_in, 1.0f);
                const std::vector<float> zeros(c_in, 0.0f);
                EncoderParams e;
                e.ln1 = make_norm_params(ones, zeros, act);
                e.wq = make_linear(c, c);
                e.wk = make_linear(c, c);
                e.wv = make_linear(c, c);
                e.wo = make_linear(c, c);
                e.ln2 = make_norm_params(ones, zeros, act);
                e.fc1 = make_linear(c, l.hidden);
                e.fc2 = make_linear(l.hidden, c);
                e.scores_q = QuantParams{0.25f, 0};
                e.ctx_q = act;
                e.res1_q = act;
                l.enc = std::move(e);
                l.out_q = act;
                break;
            }
            case LayerKind::ScaledLayerNorm: {
                const std::vector<float> ones(c_in, 1.0f);
                const std::vector<float> zeros(c_in, 0.0f);
                l.norm = make_norm_params(ones, zeros, act);
                l.out_q = act;
                break;
            }
            case LayerKind::Softmax:
                l.out_q = kSoftmaxOutQ;
                break;
            case LayerKind::AvgPool2x2:
            case LayerKind::ResidualAdd:
            case LayerKind::ReLU:
            case LayerKind::MaxPool2x2:
                l.out_q = in_q;
                break;
        }
        grid[i] = l.out_q;
    }
}

// ---------------------------------------------------------------------------
// Algorithm 1: search-space screening.

SpaceAnalysis analyze_search_space(const SearchSpace& space, size_t iterations,
                                   uint64_t seed) {
    if (iterations < 1) throw Error("need at least one screening sample");
    if (!(space.lambda_lo < space.lambda_up)) {
        throw Error("lambda bounds must satisfy lo < up");
    }
    Rng rng(seed);
    SpaceAnalysis a;
    a.n_samples = iterations;
    const double lo =
        space.lambda_lo * static_cast<double>(space.budget.memory_limit);
    const double up =
        space.lambda_up * static_cast<double>(space.budget.memory_limit);
    for (size_t i = 0; i < iterations; ++i) {
        const ModelGraph g = sample_model(space, rng, nullptr);
        const ResourceReport r = resource_eval(g, space.budget);
        if (!r.fits) continue;
        ++a.n_evaluable;
        const auto p = static_cast<double>(r.effective_params);
        if (p >= lo && p <= up) ++a.n_acceptable;
    }
    if (a.n_evaluable == 0) {
        throw NoFeasibleSample("no sampled model fits the budgets");
    }
    a.probability = static_cast<double>(a.n_acceptable) /
                    static_cast<double>(a.n_evaluable);
    return a;
}

bool accept_search_space(double probability) { return probability > 0.9; }

// ---------------------------------------------------------------------------
// Algorithm 2: supernet search.

bool test_supernet(const SupernetSpec& supernet, const ResourceBudget& budget,
                   uint64_t seed, size_t paths) {
    Rng rng(seed);
    size_t exceed = 0;
    for (size_t i = 0; i < paths; ++i) {
        const ModelGraph g = sample_single_path(supernet, rng);
        const ResourceReport r = resource_eval(g, budget);
        if (r.peak_memory_bytes > budget.memory_limit) ++exceed;
    }
    return exceed <= paths / 2;
}

SupernetResult search_supernet(const SearchSpace& space,
                               AccuracyEvaluator& evaluator,
                               size_t t_supernets, size_t t_paths,
                               size_t t_configs, uint64_t seed,
                               const SearchLog& log) {
    if (t_supernets < 1 || t_paths < 1 || t_configs < 1) {
        throw Error("iteration counts must be at least 1");
    }
    Rng rng(seed);
    SupernetResult best;
    bool found = false;

    for (size_t i = 0; i < t_supernets; ++i) {
        SupernetSpec sn = narrow_supernet(space.supernet, rng);
        if (!test_supernet(sn, space.budget, rng.fork())) {
            emit_log(log, {{"event", "supernet_skipped"},
                           {"index", i},
                           {"reason", "memory_pretest"}});
            continue;
        }
        evaluator.train_hint(10);

        double sum = 0.0;
        size_t evaluated = 0;
        for (size_t j = 0; j < t_paths; ++j) {
            const ModelGraph path = sample_single_path(sn, rng);
            for (size_t k = 0; k < t_configs; ++k) {
                ModelGraph g = path;
                SparseConfig cfg;
                cfg.sparsity = space.sparsity_options.empty()
                                   ? 0.0
                                   : rng.pick(space.sparsity_options);
                assign_sparsity(g, cfg.sparsity, space.block_options, rng);
                const ResourceReport r = resource_eval(g, space.budget);
                if (!r.fits) continue;
                materialize_weights(g, rng);
                prune_model_to(g, cfg.sparsity);  // one-shot prune
                sum += evaluator.evaluate(g, cfg);
                ++evaluated;
            }
        }
        if (evaluated == 0) {
            emit_log(log, {{"event", "supernet_skipped"},
                           {"index", i},
                           {"reason", "no_feasible_samples"}});
            continue;
        }
        const double mean = sum / static_cast<double>(evaluated);
        json rec = {{"event", "supernet"},
                    {"index", i},
                    {"mean_accuracy", mean},
                    {"evaluated", evaluated}};
        json chans = json::array(), reps = json::array();
        for (const ChoiceBlock& b : sn.choice_blocks) {
            chans.push_back(b.channel_options.empty() ? 0
                                                      : b.channel_options[0]);
            reps.push_back(b.repeat_options.empty() ? 1 : b.repeat_options[0]);
        }
        rec["channels"] = chans;
        rec["repeats"] = reps;
        emit_log(log, rec);

        if (!found || mean > best.mean_score) {
            best.supernet = std::move(sn);
            best.mean_score = mean;
            best.evaluated = evaluated;
            found = true;
        }
    }
    if (!found) {
        throw NoFeasibleSupernet("every sampled supernet was skipped");
    }
    return best;
}

// ---------------------------------------------------------------------------
// Algorithm 3: single-path search with sparsity co-search.

SinglePathResult search_single_path(const SupernetSpec& supernet,
                                    const SearchSpace& space,
                                    AccuracyEvaluator& evaluator,
                                    size_t iterations, uint64_t seed,
                                    const SearchLog& log) {
    if (iterations < 1) throw Error("need at least one search iteration");
    Rng rng(seed);
    SinglePathResult best;
    bool found = false;

    // Gradual pruning inside one candidate: four rising targets on the
    // cubic ramp with a training hint between steps.
    constexpr int kPruneSteps = 4;

    for (size_t t = 0; t < iterations; ++t) {
        ModelGraph g = sample_single_path(supernet, rng);
        SparseConfig cfg;
        cfg.sparsity = space.sparsity_options.empty()
                           ? 0.0
                           : rng.pick(space.sparsity_options);
        cfg.block_size =
            space.block_options.empty() ? 4 : rng.pick(space.block_options);
        assign_sparsity(g, cfg.sparsity, space.block_options, rng);

        const ResourceReport pre = resource_eval(g, space.budget);
        if (!pre.fits) {
            emit_log(log, {{"event", "candidate_skipped"},
                           {"iteration", t},
                           {"sparsity", cfg.sparsity},
                           {"storage_bytes", pre.storage_bytes},
                           {"memory_bytes", pre.peak_memory_bytes}});
            continue;
        }

        materialize_weights(g, rng);
        AgpSchedule sched;
        sched.initial_sparsity = 0.0;
        sched.final_sparsity = cfg.sparsity;
        sched.begin_step = 0;
        sched.ramp_steps = kPruneSteps;
        sched.step_stride = 1;
        for (int s = 1; s <= kPruneSteps; ++s) {
            prune_model_to(g, sched.sparsity_at(s));
            evaluator.train_hint(1);
        }
        const double acc = evaluator.evaluate(g, cfg);
        emit_log(log, {{"event", "candidate"},
                       {"iteration", t},
                       {"accuracy", acc},
                       {"sparsity", cfg.sparsity},
                       {"effective_params", pre.effective_params},
                       {"storage_bytes", pre.storage_bytes},
                       {"memory_bytes", pre.peak_memory_bytes}});

        if (!found || acc > best.score) {
            best.model = std::move(g);
            best.cfg = cfg;
            best.score = acc;
            found = true;
        }
    }
    if (!found) throw NoFeasibleModel("every candidate was skipped");

    best.report = resource_eval(best.model, space.budget);
    if (!best.report.fits) {
        throw NoFeasibleModel("winner fails the budget re-check");
    }
    return best;
}

} // namespace tinyforge
