#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tinyforge/compress.hpp"
#include "tinyforge/errors.hpp"
#include "tinyforge/kernels.hpp"
#include "tinyforge/model_io.hpp"
#include "tinyforge/nas.hpp"
#include "tinyforge/package.hpp"
#include "tinyforge/resource.hpp"
#include "tinyforge/runtime.hpp"

namespace {

using namespace tinyforge;

// Exit codes are a stable contract: 0 success, 1 budget or shape
// violation, 2 malformed input, 3 infeasible search.
int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const BadMagic& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const CorruptStream& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NoFeasibleSample& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NoFeasibleSupernet& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NoFeasibleModel& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const BudgetExceeded& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

struct WeightRow {
    std::string name;
    size_t dense_bytes = 0;
    size_t stored_bytes = 0;
    bool sparse = false;
};

void collect_rows(const PreparedModel& m, std::vector<WeightRow>& rows) {
    const auto add = [&](const std::string& name, const StoredWeights& w) {
        WeightRow r;
        r.name = name;
        r.dense_bytes = w.numel();
        r.stored_bytes = w.size_bytes();
        r.sparse = w.format == StoredWeights::Format::Sparse;
        rows.push_back(std::move(r));
    };
    for (const PreparedLayer& l : m.layers()) {
        const std::string base = l.name.empty()
                                     ? std::string(layer_kind_name(l.kind))
                                     : l.name;
        if (l.conv) add(base, l.conv->w);
        if (l.linear) add(base, l.linear->w);
        if (l.pool) add(base + ".attn", l.pool->attn.w);
        if (l.enc) {
            add(base + ".wq", l.enc->wq.w);
            add(base + ".wk", l.enc->wk.w);
            add(base + ".wv", l.enc->wv.w);
            add(base + ".wo", l.enc->wo.w);
            add(base + ".fc1", l.enc->fc1.w);
            add(base + ".fc2", l.enc->fc2.w);
        }
    }
}

TensorI8 random_activation(const std::vector<int32_t>& shape, QuantParams q,
                           uint64_t seed) {
    TensorI8 t(shape, q);
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<int8_t>(rng.range(-128, 127));
    return t;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

int cmd_encode(const std::string& model_path, const std::string& out_path,
               double sparsity, int block, bool have_sparsity,
               const std::string& store, const ResourceBudget& budget,
               bool override_budget) {
    ModelGraph g = load_model(model_path);
    if (have_sparsity) assign_uniform_sparsity(g, sparsity, block);
    if (store == "dense") {
        // Keep the pruned values but store every tensor densely, so a
        // sparse twin of the same package computes identical results.
        prune_weights(g);
        for (LayerSpec& l : g.layers) l.sparse_cfg.reset();
    }

    const PreparedModel m = PreparedModel::prepare(g);
    const ResourceReport report = resource_eval(g, budget);
    emit_package(m, out_path, budget, override_budget);

    std::printf("package: %s\n", out_path.c_str());
    std::printf("storage: %zu / %zu bytes\n", report.storage_bytes,
                budget.storage_limit);
    std::printf("memory:  %zu / %zu bytes (arena %zu + table %zu)\n",
                report.peak_memory_bytes, budget.memory_limit,
                report.arena_bytes, kSoftmaxTableReserve);
    std::printf("effective params: %zu\n", report.effective_params);
    std::printf("fits: %s\n", report.fits ? "yes" : "no");

    std::vector<WeightRow> rows;
    collect_rows(m, rows);
    if (!rows.empty()) {
        std::printf("%-28s %10s %10s %8s %s\n", "weight", "dense B", "stored B",
                    "ratio", "format");
        for (const WeightRow& r : rows) {
            std::printf("%-28s %10zu %10zu %8.2f %s\n", r.name.c_str(),
                        r.dense_bytes, r.stored_bytes,
                        r.stored_bytes
                            ? static_cast<double>(r.dense_bytes) /
                                  static_cast<double>(r.stored_bytes)
                            : 0.0,
                        r.sparse ? "sparse" : "dense");
        }
    }
    return 0;
}

int cmd_infer(const std::string& package_path, const std::string& input_path,
              const std::string& output_path) {
    const PreparedModel m = load_package(package_path);
    TensorI8 input = load_tensor(input_path);
    input.qparams = m.input_q();

    ExecutionStats stats;
    const TensorI8 out = m.run(input, &stats);
    save_tensor(out, output_path);

    std::printf("output: %s (", output_path.c_str());
    for (size_t i = 0; i < out.shape.size(); ++i) {
        std::printf("%s%d", i ? "x" : "", out.shape[i]);
    }
    std::printf(")\n");
    std::printf("latency: %.3f ms  macs: %llu  exp evals: %llu\n",
                stats.total_ms,
                static_cast<unsigned long long>(stats.total_macs),
                static_cast<unsigned long long>(stats.exp_evals));
    std::printf("arena high water: %zu bytes (planned %zu)\n",
                stats.arena_bytes, m.plan().arena_size);
    for (size_t i = 0; i < m.layers().size(); ++i) {
        const PreparedLayer& l = m.layers()[i];
        std::printf("  [%2zu] %-12s %-16s %9.3f ms %12llu macs\n", i,
                    layer_kind_name(l.kind), l.name.c_str(), stats.layer_ms[i],
                    static_cast<unsigned long long>(stats.layer_macs[i]));
    }
    return 0;
}

int cmd_search(const std::string& config_path, const std::string& out_dir,
               const std::optional<uint64_t>& seed_flag,
               const std::optional<size_t>& storage_flag,
               const std::optional<size_t>& memory_flag) {
    SearchConfig cfg = load_search_config(config_path);
    if (seed_flag) cfg.seed = *seed_flag;
    if (storage_flag) cfg.space.budget.storage_limit = *storage_flag;
    if (memory_flag) cfg.space.budget.memory_limit = *memory_flag;

    std::filesystem::create_directories(out_dir);
    std::ofstream log_file(out_dir + "/search.log.jsonl");
    if (!log_file) throw Error("cannot write " + out_dir + "/search.log.jsonl");
    const SearchLog log = [&](const std::string& line) {
        log_file << line << "\n";
    };

    const SpaceAnalysis a =
        analyze_search_space(cfg.space, cfg.screen_iterations, cfg.seed);
    std::printf("space screen: %zu samples, %zu evaluable, %zu acceptable, "
                "p = %.4f\n",
                a.n_samples, a.n_evaluable, a.n_acceptable, a.probability);
    nlohmann::json arec = {{"event", "space_analysis"},
                           {"samples", a.n_samples},
                           {"evaluable", a.n_evaluable},
                           {"acceptable", a.n_acceptable},
                           {"probability", a.probability}};
    log(arec.dump());
    if (!accept_search_space(a.probability)) {
        std::cerr << "error: search space rejected, acceptance probability "
                  << a.probability << " is not above 0.9\n";
        return 3;
    }

    const auto evaluator = make_evaluator(cfg);
    const SupernetResult sr =
        search_supernet(cfg.space, *evaluator, cfg.t_supernets, cfg.t_paths,
                        cfg.t_configs, cfg.seed + 1, log);
    std::printf("supernet stage: mean accuracy %.4f over %zu samples\n",
                sr.mean_score, sr.evaluated);

    const SinglePathResult best =
        search_single_path(sr.supernet, cfg.space, *evaluator,
                           cfg.path_iterations, cfg.seed + 2, log);

    save_model(best.model, out_dir + "/model.json");
    {
        nlohmann::json sc = {{"sparsity", best.cfg.sparsity},
                             {"block_size", best.cfg.block_size}};
        std::ofstream f(out_dir + "/sparse_config.json");
        if (!f) throw Error("cannot write " + out_dir + "/sparse_config.json");
        f << sc.dump(2) << "\n";
    }

    std::printf("winner: accuracy %.4f, sparsity %.2f, block %d\n", best.score,
                best.cfg.sparsity, best.cfg.block_size);
    std::printf("storage %zu B, memory %zu B, effective params %zu, fits %s\n",
                best.report.storage_bytes, best.report.peak_memory_bytes,
                best.report.effective_params,
                best.report.fits ? "yes" : "no");
    std::printf("artifacts: %s/model.json, %s/sparse_config.json, "
                "%s/search.log.jsonl\n",
                out_dir.c_str(), out_dir.c_str(), out_dir.c_str());
    return 0;
}

int bench_softmax(int rows, int cols, uint64_t seed) {
    const QuantParams q{0.25f, 0};
    const TensorI8 in = random_activation({rows, cols}, q, seed);

    SoftmaxLUT lut(q.scale);
    const uint64_t e0 = kernel_counters().exp_evals;
    const auto t0 = std::chrono::steady_clock::now();
    const TensorI8 out_lut = softmax_rows(in, lut);
    const auto t1 = std::chrono::steady_clock::now();
    const uint64_t lut_evals = kernel_counters().exp_evals - e0;

    const uint64_t e1 = kernel_counters().exp_evals;
    const auto t2 = std::chrono::steady_clock::now();
    const TensorI8 out_exact = softmax_rows_exact(in);
    const auto t3 = std::chrono::steady_clock::now();
    const uint64_t exact_evals = kernel_counters().exp_evals - e1;

    const auto ms = [](auto a, auto b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };
    std::printf("softmax %dx%d\n", rows, cols);
    std::printf("  with table:    %8llu exp evals  %8.3f ms\n",
                static_cast<unsigned long long>(lut_evals), ms(t0, t1));
    std::printf("  without table: %8llu exp evals  %8.3f ms\n",
                static_cast<unsigned long long>(exact_evals), ms(t2, t3));
    std::printf("  table footprint: %zu bytes\n", lut.footprint_bytes());
    std::printf("  outputs identical: %s\n",
                out_lut.data == out_exact.data ? "yes" : "no");
    return 0;
}

int cmd_bench(const std::string& package_path, const std::string& baseline,
              int reps, uint64_t seed) {
    const PreparedModel m = load_package(package_path);
    const TensorI8 input = random_activation(m.input_shape(), m.input_q(), seed);

    const auto run_many = [&](const PreparedModel& model,
                              std::vector<std::vector<double>>& per_layer,
                              ExecutionStats& first) {
        per_layer.assign(model.layers().size(), {});
        TensorI8 out({0}, {});
        for (int r = 0; r < reps; ++r) {
            ExecutionStats s;
            out = model.run(input, &s);
            if (r == 0) first = s;
            for (size_t i = 0; i < s.layer_ms.size(); ++i) {
                per_layer[i].push_back(s.layer_ms[i]);
            }
        }
        return out;
    };

    std::vector<std::vector<double>> layer_times;
    ExecutionStats first;
    const TensorI8 out = run_many(m, layer_times, first);

    std::printf("%s: %d repetition%s\n", package_path.c_str(), reps,
                reps == 1 ? "" : "s");
    double total = 0.0;
    for (size_t i = 0; i < m.layers().size(); ++i) {
        const PreparedLayer& l = m.layers()[i];
        const double med = median(layer_times[i]);
        total += med;
        std::printf("  [%2zu] %-12s %-16s %9.3f ms %12llu macs\n", i,
                    layer_kind_name(l.kind), l.name.c_str(), med,
                    static_cast<unsigned long long>(first.layer_macs[i]));
    }
    std::printf("total (sum of medians): %.3f ms, %llu macs\n", total,
                static_cast<unsigned long long>(first.total_macs));

    if (!baseline.empty()) {
        const PreparedModel b = load_package(baseline);
        if (b.input_shape() != m.input_shape()) {
            throw ShapeMismatch("baseline package expects a different input");
        }
        std::vector<std::vector<double>> base_times;
        ExecutionStats base_first;
        const TensorI8 base_out = run_many(b, base_times, base_first);
        double base_total = 0.0;
        for (const auto& v : base_times) base_total += median(v);
        std::printf("baseline total: %.3f ms, %llu macs\n", base_total,
                    static_cast<unsigned long long>(base_first.total_macs));
        std::printf("speedup: %.2fx  mac ratio: %.2fx\n", base_total / total,
                    first.total_macs
                        ? static_cast<double>(base_first.total_macs) /
                              static_cast<double>(first.total_macs)
                        : 0.0);
        std::printf("outputs identical: %s\n",
                    out.data == base_out.data ? "yes" : "no");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"INT8 sparse model toolkit: encode, run, benchmark and "
                 "search under flash/RAM budgets"};
    app.require_subcommand(1);

    ResourceBudget budget;
    uint64_t seed = 1;

    // encode
    auto* enc = app.add_subcommand(
        "encode", "Prune, pack and write a deployable package");
    std::string enc_model, enc_out = "model.tfpk", enc_store = "auto";
    double enc_sparsity = 0.0;
    int enc_block = 4;
    enc->add_option("--model", enc_model, "model description (.json)")
        ->required();
    enc->add_option("--out", enc_out, "package path to write");
    auto* sp_opt = enc->add_option("--sparsity", enc_sparsity,
                                   "uniform target sparsity in [0,1)");
    enc->add_option("--block", enc_block, "pruning block size")
        ->check(CLI::PositiveNumber);
    enc->add_option("--store", enc_store,
                    "weight storage: auto picks the smaller form per tensor")
        ->check(CLI::IsMember({"auto", "dense"}));
    enc->add_option("--budget-storage", budget.storage_limit,
                    "flash budget in bytes");
    enc->add_option("--budget-memory", budget.memory_limit,
                    "RAM budget in bytes");
    bool override_budget = false;
    enc->add_flag("--override-budget", override_budget,
                  "write the package even over budget");

    // infer
    auto* inf = app.add_subcommand("infer", "Run a package on a tensor file");
    std::string inf_pkg, inf_in, inf_out = "output.i8";
    inf->add_option("--package", inf_pkg, "package file (.tfpk)")->required();
    inf->add_option("--input", inf_in, "input tensor file")->required();
    inf->add_option("--output", inf_out, "output tensor file");

    // search
    auto* sea = app.add_subcommand(
        "search", "Screen the space, pick a supernet, pick a model");
    std::string sea_cfg, sea_dir = "search_out";
    std::optional<uint64_t> sea_seed;
    std::optional<size_t> sea_storage, sea_memory;
    sea->add_option("--config", sea_cfg, "search configuration (.json)")
        ->required();
    sea->add_option("--out-dir", sea_dir, "artifact directory");
    sea->add_option("--seed", sea_seed, "override the config seed");
    sea->add_option("--budget-storage", sea_storage,
                    "override the flash budget in bytes");
    sea->add_option("--budget-memory", sea_memory,
                    "override the RAM budget in bytes");

    // bench
    auto* ben = app.add_subcommand("bench", "Time a package layer by layer");
    std::string ben_pkg, ben_base;
    int ben_reps = 11;
    bool ben_softmax = false;
    int ben_rows = 256, ben_cols = 256;
    ben->add_option("--package", ben_pkg, "package file (.tfpk)");
    ben->add_option("--baseline", ben_base,
                    "second package to compare against");
    ben->add_option("--reps", ben_reps, "repetitions per measurement")
        ->check(CLI::PositiveNumber);
    ben->add_flag("--softmax", ben_softmax,
                  "benchmark the softmax table instead of a package");
    ben->add_option("--rows", ben_rows, "softmax benchmark rows")
        ->check(CLI::PositiveNumber);
    ben->add_option("--cols", ben_cols, "softmax benchmark columns")
        ->check(CLI::PositiveNumber);

    app.add_option("--seed", seed, "random seed for generated inputs");

    CLI11_PARSE(app, argc, argv);

    if (enc->parsed()) {
        return guarded([&] {
            return cmd_encode(enc_model, enc_out, enc_sparsity, enc_block,
                              sp_opt->count() > 0, enc_store, budget,
                              override_budget);
        });
    }
    if (inf->parsed()) {
        return guarded([&] { return cmd_infer(inf_pkg, inf_in, inf_out); });
    }
    if (sea->parsed()) {
        return guarded([&] {
            return cmd_search(sea_cfg, sea_dir, sea_seed, sea_storage,
                              sea_memory);
        });
    }
    if (ben->parsed()) {
        return guarded([&] {
            if (ben_softmax) return bench_softmax(ben_rows, ben_cols, seed);
            if (ben_pkg.empty()) {
                std::cerr << "error: bench needs --package or --softmax\n";
                return 2;
            }
            return cmd_bench(ben_pkg, ben_base, ben_reps, seed);
        });
    }
    return 0;
}
