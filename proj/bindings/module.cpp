#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "tinyforge/errors.hpp"
#include "tinyforge/ir.hpp"
#include "tinyforge/model_io.hpp"
#include "tinyforge/nas.hpp"
#include "tinyforge/package.hpp"
#include "tinyforge/resource.hpp"
#include "tinyforge/runtime.hpp"
#include "tinyforge/sparse_codec.hpp"

namespace py = pybind11;

namespace {

using namespace tinyforge;

std::vector<int8_t> to_i8(const py::bytes& b) {
    const std::string s = b;
    return std::vector<int8_t>(s.begin(), s.end());
}

py::bytes from_i8(const std::vector<int8_t>& v) {
    return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

py::dict report_dict(const ResourceReport& r) {
    py::dict d;
    d["storage_bytes"] = r.storage_bytes;
    d["peak_memory_bytes"] = r.peak_memory_bytes;
    d["arena_bytes"] = r.arena_bytes;
    d["effective_params"] = r.effective_params;
    d["fits"] = r.fits;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "INT8 sparse model toolkit: block coding, packaging, "
              "execution and budgeted architecture search";

    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<BudgetExceeded>(m, "BudgetExceeded",
                                           PyExc_RuntimeError);

    m.def("compression_ratio",
          [](double sparsity, int block) {
              return compression_ratio(SparseConfig{sparsity, block});
          },
          py::arg("sparsity"), py::arg("block"),
          "Analytic dense/coded size ratio for blockwise run-length coding");

    m.def("prune_blockwise",
          [](const py::bytes& data, double sparsity, int block) {
              return from_i8(prune_blockwise(to_i8(data), sparsity, block));
          },
          py::arg("data"), py::arg("sparsity"), py::arg("block"),
          "Zeroes the lowest-magnitude fraction of aligned blocks");

    m.def("blockwise_roundtrip",
          [](const py::bytes& data, int block) {
              const auto v = to_i8(data);
              SparseConfig cfg;
              cfg.block_size = block;
              return from_i8(decode_blockwise_rle(
                  encode_blockwise_rle(v, cfg)));
          },
          py::arg("data"), py::arg("block"),
          "Encodes then decodes; the result must equal the input");

    m.def("encoded_size",
          [](const py::bytes& data, int block) {
              const auto v = to_i8(data);
              SparseConfig cfg;
              cfg.block_size = block;
              return encode_blockwise_rle(v, cfg).size_bytes();
          },
          py::arg("data"), py::arg("block"),
          "Coded byte count of the stream plus its dense tail");

    m.def("sample_demo_model",
          [](const std::string& json_path, uint64_t seed) {
              const SupernetSpec sn = make_default_supernet(
                  {3, 32, 32}, 10,
                  {{16}, {16}, {24}, {32}, {32}, {48}, {}},
                  {{}, {1}, {1}, {}, {1}, {1}, {}});
              Rng rng(seed);
              ModelGraph g = sample_single_path(sn, rng);
              materialize_weights(g, rng);
              save_model(g, json_path);
              py::dict d;
              d["layers"] = g.layers.size();
              d["input_shape"] = g.input_shape;
              return d;
          },
          py::arg("json_path"), py::arg("seed") = 1,
          "Samples a small architecture, fills deterministic weights and "
          "writes it as a model file");

    m.def("encode_model",
          [](const std::string& model_path, const std::string& package_path,
             std::optional<double> sparsity, int block, bool dense_store,
             size_t storage_budget, size_t memory_budget,
             bool override_budget) {
              ModelGraph g = load_model(model_path);
              if (sparsity) assign_uniform_sparsity(g, *sparsity, block);
              if (dense_store) {
                  prune_weights(g);
                  for (LayerSpec& l : g.layers) l.sparse_cfg.reset();
              }
              const PreparedModel pm = PreparedModel::prepare(g);
              const ResourceBudget budget{storage_budget, memory_budget};
              const ResourceReport r = resource_eval(g, budget);
              emit_package(pm, package_path, budget, override_budget);
              return report_dict(r);
          },
          py::arg("model_path"), py::arg("package_path"),
          py::arg("sparsity") = std::nullopt, py::arg("block") = 4,
          py::arg("dense_store") = false,
          py::arg("storage_budget") = ResourceBudget{}.storage_limit,
          py::arg("memory_budget") = ResourceBudget{}.memory_limit,
          py::arg("override_budget") = false,
          "Prunes, packs and writes a deployable package; returns the "
          "resource report");

    m.def("resource_report",
          [](const std::string& model_path, size_t storage_budget,
             size_t memory_budget) {
              const ModelGraph g = load_model(model_path);
              return report_dict(
                  resource_eval(g, {storage_budget, memory_budget}));
          },
          py::arg("model_path"),
          py::arg("storage_budget") = ResourceBudget{}.storage_limit,
          py::arg("memory_budget") = ResourceBudget{}.memory_limit);

    py::class_<PreparedModel>(m, "Package",
                              "A loaded package ready to run")
        .def(py::init(
                 [](const std::string& path) { return load_package(path); }),
             py::arg("path"))
        .def_property_readonly("input_shape", &PreparedModel::input_shape)
        .def_property_readonly("arena_size",
                               [](const PreparedModel& p) {
                                   return p.plan().arena_size;
                               })
        .def_property_readonly("layer_count",
                               [](const PreparedModel& p) {
                                   return p.layers().size();
                               })
        .def("run",
             [](const PreparedModel& p, const py::bytes& data) {
                 TensorI8 in(p.input_shape(), p.input_q());
                 auto v = to_i8(data);
                 if (v.size() != in.data.size()) {
                     throw ShapeMismatch(
                         "input payload has " + std::to_string(v.size()) +
                         " bytes, the package expects " +
                         std::to_string(in.data.size()));
                 }
                 in.data = std::move(v);
                 ExecutionStats st;
                 const TensorI8 out = p.run(in, &st);
                 py::dict d;
                 d["shape"] = out.shape;
                 d["data"] = from_i8(out.data);
                 d["total_ms"] = st.total_ms;
                 d["total_macs"] = st.total_macs;
                 d["exp_evals"] = st.exp_evals;
                 d["arena_bytes"] = st.arena_bytes;
                 return d;
             },
             py::arg("data"));

    m.def("analyze_space",
          [](const std::string& config_path, std::optional<size_t> iterations,
             std::optional<uint64_t> seed) {
              const SearchConfig c = load_search_config(config_path);
              const SpaceAnalysis a = analyze_search_space(
                  c.space, iterations.value_or(c.screen_iterations),
                  seed.value_or(c.seed));
              py::dict d;
              d["samples"] = a.n_samples;
              d["evaluable"] = a.n_evaluable;
              d["acceptable"] = a.n_acceptable;
              d["probability"] = a.probability;
              d["accepted"] = accept_search_space(a.probability);
              return d;
          },
          py::arg("config_path"), py::arg("iterations") = std::nullopt,
          py::arg("seed") = std::nullopt);

    m.def("search",
          [](const std::string& config_path, const std::string& out_dir) {
              SearchConfig c = load_search_config(config_path);
              const SpaceAnalysis a = analyze_search_space(
                  c.space, c.screen_iterations, c.seed);
              if (!accept_search_space(a.probability)) {
                  throw NoFeasibleSample(
                      "search space rejected with acceptance probability " +
                      std::to_string(a.probability));
              }
              const auto evaluator = make_evaluator(c);
              const SupernetResult sr = search_supernet(
                  c.space, *evaluator, c.t_supernets, c.t_paths, c.t_configs,
                  c.seed + 1);
              const SinglePathResult best = search_single_path(
                  sr.supernet, c.space, *evaluator, c.path_iterations,
                  c.seed + 2);
              save_model(best.model, out_dir + "/model.json");
              py::dict d;
              d["probability"] = a.probability;
              d["supernet_mean"] = sr.mean_score;
              d["score"] = best.score;
              d["sparsity"] = best.cfg.sparsity;
              d["block_size"] = best.cfg.block_size;
              d["report"] = report_dict(best.report);
              d["model_path"] = out_dir + "/model.json";
              return d;
          },
          py::arg("config_path"), py::arg("out_dir"),
          "Runs screening, supernet search and single-path search; writes "
          "the winner next to out_dir");
}
