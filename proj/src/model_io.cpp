#include "tinyforge/model_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>

#include "json.hpp"
#include "tinyforge/errors.hpp"

namespace tinyforge {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON access that names the offending field on failure.

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw ParseError(path + ": " + what);
}

const json& member(const json& j, const char* key, const std::string& path) {
    if (!j.is_object()) fail(path, "expected an object");
    const auto it = j.find(key);
    if (it == j.end()) fail(path + "." + key, "missing");
    return *it;
}

int64_t as_int(const json& j, const std::string& path) {
    if (!j.is_number_integer()) fail(path, "expected an integer");
    return j.get<int64_t>();
}

double as_num(const json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
}

std::string as_str(const json& j, const std::string& path) {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
}

const json& as_arr(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array");
    return j;
}

std::string at(const std::string& path, size_t i) {
    return path + "[" + std::to_string(i) + "]";
}

std::vector<int32_t> int_list(const json& j, const std::string& path) {
    const json& a = as_arr(j, path);
    std::vector<int32_t> out;
    out.reserve(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        out.push_back(static_cast<int32_t>(as_int(a[i], at(path, i))));
    }
    return out;
}

int64_t opt_int(const json& j, const char* key, int64_t fallback,
                const std::string& path) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    return as_int(j[key], path + "." + key);
}

double opt_num(const json& j, const char* key, double fallback,
               const std::string& path) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    return as_num(j[key], path + "." + key);
}

json q_to_json(QuantParams q) {
    return {{"scale", q.scale}, {"zero_point", q.zero_point}};
}

QuantParams q_from_json(const json& j, const std::string& path) {
    QuantParams q;
    q.scale = static_cast<float>(as_num(member(j, "scale", path),
                                        path + ".scale"));
    q.zero_point = static_cast<int32_t>(
        as_int(member(j, "zero_point", path), path + ".zero_point"));
    return q;
}

// ---------------------------------------------------------------------------
// Sidecar payloads: int8 raw, int16/int32 little-endian.

struct BlobWriter {
    std::vector<uint8_t> bytes;

    json ref(size_t offset, size_t length) const {
        return {{"offset", offset}, {"length", length}};
    }

    json i8(std::span<const int8_t> v) {
        const size_t off = bytes.size();
        bytes.insert(bytes.end(), v.begin(), v.end());
        return ref(off, v.size());
    }

    json i16(std::span<const int16_t> v) {
        const size_t off = bytes.size();
        for (int16_t x : v) {
            const auto u = static_cast<uint16_t>(x);
            bytes.push_back(static_cast<uint8_t>(u & 0xff));
            bytes.push_back(static_cast<uint8_t>(u >> 8));
        }
        return ref(off, bytes.size() - off);
    }

    json i32(std::span<const int32_t> v) {
        const size_t off = bytes.size();
        for (int32_t x : v) {
            const auto u = static_cast<uint32_t>(x);
            for (int s = 0; s < 32; s += 8) {
                bytes.push_back(static_cast<uint8_t>(u >> s));
            }
        }
        return ref(off, bytes.size() - off);
    }
};

struct BlobReader {
    const std::vector<uint8_t>& bytes;

    size_t range(const json& j, const std::string& path,
                 size_t expect_len) const {
        const int64_t off = as_int(member(j, "offset", path),
                                   path + ".offset");
        const int64_t len = as_int(member(j, "length", path),
                                   path + ".length");
        if (off < 0 || len < 0 ||
            static_cast<uint64_t>(off) + static_cast<uint64_t>(len) >
                bytes.size()) {
            fail(path, "byte range escapes the sidecar");
        }
        if (static_cast<size_t>(len) != expect_len) {
            fail(path + ".length", "expected " + std::to_string(expect_len) +
                                       " bytes, found " + std::to_string(len));
        }
        return static_cast<size_t>(off);
    }

    std::vector<int8_t> i8(const json& j, const std::string& path,
                           size_t count) const {
        const size_t off = range(j, path, count);
        std::vector<int8_t> out(count);
        std::memcpy(out.data(), bytes.data() + off, count);
        return out;
    }

    std::vector<int16_t> i16(const json& j, const std::string& path,
                             size_t count) const {
        const size_t off = range(j, path, count * 2);
        std::vector<int16_t> out(count);
        for (size_t i = 0; i < count; ++i) {
            const auto lo = static_cast<uint16_t>(bytes[off + 2 * i]);
            const auto hi = static_cast<uint16_t>(bytes[off + 2 * i + 1]);
            out[i] = static_cast<int16_t>(
                static_cast<uint16_t>(lo | (hi << 8)));
        }
        return out;
    }

    std::vector<int32_t> i32(const json& j, const std::string& path,
                             size_t count) const {
        const size_t off = range(j, path, count * 4);
        std::vector<int32_t> out(count);
        for (size_t i = 0; i < count; ++i) {
            uint32_t u = 0;
            for (int b = 3; b >= 0; --b) {
                u = (u << 8) | bytes[off + 4 * i + b];
            }
            out[i] = static_cast<int32_t>(u);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Parameter bundles.

json tensor_to_json(const TensorI8& t, BlobWriter& w) {
    json j = w.i8(t.data);
    j["shape"] = t.shape;
    j["q"] = q_to_json(t.qparams);
    return j;
}

TensorI8 tensor_from_json(const json& j, const BlobReader& r,
                          const std::string& path) {
    TensorI8 t(int_list(member(j, "shape", path), path + ".shape"),
               q_from_json(member(j, "q", path), path + ".q"));
    t.data = r.i8(j, path, t.numel());
    return t;
}

json norm_to_json(const NormParams& n, BlobWriter& w) {
    json j;
    j["channels"] = n.gamma_q.size();
    j["gamma_scale"] = n.gamma_scale;
    j["out_q"] = q_to_json(n.out_q);
    j["gamma"] = w.i16(n.gamma_q);
    j["beta"] = w.i32(n.beta_q);
    return j;
}

NormParams norm_from_json(const json& j, const BlobReader& r,
                          const std::string& path) {
    const auto channels = static_cast<size_t>(
        as_int(member(j, "channels", path), path + ".channels"));
    NormParams n;
    n.gamma_scale = static_cast<float>(
        as_num(member(j, "gamma_scale", path), path + ".gamma_scale"));
    n.out_q = q_from_json(member(j, "out_q", path), path + ".out_q");
    n.gamma_q = r.i16(member(j, "gamma", path), path + ".gamma", channels);
    n.beta_q = r.i32(member(j, "beta", path), path + ".beta", channels);
    return n;
}

json linear_to_json(const LinearParams& p, BlobWriter& w) {
    json j;
    j["w"] = tensor_to_json(p.w, w);
    if (!p.bias.empty()) j["bias"] = w.i32(p.bias);
    j["out_q"] = q_to_json(p.out_q);
    return j;
}

LinearParams linear_from_json(const json& j, const BlobReader& r,
                              const std::string& path) {
    LinearParams p;
    p.w = tensor_from_json(member(j, "w", path), r, path + ".w");
    if (p.w.shape.size() != 2) fail(path + ".w.shape", "expected rank 2");
    if (j.contains("bias")) {
        p.bias = r.i32(j["bias"], path + ".bias",
                       static_cast<size_t>(p.w.shape[0]));
    }
    p.out_q = q_from_json(member(j, "out_q", path), path + ".out_q");
    return p;
}

json enc_to_json(const EncoderParams& e, BlobWriter& w) {
    json j;
    j["ln1"] = norm_to_json(e.ln1, w);
    j["wq"] = linear_to_json(e.wq, w);
    j["wk"] = linear_to_json(e.wk, w);
    j["wv"] = linear_to_json(e.wv, w);
    j["wo"] = linear_to_json(e.wo, w);
    j["ln2"] = norm_to_json(e.ln2, w);
    j["fc1"] = linear_to_json(e.fc1, w);
    j["fc2"] = linear_to_json(e.fc2, w);
    j["scores_q"] = q_to_json(e.scores_q);
    j["ctx_q"] = q_to_json(e.ctx_q);
    j["res1_q"] = q_to_json(e.res1_q);
    return j;
}

EncoderParams enc_from_json(const json& j, const BlobReader& r,
                            const std::string& path) {
    EncoderParams e;
    e.ln1 = norm_from_json(member(j, "ln1", path), r, path + ".ln1");
    e.wq = linear_from_json(member(j, "wq", path), r, path + ".wq");
    e.wk = linear_from_json(member(j, "wk", path), r, path + ".wk");
    e.wv = linear_from_json(member(j, "wv", path), r, path + ".wv");
    e.wo = linear_from_json(member(j, "wo", path), r, path + ".wo");
    e.ln2 = norm_from_json(member(j, "ln2", path), r, path + ".ln2");
    e.fc1 = linear_from_json(member(j, "fc1", path), r, path + ".fc1");
    e.fc2 = linear_from_json(member(j, "fc2", path), r, path + ".fc2");
    e.scores_q = q_from_json(member(j, "scores_q", path), path + ".scores_q");
    e.ctx_q = q_from_json(member(j, "ctx_q", path), path + ".ctx_q");
    e.res1_q = q_from_json(member(j, "res1_q", path), path + ".res1_q");
    return e;
}

json layer_to_json(const LayerSpec& l, BlobWriter& w) {
    json j;
    j["kind"] = layer_kind_name(l.kind);
    if (!l.name.empty()) j["name"] = l.name;
    j["in0"] = l.in0;
    if (l.in1) j["in1"] = *l.in1;
    if (l.out_channels != 0) j["out_channels"] = l.out_channels;
    if (l.stride != 1) j["stride"] = l.stride;
    if (l.heads != 0) j["heads"] = l.heads;
    if (l.hidden != 0) j["hidden"] = l.hidden;
    j["out_q"] = q_to_json(l.out_q);
    if (l.kind == LayerKind::SeqPool) j["aux_q"] = q_to_json(l.aux_q);
    if (l.sparse_cfg) {
        j["sparse_cfg"] = {{"sparsity", l.sparse_cfg->sparsity},
                           {"block_size", l.sparse_cfg->block_size}};
    }
    if (l.weight) j["weight"] = tensor_to_json(*l.weight, w);
    if (!l.bias.empty()) j["bias"] = w.i32(l.bias);
    if (l.norm) j["norm"] = norm_to_json(*l.norm, w);
    if (l.enc) j["enc"] = enc_to_json(*l.enc, w);
    if (l.origin_block >= 0) j["origin_block"] = l.origin_block;
    if (!l.origin_candidate.empty()) j["origin_candidate"] = l.origin_candidate;
    return j;
}

LayerSpec layer_from_json(const json& j, const BlobReader& r,
                          const std::string& path) {
    LayerSpec l;
    const std::string kind = as_str(member(j, "kind", path), path + ".kind");
    const auto parsed = layer_kind_from_name(kind);
    if (!parsed) fail(path + ".kind", "unknown layer kind \"" + kind + "\"");
    l.kind = *parsed;

    if (j.contains("name")) l.name = as_str(j["name"], path + ".name");
    l.in0 = static_cast<int32_t>(as_int(member(j, "in0", path),
                                        path + ".in0"));
    if (j.contains("in1")) {
        l.in1 = static_cast<int32_t>(as_int(j["in1"], path + ".in1"));
    }
    l.out_channels =
        static_cast<int32_t>(opt_int(j, "out_channels", 0, path));
    l.stride = static_cast<int32_t>(opt_int(j, "stride", 1, path));
    l.heads = static_cast<int32_t>(opt_int(j, "heads", 0, path));
    l.hidden = static_cast<int32_t>(opt_int(j, "hidden", 0, path));
    l.out_q = q_from_json(member(j, "out_q", path), path + ".out_q");
    if (j.contains("aux_q")) l.aux_q = q_from_json(j["aux_q"], path + ".aux_q");
    if (j.contains("sparse_cfg")) {
        const json& s = j["sparse_cfg"];
        const std::string sp = path + ".sparse_cfg";
        SparseConfig c;
        c.sparsity = as_num(member(s, "sparsity", sp), sp + ".sparsity");
        c.block_size = static_cast<int>(
            as_int(member(s, "block_size", sp), sp + ".block_size"));
        if (c.sparsity < 0.0 || c.sparsity >= 1.0) {
            fail(sp + ".sparsity", "must be in [0, 1)");
        }
        if (c.block_size < 1) fail(sp + ".block_size", "must be positive");
        l.sparse_cfg = c;
    }
    if (j.contains("weight")) {
        l.weight = tensor_from_json(j["weight"], r, path + ".weight");
    }
    if (j.contains("bias")) {
        const int64_t len = as_int(member(j["bias"], "length", path + ".bias"),
                                   path + ".bias.length");
        if (len % 4 != 0) fail(path + ".bias.length", "not a multiple of 4");
        l.bias = r.i32(j["bias"], path + ".bias",
                       static_cast<size_t>(len / 4));
    }
    if (j.contains("norm")) {
        l.norm = norm_from_json(j["norm"], r, path + ".norm");
    }
    if (j.contains("enc")) {
        l.enc = enc_from_json(j["enc"], r, path + ".enc");
    }
    if (j.contains("origin_block")) {
        l.origin_block = static_cast<int32_t>(
            as_int(j["origin_block"], path + ".origin_block"));
    }
    if (j.contains("origin_candidate")) {
        l.origin_candidate =
            as_str(j["origin_candidate"], path + ".origin_candidate");
    }
    return l;
}

json parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError(path + ": cannot open");
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void check_header(const json& doc, const char* format,
                  const std::string& path) {
    const std::string got = as_str(member(doc, "format", path),
                                   path + ".format");
    if (got != format) {
        fail(path + ".format",
             "expected \"" + std::string(format) + "\", found \"" + got + "\"");
    }
    const int64_t version =
        as_int(member(doc, "version", path), path + ".version");
    if (version != 1) {
        fail(path + ".version", "unsupported version " +
                                    std::to_string(version));
    }
}

std::vector<uint8_t> read_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError(path + ": cannot open");
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                                std::istreambuf_iterator<char>());
}

} // namespace

// ---------------------------------------------------------------------------
// Model files.

void save_model(const ModelGraph& graph, const std::string& json_path) {
    BlobWriter w;
    json doc;
    doc["format"] = "tinyforge-model";
    doc["version"] = 1;
    doc["input_shape"] = graph.input_shape;
    doc["input_q"] = q_to_json(graph.input_q);
    json layers = json::array();
    for (const LayerSpec& l : graph.layers) {
        layers.push_back(layer_to_json(l, w));
    }
    doc["layers"] = std::move(layers);

    std::filesystem::path bin = json_path;
    bin.replace_extension(".bin");
    doc["weights_file"] = bin.filename().string();

    std::ofstream bf(bin, std::ios::binary);
    if (!bf) throw Error("cannot write " + bin.string());
    bf.write(reinterpret_cast<const char*>(w.bytes.data()),
             static_cast<std::streamsize>(w.bytes.size()));
    if (!bf) throw Error("short write to " + bin.string());

    std::ofstream jf(json_path);
    if (!jf) throw Error("cannot write " + json_path);
    jf << doc.dump(2) << "\n";
    if (!jf) throw Error("short write to " + json_path);
}

ModelGraph load_model(const std::string& json_path) {
    const json doc = parse_file(json_path);
    const std::string root = "model";
    check_header(doc, "tinyforge-model", root);

    const std::string sidecar_name = as_str(
        member(doc, "weights_file", root), root + ".weights_file");
    std::filesystem::path sidecar =
        std::filesystem::path(json_path).parent_path() / sidecar_name;
    const std::vector<uint8_t> bytes = read_binary(sidecar.string());
    const BlobReader r{bytes};

    ModelGraph g;
    g.input_shape = int_list(member(doc, "input_shape", root),
                             root + ".input_shape");
    g.input_q = q_from_json(member(doc, "input_q", root), root + ".input_q");

    const json& layers = as_arr(member(doc, "layers", root), root + ".layers");
    g.layers.reserve(layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
        const std::string lp = at(root + ".layers", i);
        LayerSpec l = layer_from_json(layers[i], r, lp);
        if (l.in0 < kGraphInput || l.in0 >= static_cast<int32_t>(i)) {
            fail(lp + ".in0", "must reference an earlier layer or the input");
        }
        if (l.in1 && (*l.in1 < kGraphInput ||
                      *l.in1 >= static_cast<int32_t>(i))) {
            fail(lp + ".in1", "must reference an earlier layer or the input");
        }
        g.layers.push_back(std::move(l));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Tensor files.

void save_tensor(const TensorI8& tensor, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path);
    f << "i8";
    for (int32_t d : tensor.shape) f << " " << d;
    f << "\n";
    f.write(reinterpret_cast<const char*>(tensor.data.data()),
            static_cast<std::streamsize>(tensor.data.size()));
    if (!f) throw Error("short write to " + path);
}

TensorI8 load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError(path + ": cannot open");
    std::string header;
    if (!std::getline(f, header)) fail(path, "missing header line");
    std::istringstream hs(header);
    std::string tag;
    hs >> tag;
    if (tag != "i8") fail(path, "header must start with \"i8\"");
    std::vector<int32_t> shape;
    int64_t d = 0;
    while (hs >> d) {
        if (d < 0) fail(path, "negative dimension in header");
        shape.push_back(static_cast<int32_t>(d));
    }
    if (!hs.eof()) fail(path, "non-numeric dimension in header");

    TensorI8 t(shape, QuantParams{});
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size()));
    if (static_cast<size_t>(f.gcount()) != t.data.size()) {
        fail(path, "payload shorter than the header dims imply");
    }
    // A stray trailing byte means the header and payload disagree.
    char extra = 0;
    if (f.read(&extra, 1); f.gcount() != 0) {
        fail(path, "payload longer than the header dims imply");
    }
    return t;
}

// ---------------------------------------------------------------------------
// Search configs.

SearchConfig load_search_config(const std::string& path) {
    const json doc = parse_file(path);
    const std::string root = "search";
    check_header(doc, "tinyforge-search", root);

    SearchConfig c;
    c.seed = static_cast<uint64_t>(opt_int(doc, "seed", 1, root));

    if (doc.contains("budget")) {
        const json& b = doc["budget"];
        const std::string bp = root + ".budget";
        c.space.budget.storage_limit = static_cast<size_t>(opt_int(
            b, "storage_limit",
            static_cast<int64_t>(c.space.budget.storage_limit), bp));
        c.space.budget.memory_limit = static_cast<size_t>(opt_int(
            b, "memory_limit",
            static_cast<int64_t>(c.space.budget.memory_limit), bp));
    }
    if (doc.contains("lambda")) {
        const json& lam = as_arr(doc["lambda"], root + ".lambda");
        if (lam.size() != 2) fail(root + ".lambda", "expected [lo, up]");
        c.space.lambda_lo = as_num(lam[0], root + ".lambda[0]");
        c.space.lambda_up = as_num(lam[1], root + ".lambda[1]");
    }
    if (doc.contains("sparsity_options")) {
        const std::string sp = root + ".sparsity_options";
        const json& a = as_arr(doc["sparsity_options"], sp);
        c.space.sparsity_options.clear();
        for (size_t i = 0; i < a.size(); ++i) {
            const double s = as_num(a[i], at(sp, i));
            if (s < 0.0 || s >= 1.0) fail(at(sp, i), "must be in [0, 1)");
            c.space.sparsity_options.push_back(s);
        }
    }
    if (doc.contains("block_options")) {
        const std::string bp = root + ".block_options";
        c.space.block_options.clear();
        for (int32_t b : int_list(doc["block_options"], bp)) {
            if (b < 1) fail(bp, "block sizes must be positive");
            c.space.block_options.push_back(b);
        }
    }
    if (doc.contains("iterations")) {
        const json& it = doc["iterations"];
        const std::string ip = root + ".iterations";
        c.screen_iterations = static_cast<size_t>(
            opt_int(it, "screen", static_cast<int64_t>(c.screen_iterations),
                    ip));
        c.t_supernets = static_cast<size_t>(opt_int(
            it, "supernets", static_cast<int64_t>(c.t_supernets), ip));
        c.t_paths = static_cast<size_t>(
            opt_int(it, "paths", static_cast<int64_t>(c.t_paths), ip));
        c.t_configs = static_cast<size_t>(
            opt_int(it, "configs", static_cast<int64_t>(c.t_configs), ip));
        c.path_iterations = static_cast<size_t>(opt_int(
            it, "single_path", static_cast<int64_t>(c.path_iterations), ip));
    }

    const json& sn = member(doc, "supernet", root);
    const std::string snp = root + ".supernet";
    c.space.supernet.input_shape =
        int_list(member(sn, "input_shape", snp), snp + ".input_shape");
    c.space.supernet.n_classes = static_cast<int32_t>(
        as_int(member(sn, "n_classes", snp), snp + ".n_classes"));
    const json& blocks = as_arr(member(sn, "blocks", snp), snp + ".blocks");
    for (size_t i = 0; i < blocks.size(); ++i) {
        const json& b = blocks[i];
        const std::string bp = at(snp + ".blocks", i);
        ChoiceBlock cb;
        const std::string type = as_str(member(b, "type", bp), bp + ".type");
        const auto parsed = block_type_from_name(type);
        if (!parsed) fail(bp + ".type", "unknown block type \"" + type + "\"");
        cb.block_type = *parsed;
        const json& cands = as_arr(member(b, "candidates", bp),
                                   bp + ".candidates");
        for (size_t k = 0; k < cands.size(); ++k) {
            cb.candidates.push_back(
                as_str(cands[k], at(bp + ".candidates", k)));
        }
        if (b.contains("channels")) {
            cb.channel_options = int_list(b["channels"], bp + ".channels");
        }
        if (b.contains("repeats")) {
            cb.repeat_options = int_list(b["repeats"], bp + ".repeats");
        }
        c.space.supernet.choice_blocks.push_back(std::move(cb));
    }
    const auto violations = validate_supernet(c.space.supernet);
    if (!violations.empty()) {
        std::string msg = snp + ": ";
        for (size_t i = 0; i < violations.size(); ++i) {
            if (i) msg += "; ";
            msg += violations[i];
        }
        throw ParseError(msg);
    }

    if (doc.contains("evaluator")) {
        const json& ev = doc["evaluator"];
        const std::string ep = root + ".evaluator";
        c.evaluator_type = as_str(member(ev, "type", ep), ep + ".type");
        if (c.evaluator_type == "command") {
            c.evaluator_command =
                as_str(member(ev, "command", ep), ep + ".command");
        } else if (c.evaluator_type == "surrogate") {
            c.surrogate_optimum = opt_num(ev, "optimum_params", 0.0, ep);
            c.surrogate_penalty =
                opt_num(ev, "sparsity_penalty", c.surrogate_penalty, ep);
            c.surrogate_width = opt_num(ev, "width", c.surrogate_width, ep);
        } else {
            fail(ep + ".type", "expected \"surrogate\" or \"command\"");
        }
    }
    return c;
}

std::unique_ptr<AccuracyEvaluator> make_evaluator(const SearchConfig& cfg) {
    if (cfg.evaluator_type == "command") {
        return std::make_unique<CommandEvaluator>(cfg.evaluator_command);
    }
    double optimum = cfg.surrogate_optimum;
    if (optimum <= 0.0) {
        optimum = 0.5 * (cfg.space.lambda_lo + cfg.space.lambda_up) *
                  static_cast<double>(cfg.space.budget.memory_limit);
    }
    return std::make_unique<SurrogateEvaluator>(
        optimum, cfg.surrogate_penalty, cfg.surrogate_width);
}

} // namespace tinyforge
