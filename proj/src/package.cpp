#include "tinyforge/package.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tinyforge/errors.hpp"

namespace tinyforge {

namespace {

constexpr uint16_t kVersion = 1;
constexpr uint16_t kFlagLittleEndian = 1;
constexpr uint16_t kLayerFlagHasIn1 = 1;

enum Role : uint16_t {
    kWeight = 0,
    kBias = 1,
    kGamma = 2,
    kBeta = 3,
    kLn1Gamma = 10,
    kLn1Beta = 11,
    kWq = 12,
    kWqBias = 13,
    kWk = 14,
    kWkBias = 15,
    kWv = 16,
    kWvBias = 17,
    kWo = 18,
    kWoBias = 19,
    kLn2Gamma = 20,
    kLn2Beta = 21,
    kFc1 = 22,
    kFc1Bias = 23,
    kFc2 = 24,
    kFc2Bias = 25,
    kPoolWeight = 30,
    kPoolBias = 31,
    kScoresQ = 40,
    kCtxQ = 41,
    kRes1Q = 42,
};

struct Writer {
    std::vector<uint8_t> out;

    void u8(uint8_t v) { out.push_back(v); }
    void u16(uint16_t v) {
        out.push_back(static_cast<uint8_t>(v));
        out.push_back(static_cast<uint8_t>(v >> 8));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            out.push_back(static_cast<uint8_t>(v >> (8 * i)));
        }
    }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
};

struct Reader {
    std::span<const uint8_t> b;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > b.size()) throw CorruptStream("truncated package");
    }
    uint8_t u8() {
        need(1);
        return b[pos++];
    }
    uint16_t u16() {
        need(2);
        const uint16_t v = static_cast<uint16_t>(b[pos]) |
                           static_cast<uint16_t>(b[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::span<const uint8_t> bytes(size_t n) {
        need(n);
        auto s = b.subspan(pos, n);
        pos += n;
        return s;
    }
};

struct BlobMeta {
    uint16_t role = 0;
    uint16_t format = 0;
    uint32_t block_size = 0;
    uint32_t original_len = 0;
    uint32_t n_records = 0;
    uint32_t trailer_len = 0;
    uint32_t offset = 0;
    uint32_t length = 0;
    QuantParams q;
};

void write_blob_entry(Writer& w, const BlobMeta& m) {
    w.u16(m.role);
    w.u16(m.format);
    w.u32(m.block_size);
    w.u32(m.original_len);
    w.u32(m.n_records);
    w.u32(m.trailer_len);
    w.u32(m.offset);
    w.u32(m.length);
    w.f32(m.q.scale);
    w.i32(m.q.zero_point);
}

BlobMeta read_blob_entry(Reader& r) {
    BlobMeta m;
    m.role = r.u16();
    m.format = r.u16();
    m.block_size = r.u32();
    m.original_len = r.u32();
    m.n_records = r.u32();
    m.trailer_len = r.u32();
    m.offset = r.u32();
    m.length = r.u32();
    m.q.scale = r.f32();
    m.q.zero_point = r.i32();
    return m;
}

/// Collects blob directory entries while payload bytes accumulate in the
/// section; entry offsets are relative to the section start.
struct BlobBuilder {
    std::vector<BlobMeta> dir;
    std::vector<uint8_t> section;

    void stored(uint16_t role, const StoredWeights& sw, QuantParams wq) {
        BlobMeta m;
        m.role = role;
        m.q = wq;
        m.offset = static_cast<uint32_t>(section.size());
        if (sw.format == StoredWeights::Format::Dense) {
            m.format = 0;
            m.original_len = static_cast<uint32_t>(sw.dense.size());
            m.length = m.original_len;
            const auto* p = reinterpret_cast<const uint8_t*>(sw.dense.data());
            section.insert(section.end(), p, p + sw.dense.size());
        } else {
            const EncodedWeights& e = sw.sparse;
            m.format = 1;
            m.block_size = static_cast<uint32_t>(e.block_size);
            m.original_len = static_cast<uint32_t>(e.original_len);
            m.n_records = static_cast<uint32_t>(e.n_records);
            m.trailer_len = static_cast<uint32_t>(e.trailer.size());
            m.length = static_cast<uint32_t>(e.stream.size() + e.trailer.size());
            section.insert(section.end(), e.stream.begin(), e.stream.end());
            const auto* t = reinterpret_cast<const uint8_t*>(e.trailer.data());
            section.insert(section.end(), t, t + e.trailer.size());
        }
        dir.push_back(m);
    }

    void words(uint16_t role, const std::vector<int32_t>& v, QuantParams carried) {
        BlobMeta m;
        m.role = role;
        m.q = carried;
        m.offset = static_cast<uint32_t>(section.size());
        m.original_len = static_cast<uint32_t>(v.size());
        m.length = static_cast<uint32_t>(v.size() * 4);
        Writer w;
        for (int32_t x : v) w.i32(x);
        section.insert(section.end(), w.out.begin(), w.out.end());
        dir.push_back(m);
    }

    void halves(uint16_t role, const std::vector<int16_t>& v, QuantParams carried) {
        BlobMeta m;
        m.role = role;
        m.q = carried;
        m.offset = static_cast<uint32_t>(section.size());
        m.original_len = static_cast<uint32_t>(v.size());
        m.length = static_cast<uint32_t>(v.size() * 2);
        Writer w;
        for (int16_t x : v) w.u16(static_cast<uint16_t>(x));
        section.insert(section.end(), w.out.begin(), w.out.end());
        dir.push_back(m);
    }

    void carrier(uint16_t role, QuantParams q) {
        BlobMeta m;
        m.role = role;
        m.q = q;
        m.offset = static_cast<uint32_t>(section.size());
        dir.push_back(m);
    }

    void linear(uint16_t wrole, uint16_t brole, const PreparedLinear& l) {
        stored(wrole, l.w, l.w_q);
        words(brole, l.bias, l.out_q);
    }

    void norm(uint16_t grole, uint16_t brole, const NormParams& n) {
        halves(grole, n.gamma_q, QuantParams{n.gamma_scale, 0});
        words(brole, n.beta_q, n.out_q);
    }
};

void slot_out(Writer& w, const BufferSlot& s) {
    w.u32(static_cast<uint32_t>(s.offset));
    w.u32(static_cast<uint32_t>(s.size));
    w.u16(s.side == Placement::Head ? 0 : 1);
    w.u16(0);
}

BufferSlot slot_in(Reader& r) {
    BufferSlot s;
    s.offset = r.u32();
    s.size = r.u32();
    s.side = r.u16() == 0 ? Placement::Head : Placement::Tail;
    r.u16();
    return s;
}

} // namespace

std::vector<uint8_t> serialize_package(const PreparedModel& m) {
    Writer w;
    w.bytes("TFPK", 4);
    w.u16(kVersion);
    w.u16(kFlagLittleEndian);
    w.u32(static_cast<uint32_t>(m.layers().size()));
    w.u32(static_cast<uint32_t>(m.plan().arena_size));
    w.u32(static_cast<uint32_t>(m.input_shape().size()));
    w.f32(m.input_q().scale);
    w.i32(m.input_q().zero_point);
    w.u32(0);
    for (int32_t d : m.input_shape()) w.i32(d);

    slot_out(w, m.plan().input);
    for (const BufferSlot& s : m.plan().outputs) slot_out(w, s);

    std::vector<uint8_t> section;
    for (const PreparedLayer& p : m.layers()) {
        BlobBuilder blobs;
        blobs.section = std::move(section);

        int32_t attrs[4] = {0, 0, 0, 0};
        switch (p.kind) {
            case LayerKind::Conv3x3:
            case LayerKind::Conv1x1:
            case LayerKind::DWConv3x3:
            case LayerKind::ConvMaxPool:
                attrs[0] = p.conv->kernel;
                attrs[1] = p.conv->stride;
                attrs[2] = p.conv->padding;
                attrs[3] = p.conv->groups;
                blobs.stored(kWeight, p.conv->w, p.conv->w_q);
                blobs.words(kBias, p.conv->bias, p.conv->out_q);
                break;
            case LayerKind::Linear:
                attrs[0] = p.linear->in_features;
                attrs[1] = p.linear->out_features;
                blobs.linear(kWeight, kBias, *p.linear);
                break;
            case LayerKind::SeqPool:
                attrs[0] = p.pool->attn.in_features;
                blobs.linear(kPoolWeight, kPoolBias, p.pool->attn);
                break;
            case LayerKind::Encoder: {
                const PreparedEncoder& e = *p.enc;
                attrs[0] = e.heads;
                attrs[1] = e.fc1.out_features;
                blobs.norm(kLn1Gamma, kLn1Beta, e.ln1);
                blobs.linear(kWq, kWqBias, e.wq);
                blobs.linear(kWk, kWkBias, e.wk);
                blobs.linear(kWv, kWvBias, e.wv);
                blobs.linear(kWo, kWoBias, e.wo);
                blobs.norm(kLn2Gamma, kLn2Beta, e.ln2);
                blobs.linear(kFc1, kFc1Bias, e.fc1);
                blobs.linear(kFc2, kFc2Bias, e.fc2);
                blobs.carrier(kScoresQ, e.scores_q);
                blobs.carrier(kCtxQ, e.ctx_q);
                blobs.carrier(kRes1Q, e.res1_q);
                break;
            }
            case LayerKind::ScaledLayerNorm:
                blobs.norm(kGamma, kBeta, *p.norm);
                break;
            default:
                break;
        }

        w.u16(static_cast<uint16_t>(p.kind));
        w.u16(p.in1 ? kLayerFlagHasIn1 : 0);
        w.i32(p.in0);
        w.i32(p.in1.value_or(0));
        for (int32_t a : attrs) w.i32(a);
        w.f32(p.out_q.scale);
        w.i32(p.out_q.zero_point);
        w.u32(static_cast<uint32_t>(p.out_shape.size()));
        for (int32_t d : p.out_shape) w.i32(d);
        w.u32(static_cast<uint32_t>(blobs.dir.size()));
        for (const BlobMeta& bm : blobs.dir) write_blob_entry(w, bm);

        section = std::move(blobs.section);
    }
    w.out.insert(w.out.end(), section.begin(), section.end());
    return w.out;
}

void emit_package(const PreparedModel& m, const std::string& path,
                  const ResourceBudget& budget, bool override_budget) {
    const std::vector<uint8_t> bytes = serialize_package(m);
    const size_t mem = m.plan().arena_size + kSoftmaxTableReserve;
    if (!override_budget) {
        if (bytes.size() > budget.storage_limit) {
            throw BudgetExceeded("package is " + std::to_string(bytes.size()) +
                                 " bytes, storage budget is " +
                                 std::to_string(budget.storage_limit));
        }
        if (mem > budget.memory_limit) {
            throw BudgetExceeded("planned memory is " + std::to_string(mem) +
                                 " bytes, memory budget is " +
                                 std::to_string(budget.memory_limit));
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("short write to '" + path + "'");
}

namespace {

struct RawLayer {
    LayerKind kind{};
    uint16_t flags = 0;
    int32_t in0 = 0;
    int32_t in1 = 0;
    int32_t attrs[4] = {0, 0, 0, 0};
    QuantParams out_q;
    std::vector<int32_t> out_shape;
    std::vector<BlobMeta> blobs;

    const BlobMeta& blob(uint16_t role) const {
        for (const BlobMeta& b : blobs) {
            if (b.role == role) return b;
        }
        throw CorruptStream("layer record is missing blob role " +
                            std::to_string(role));
    }
};

std::vector<int8_t> read_i8(std::span<const uint8_t> sec, const BlobMeta& m) {
    if (static_cast<size_t>(m.offset) + m.length > sec.size()) {
        throw CorruptStream("blob exceeds the payload section");
    }
    const auto* p = reinterpret_cast<const int8_t*>(sec.data() + m.offset);
    return {p, p + m.length};
}

std::vector<int32_t> read_words(std::span<const uint8_t> sec,
                                const BlobMeta& m) {
    if (static_cast<size_t>(m.offset) + m.length > sec.size() ||
        m.length % 4 != 0) {
        throw CorruptStream("word blob exceeds the payload section");
    }
    Reader r{sec.subspan(m.offset, m.length)};
    std::vector<int32_t> v(m.length / 4);
    for (auto& x : v) x = r.i32();
    return v;
}

std::vector<int16_t> read_halves(std::span<const uint8_t> sec,
                                 const BlobMeta& m) {
    if (static_cast<size_t>(m.offset) + m.length > sec.size() ||
        m.length % 2 != 0) {
        throw CorruptStream("half blob exceeds the payload section");
    }
    Reader r{sec.subspan(m.offset, m.length)};
    std::vector<int16_t> v(m.length / 2);
    for (auto& x : v) x = static_cast<int16_t>(r.u16());
    return v;
}

StoredWeights read_stored(std::span<const uint8_t> sec, const BlobMeta& m) {
    if (m.format == 0) {
        return StoredWeights::make_dense(read_i8(sec, m));
    }
    if (m.format != 1) throw CorruptStream("unknown weight storage format");
    if (m.block_size == 0 || m.trailer_len > m.length ||
        static_cast<uint64_t>(m.n_records) * (1 + m.block_size) !=
            m.length - m.trailer_len) {
        throw CorruptStream("inconsistent coded weight metadata");
    }
    const std::vector<int8_t> raw = read_i8(sec, m);
    EncodedWeights e;
    e.block_size = static_cast<int>(m.block_size);
    e.original_len = m.original_len;
    e.n_records = m.n_records;
    const size_t stream_len = m.length - m.trailer_len;
    e.stream.assign(reinterpret_cast<const uint8_t*>(raw.data()),
                    reinterpret_cast<const uint8_t*>(raw.data()) + stream_len);
    e.trailer.assign(raw.begin() + static_cast<ptrdiff_t>(stream_len),
                     raw.end());
    return StoredWeights::make_sparse(std::move(e));
}

PreparedLinear load_linear(std::span<const uint8_t> sec, const RawLayer& l,
                           uint16_t wrole, uint16_t brole, int32_t in_features,
                           int32_t out_features) {
    const BlobMeta& wm = l.blob(wrole);
    const BlobMeta& bm = l.blob(brole);
    PreparedLinear p;
    p.w = read_stored(sec, wm);
    p.bias = read_words(sec, bm);
    p.w_q = wm.q;
    p.out_q = bm.q;
    p.in_features = in_features;
    p.out_features = out_features;
    if (p.w.numel() != static_cast<size_t>(in_features) * out_features) {
        throw CorruptStream("linear weight blob size mismatch");
    }
    return p;
}

NormParams load_norm(std::span<const uint8_t> sec, const RawLayer& l,
                     uint16_t grole, uint16_t brole) {
    const BlobMeta& gm = l.blob(grole);
    const BlobMeta& bm = l.blob(brole);
    NormParams n;
    n.gamma_q = read_halves(sec, gm);
    n.beta_q = read_words(sec, bm);
    n.gamma_scale = gm.q.scale;
    n.out_q = bm.q;
    if (n.gamma_q.size() != n.beta_q.size()) {
        throw CorruptStream("norm parameter blobs disagree on width");
    }
    return n;
}

} // namespace

PreparedModel load_package_bytes(std::span<const uint8_t> bytes) {
    Reader r{bytes};
    const auto magic = r.bytes(4);
    if (std::memcmp(magic.data(), "TFPK", 4) != 0) {
        throw BadMagic("not a deployment package");
    }
    if (r.u16() != kVersion) throw CorruptStream("unsupported package version");
    if (!(r.u16() & kFlagLittleEndian)) {
        throw CorruptStream("package is not little-endian");
    }
    const uint32_t layer_count = r.u32();
    const uint32_t arena = r.u32();
    const uint32_t rank = r.u32();
    QuantParams input_q;
    input_q.scale = r.f32();
    input_q.zero_point = r.i32();
    r.u32();  // reserved
    if (rank > 8) throw CorruptStream("implausible input rank");
    std::vector<int32_t> input_shape(rank);
    for (auto& d : input_shape) d = r.i32();

    MemoryPlan plan;
    plan.arena_size = arena;
    plan.input = slot_in(r);
    plan.outputs.resize(layer_count);
    for (auto& s : plan.outputs) s = slot_in(r);
    plan.scratch.assign(layer_count, 0);

    std::vector<RawLayer> raw(layer_count);
    for (RawLayer& l : raw) {
        const uint16_t kind = r.u16();
        if (kind > static_cast<uint16_t>(LayerKind::ResidualAdd)) {
            throw CorruptStream("unknown layer kind " + std::to_string(kind));
        }
        l.kind = static_cast<LayerKind>(kind);
        l.flags = r.u16();
        l.in0 = r.i32();
        l.in1 = r.i32();
        for (auto& a : l.attrs) a = r.i32();
        l.out_q.scale = r.f32();
        l.out_q.zero_point = r.i32();
        const uint32_t orank = r.u32();
        if (orank > 8) throw CorruptStream("implausible layer rank");
        l.out_shape.resize(orank);
        for (auto& d : l.out_shape) d = r.i32();
        const uint32_t n_blobs = r.u32();
        if (n_blobs > 64) throw CorruptStream("implausible blob count");
        l.blobs.resize(n_blobs);
        for (auto& b : l.blobs) b = read_blob_entry(r);
    }
    const std::span<const uint8_t> sec = bytes.subspan(r.pos);

    const auto shape_of = [&](int32_t src) -> const std::vector<int32_t>& {
        if (src == kGraphInput) return input_shape;
        if (src < 0 || static_cast<uint32_t>(src) >= layer_count) {
            throw CorruptStream("layer input index out of range");
        }
        return raw[static_cast<size_t>(src)].out_shape;
    };
    const auto q_of = [&](int32_t src) {
        return src == kGraphInput ? input_q
                                  : raw[static_cast<size_t>(src)].out_q;
    };

    std::vector<PreparedLayer> layers(layer_count);
    for (uint32_t i = 0; i < layer_count; ++i) {
        const RawLayer& l = raw[i];
        PreparedLayer& p = layers[i];
        p.kind = l.kind;
        p.in0 = l.in0;
        if (l.flags & kLayerFlagHasIn1) p.in1 = l.in1;
        p.in_shape = shape_of(l.in0);
        p.out_shape = l.out_shape;
        p.in_q = q_of(l.in0);
        if (p.in1) p.in1_q = q_of(*p.in1);
        p.out_q = l.out_q;
        p.name = std::string(layer_kind_name(l.kind)) + "_" + std::to_string(i);

        switch (l.kind) {
            case LayerKind::Conv3x3:
            case LayerKind::Conv1x1:
            case LayerKind::DWConv3x3:
            case LayerKind::ConvMaxPool: {
                const BlobMeta& wm = l.blob(kWeight);
                const BlobMeta& bm = l.blob(kBias);
                PreparedConv c;
                c.w = read_stored(sec, wm);
                c.bias = read_words(sec, bm);
                c.w_q = wm.q;
                c.out_q = l.out_q;
                c.out_channels = l.out_shape.at(0);
                c.kernel = l.attrs[0];
                c.stride = l.attrs[1];
                c.padding = l.attrs[2];
                c.groups = l.attrs[3];
                if (c.kernel <= 0 || c.stride <= 0 || c.groups <= 0) {
                    throw CorruptStream("bad convolution geometry");
                }
                p.conv = std::move(c);
                break;
            }
            case LayerKind::Linear:
                p.linear = load_linear(sec, l, kWeight, kBias, l.attrs[0],
                                       l.attrs[1]);
                break;
            case LayerKind::SeqPool:
                p.pool = PreparedSeqPool{
                    load_linear(sec, l, kPoolWeight, kPoolBias, l.attrs[0], 1),
                    l.out_q};
                break;
            case LayerKind::Encoder: {
                const int32_t c = p.in_shape.size() == 3 ? p.in_shape[0]
                                                         : p.in_shape[1];
                PreparedEncoder e;
                e.ln1 = load_norm(sec, l, kLn1Gamma, kLn1Beta);
                e.wq = load_linear(sec, l, kWq, kWqBias, c, c);
                e.wk = load_linear(sec, l, kWk, kWkBias, c, c);
                e.wv = load_linear(sec, l, kWv, kWvBias, c, c);
                e.wo = load_linear(sec, l, kWo, kWoBias, c, c);
                e.ln2 = load_norm(sec, l, kLn2Gamma, kLn2Beta);
                e.fc1 = load_linear(sec, l, kFc1, kFc1Bias, c, l.attrs[1]);
                e.fc2 = load_linear(sec, l, kFc2, kFc2Bias, l.attrs[1], c);
                e.scores_q = l.blob(kScoresQ).q;
                e.ctx_q = l.blob(kCtxQ).q;
                e.res1_q = l.blob(kRes1Q).q;
                e.out_q = l.out_q;
                e.heads = l.attrs[0];
                if (e.heads <= 0 || c % e.heads != 0) {
                    throw CorruptStream("bad attention head count");
                }
                p.enc = std::move(e);
                break;
            }
            case LayerKind::ScaledLayerNorm:
                p.norm = load_norm(sec, l, kGamma, kBeta);
                break;
            default:
                break;
        }
    }
    return PreparedModel::from_parts(std::move(input_shape), input_q,
                                     std::move(plan), std::move(layers));
}

PreparedModel load_package(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return load_package_bytes(bytes);
}

} // namespace tinyforge
