#include "tinyforge/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "tinyforge/errors.hpp"

namespace tinyforge {

namespace {

KernelCounters g_counters;

int64_t round_div_away(int64_t num, int64_t den) {
    // den > 0; rounds half away from zero
    if (num >= 0) return (num + den / 2) / den;
    return -((-num + den / 2) / den);
}

int8_t clamp_i8(int64_t v) {
    return static_cast<int8_t>(std::clamp<int64_t>(v, -128, 127));
}

int32_t clamp_i32(int64_t v) {
    return static_cast<int32_t>(std::clamp<int64_t>(
        v, std::numeric_limits<int32_t>::min(),
        std::numeric_limits<int32_t>::max()));
}

} // namespace

KernelCounters& kernel_counters() { return g_counters; }
void reset_kernel_counters() { g_counters = {}; }

int32_t paired_mac(int32_t acc, int8_t w0, int8_t w1, int8_t x0, int8_t x1) {
    const uint32_t wp = static_cast<uint16_t>(static_cast<int16_t>(w0)) |
                        (static_cast<uint32_t>(
                             static_cast<uint16_t>(static_cast<int16_t>(w1)))
                         << 16);
    const uint32_t xp = static_cast<uint16_t>(static_cast<int16_t>(x0)) |
                        (static_cast<uint32_t>(
                             static_cast<uint16_t>(static_cast<int16_t>(x1)))
                         << 16);
    const int32_t lo = static_cast<int16_t>(wp & 0xffffu) *
                       static_cast<int16_t>(xp & 0xffffu);
    const int32_t hi = static_cast<int16_t>(wp >> 16) *
                       static_cast<int16_t>(xp >> 16);
    return acc + lo + hi;
}

int64_t isqrt_i64(int64_t v) {
    if (v < 0) throw Error("isqrt of a negative value");
    int64_t lo = 0;
    int64_t hi = std::min<int64_t>(v, 3037000499LL);
    while (lo < hi) {
        const int64_t mid = lo + (hi - lo + 1) / 2;
        if (mid * mid <= v) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    return lo;
}

PreparedLinear prepare_linear(const LinearParams& p,
                              const std::optional<SparseConfig>& cfg) {
    if (p.w.shape.size() != 2) {
        throw ShapeMismatch("linear weights must be rank-2 [out, in]");
    }
    PreparedLinear out;
    out.bias = p.bias;
    out.w_q = p.w.qparams;
    out.out_q = p.out_q;
    out.out_features = p.w.shape[0];
    out.in_features = p.w.shape[1];
    out.w = cfg ? choose_storage_format(p.w.data, *cfg)
                : StoredWeights::make_dense(p.w.data);
    return out;
}

PreparedEncoder prepare_encoder(const EncoderParams& p, int32_t heads,
                                QuantParams out_q,
                                const std::optional<SparseConfig>& cfg) {
    PreparedEncoder e;
    e.ln1 = p.ln1;
    e.ln2 = p.ln2;
    e.wq = prepare_linear(p.wq, cfg);
    e.wk = prepare_linear(p.wk, cfg);
    e.wv = prepare_linear(p.wv, cfg);
    e.wo = prepare_linear(p.wo, cfg);
    e.fc1 = prepare_linear(p.fc1, cfg);
    e.fc2 = prepare_linear(p.fc2, cfg);
    e.scores_q = p.scores_q;
    e.ctx_q = p.ctx_q;
    e.res1_q = p.res1_q;
    e.out_q = out_q;
    e.heads = heads;
    return e;
}

// ---------------------------------------------------------------------------
// Softmax.

static_assert((SoftmaxLUT::kMaxIndex + 1) * sizeof(uint32_t) +
                      (SoftmaxLUT::kMaxIndex + 1 + 7) / 8 <=
                  1228,
              "softmax table and bitmap must stay within the footprint cap");

SoftmaxLUT::SoftmaxLUT(float in_scale) : in_scale_(in_scale) {
    if (!(in_scale > 0.0f)) throw Error("softmax input scale must be positive");
}

uint32_t SoftmaxLUT::exp_q31(int index) {
    if (index < 0 || index > kMaxIndex) {
        throw Error("softmax exponent index out of range");
    }
    const uint8_t mask = static_cast<uint8_t>(1u << (index & 7));
    if (!(bitmap_[index >> 3] & mask)) {
        const double e = std::exp(-static_cast<double>(index) * in_scale_);
        table_[index] = static_cast<uint32_t>(std::llround(e * 2147483648.0));
        bitmap_[index >> 3] |= mask;
        ++g_counters.exp_evals;
    }
    return table_[index];
}

int SoftmaxLUT::computed_entries() const {
    int n = 0;
    for (uint8_t b : bitmap_) n += std::popcount(static_cast<unsigned>(b));
    return n;
}

size_t SoftmaxLUT::footprint_bytes() const {
    return sizeof(table_) + sizeof(bitmap_);
}

void softmax_row_lut(std::span<const int8_t> in, std::span<int8_t> out,
                     SoftmaxLUT& lut) {
    if (in.empty() || out.size() != in.size()) {
        throw ShapeMismatch("softmax row sizes inconsistent");
    }
    const int mx = *std::max_element(in.begin(), in.end());
    uint64_t sum = 0;
    for (int8_t x : in) sum += lut.exp_q31(mx - x);
    for (size_t i = 0; i < in.size(); ++i) {
        const uint64_t t = lut.exp_q31(mx - in[i]);
        const uint64_t q = (256u * t + sum / 2) / sum;
        out[i] = clamp_i8(static_cast<int64_t>(q) - 128);
    }
}

void softmax_row_exact(std::span<const int8_t> in, std::span<int8_t> out,
                       float in_scale) {
    if (in.empty() || out.size() != in.size()) {
        throw ShapeMismatch("softmax row sizes inconsistent");
    }
    const int mx = *std::max_element(in.begin(), in.end());
    std::vector<uint32_t> t(in.size());
    uint64_t sum = 0;
    for (size_t i = 0; i < in.size(); ++i) {
        const double e =
            std::exp(-static_cast<double>(mx - in[i]) * in_scale);
        ++g_counters.exp_evals;
        t[i] = static_cast<uint32_t>(std::llround(e * 2147483648.0));
        sum += t[i];
    }
    for (size_t i = 0; i < in.size(); ++i) {
        const uint64_t q = (256u * static_cast<uint64_t>(t[i]) + sum / 2) / sum;
        out[i] = clamp_i8(static_cast<int64_t>(q) - 128);
    }
}

void softmax_core(const int8_t* in, int32_t rows, int32_t channels,
                  SoftmaxLUT& lut, int8_t* out) {
    for (int32_t r = 0; r < rows; ++r) {
        softmax_row_lut({in + static_cast<size_t>(r) * channels,
                         static_cast<size_t>(channels)},
                        {out + static_cast<size_t>(r) * channels,
                         static_cast<size_t>(channels)},
                        lut);
    }
}

// ---------------------------------------------------------------------------
// Convolution.

namespace {

/// Streamed sparse path helper: accumulate one weight value against its
/// input plane. Out-of-bounds taps read the zero point (virtual padding);
/// the flush-time weight-sum correction cancels that constant exactly.
void accumulate_weight_plane(const int8_t* plane_in, int32_t in_h, int32_t in_w,
                             const ConvGeom& g, int32_t kh, int32_t kw,
                             int8_t v, int32_t zin, int32_t* plane) {
    const int32_t oh_n = g.out_h(), ow_n = g.out_w();
    const int32_t pad = zin * v;
    int32_t* pp = plane;
    for (int32_t oh = 0; oh < oh_n; ++oh) {
        const int32_t ih = oh * g.stride + kh - g.padding;
        if (ih < 0 || ih >= in_h) {
            for (int32_t ow = 0; ow < ow_n; ++ow) pp[ow] += pad;
            pp += ow_n;
            continue;
        }
        const int8_t* row = plane_in + static_cast<size_t>(ih) * in_w;
        for (int32_t ow = 0; ow < ow_n; ++ow) {
            const int32_t iw = ow * g.stride + kw - g.padding;
            pp[ow] += (iw >= 0 && iw < in_w) ? row[iw] * v : pad;
        }
        pp += ow_n;
    }
}

} // namespace

void conv2d_core(const int8_t* in, QuantParams in_q, const ConvGeom& g,
                 const PreparedConv& w, int8_t* out) {
    const int32_t oh_n = g.out_h(), ow_n = g.out_w();
    const int32_t in_per_group = g.in_c / g.groups;
    const int32_t out_per_group = g.out_c / g.groups;
    const int32_t k = g.kernel;
    const int32_t zin = in_q.zero_point;
    const int32_t zout = w.out_q.zero_point;
    const FixedMultiplier m = FixedMultiplier::from_double(
        static_cast<double>(in_q.scale) * w.w_q.scale / w.out_q.scale);
    const size_t plane_sz = static_cast<size_t>(oh_n) * ow_n;

    if (w.w.format == StoredWeights::Format::Dense) {
        const int8_t* wd = w.w.dense.data();
        for (int32_t oc = 0; oc < g.out_c; ++oc) {
            const int32_t grp = oc / out_per_group;
            const int8_t* wf =
                wd + static_cast<size_t>(oc) * in_per_group * k * k;
            const int32_t bias_v = w.bias.empty() ? 0 : w.bias[oc];
            int8_t* op = out + static_cast<size_t>(oc) * plane_sz;
            for (int32_t oh = 0; oh < oh_n; ++oh) {
                for (int32_t ow = 0; ow < ow_n; ++ow) {
                    int32_t acc = bias_v;
                    const int8_t* wp = wf;
                    for (int32_t icg = 0; icg < in_per_group; ++icg) {
                        const int8_t* plane_in =
                            in + static_cast<size_t>(grp * in_per_group + icg) *
                                     g.in_h * g.in_w;
                        for (int32_t kh = 0; kh < k; ++kh) {
                            const int32_t ih = oh * g.stride + kh - g.padding;
                            for (int32_t kw = 0; kw < k; ++kw, ++wp) {
                                const int32_t iw =
                                    ow * g.stride + kw - g.padding;
                                const int32_t xv =
                                    (ih >= 0 && ih < g.in_h && iw >= 0 &&
                                     iw < g.in_w)
                                        ? plane_in[ih * g.in_w + iw]
                                        : zin;
                                acc += (xv - zin) * *wp;
                            }
                        }
                    }
                    op[oh * ow_n + ow] = requantize(acc, m, zout);
                }
            }
        }
        g_counters.macs += static_cast<uint64_t>(g.out_c) * plane_sz *
                           in_per_group * k * k;
        return;
    }

    // Sparse path: stream the coded records, keeping one int32 accumulator
    // plane per output filter; the input zero point is corrected at flush
    // time through the per-filter weight sum.
    const EncodedWeights& enc = w.w.sparse;
    const size_t filter_sz = static_cast<size_t>(in_per_group) * k * k;
    std::vector<int32_t> plane(plane_sz, 0);
    int32_t cur_oc = 0;
    int64_t wsum = 0;
    uint64_t mac_count = 0;

    auto flush_until = [&](int32_t next_oc) {
        for (; cur_oc < next_oc; ++cur_oc) {
            const int32_t bias_v = w.bias.empty() ? 0 : w.bias[cur_oc];
            const int64_t corr = static_cast<int64_t>(zin) * wsum;
            int8_t* op = out + static_cast<size_t>(cur_oc) * plane_sz;
            for (size_t o = 0; o < plane_sz; ++o) {
                op[o] = requantize(clamp_i32(plane[o] - corr + bias_v), m,
                                   zout);
            }
            std::fill(plane.begin(), plane.end(), 0);
            wsum = 0;
        }
    };

    auto process_element = [&](size_t flat, int8_t v) {
        if (v == 0) return;
        const auto oc = static_cast<int32_t>(flat / filter_sz);
        if (oc != cur_oc) flush_until(oc);
        const size_t rem = flat % filter_sz;
        const auto icg = static_cast<int32_t>(rem / (k * k));
        const auto kidx = static_cast<int32_t>(rem % (k * k));
        const int32_t grp = oc / out_per_group;
        const int8_t* plane_in =
            in + static_cast<size_t>(grp * in_per_group + icg) * g.in_h *
                     g.in_w;
        wsum += v;
        accumulate_weight_plane(plane_in, g.in_h, g.in_w, g, kidx / k,
                                kidx % k, v, zin, plane.data());
        mac_count += plane_sz;
    };

    size_t pos = 0;
    const uint8_t* p = enc.stream.data();
    for (size_t r = 0; r < enc.n_records; ++r) {
        pos += *p++;
        for (int j = 0; j < enc.block_size; ++j) {
            process_element(pos + j, static_cast<int8_t>(*p++));
        }
        pos += enc.block_size;
    }
    const size_t aligned =
        (enc.original_len / enc.block_size) * enc.block_size;
    for (size_t t = 0; t < enc.trailer.size(); ++t) {
        process_element(aligned + t, enc.trailer[t]);
    }
    flush_until(g.out_c);
    g_counters.macs += mac_count;
}

// ---------------------------------------------------------------------------
// Linear.

void linear_core(const int8_t* in, QuantParams in_q, int32_t rows,
                 const PreparedLinear& w, int8_t* out) {
    const int32_t in_f = w.in_features, out_f = w.out_features;
    const int32_t zin = in_q.zero_point;
    const int32_t zout = w.out_q.zero_point;
    const FixedMultiplier m = FixedMultiplier::from_double(
        static_cast<double>(in_q.scale) * w.w_q.scale / w.out_q.scale);

    if (w.w.format == StoredWeights::Format::Dense) {
        const int8_t* wd = w.w.dense.data();
        for (int32_t r = 0; r < rows; ++r) {
            const int8_t* x = in + static_cast<size_t>(r) * in_f;
            int8_t* op = out + static_cast<size_t>(r) * out_f;
            for (int32_t j = 0; j < out_f; ++j) {
                const int8_t* wr = wd + static_cast<size_t>(j) * in_f;
                int32_t acc = w.bias.empty() ? 0 : w.bias[j];
                for (int32_t i = 0; i < in_f; ++i) {
                    acc += (x[i] - zin) * wr[i];
                }
                op[j] = requantize(acc, m, zout);
            }
        }
        g_counters.macs +=
            static_cast<uint64_t>(rows) * out_f * in_f;
        return;
    }

    // Sparse path: weight-stationary over records, one accumulator per input
    // row for the current output neuron; raw products plus a zero-point
    // correction via the per-neuron weight sum. Whole blocks inside one
    // neuron row go through the packed dual-lane MAC.
    const EncodedWeights& enc = w.w.sparse;
    std::vector<int32_t> acc(rows, 0);
    int32_t cur_j = 0;
    int64_t wsum = 0;
    uint64_t mac_count = 0;

    auto flush_until = [&](int32_t next_j) {
        for (; cur_j < next_j; ++cur_j) {
            const int32_t bias_v = w.bias.empty() ? 0 : w.bias[cur_j];
            const int64_t corr = static_cast<int64_t>(zin) * wsum;
            for (int32_t r = 0; r < rows; ++r) {
                out[static_cast<size_t>(r) * out_f + cur_j] =
                    requantize(clamp_i32(acc[r] - corr + bias_v), m, zout);
            }
            std::fill(acc.begin(), acc.end(), 0);
            wsum = 0;
        }
    };

    auto scalar_element = [&](size_t flat, int8_t v) {
        if (v == 0) return;
        const auto j = static_cast<int32_t>(flat / in_f);
        if (j != cur_j) flush_until(j);
        const auto i = static_cast<int32_t>(flat % in_f);
        wsum += v;
        for (int32_t r = 0; r < rows; ++r) {
            acc[r] += in[static_cast<size_t>(r) * in_f + i] * v;
        }
        mac_count += static_cast<uint64_t>(rows);
    };

    auto paired_elements = [&](size_t flat, int8_t v0, int8_t v1) {
        const auto j = static_cast<int32_t>(flat / in_f);
        if (j != cur_j) flush_until(j);
        const auto i = static_cast<int32_t>(flat % in_f);
        wsum += v0;
        wsum += v1;
        for (int32_t r = 0; r < rows; ++r) {
            const int8_t* x = in + static_cast<size_t>(r) * in_f + i;
            acc[r] = paired_mac(acc[r], v0, v1, x[0], x[1]);
        }
        mac_count += 2ull * static_cast<uint64_t>(rows);
    };

    auto process_pair = [&](size_t flat, int8_t v0, int8_t v1) {
        const bool same_row = flat / in_f == (flat + 1) / in_f;
        if (same_row && v0 != 0 && v1 != 0) {
            paired_elements(flat, v0, v1);
        } else {
            scalar_element(flat, v0);
            scalar_element(flat + 1, v1);
        }
    };

    size_t pos = 0;
    const uint8_t* p = enc.stream.data();
    for (size_t r = 0; r < enc.n_records; ++r) {
        pos += *p++;
        int j = 0;
        for (; j + 1 < enc.block_size; j += 2) {
            process_pair(pos + j, static_cast<int8_t>(p[j]),
                         static_cast<int8_t>(p[j + 1]));
        }
        for (; j < enc.block_size; ++j) {
            scalar_element(pos + j, static_cast<int8_t>(p[j]));
        }
        p += enc.block_size;
        pos += enc.block_size;
    }
    const size_t aligned =
        (enc.original_len / enc.block_size) * enc.block_size;
    for (size_t t = 0; t < enc.trailer.size(); ++t) {
        scalar_element(aligned + t, enc.trailer[t]);
    }
    flush_until(out_f);
    g_counters.macs += mac_count;
}

// ---------------------------------------------------------------------------
// Elementwise and pooling.

void relu_core(const int8_t* in, size_t n, int32_t zero_point, int8_t* out) {
    const auto z = static_cast<int8_t>(zero_point);
    for (size_t i = 0; i < n; ++i) out[i] = std::max(in[i], z);
}

void maxpool2x2_core(const int8_t* in, int32_t c, int32_t h, int32_t w,
                     int8_t* out) {
    const int32_t oh = h / 2, ow = w / 2;
    for (int32_t ch = 0; ch < c; ++ch) {
        const int8_t* pi = in + static_cast<size_t>(ch) * h * w;
        int8_t* po = out + static_cast<size_t>(ch) * oh * ow;
        for (int32_t y = 0; y < oh; ++y) {
            for (int32_t x = 0; x < ow; ++x) {
                const int8_t* p = pi + (2 * y) * w + 2 * x;
                po[y * ow + x] = std::max(std::max(p[0], p[1]),
                                          std::max(p[w], p[w + 1]));
            }
        }
    }
}

void avgpool2x2_core(const int8_t* in, QuantParams in_q, int32_t c, int32_t h,
                     int32_t w, QuantParams out_q, int8_t* out) {
    const int32_t oh = h / 2, ow = w / 2;
    const int32_t zin = in_q.zero_point;
    const FixedMultiplier m = FixedMultiplier::from_double(
        static_cast<double>(in_q.scale) / (4.0 * out_q.scale));
    for (int32_t ch = 0; ch < c; ++ch) {
        const int8_t* pi = in + static_cast<size_t>(ch) * h * w;
        int8_t* po = out + static_cast<size_t>(ch) * oh * ow;
        for (int32_t y = 0; y < oh; ++y) {
            for (int32_t x = 0; x < ow; ++x) {
                const int8_t* p = pi + (2 * y) * w + 2 * x;
                const int32_t acc = (p[0] - zin) + (p[1] - zin) +
                                    (p[w] - zin) + (p[w + 1] - zin);
                po[y * ow + x] = requantize(acc, m, out_q.zero_point);
            }
        }
    }
}

void residual_add_core(const int8_t* a, QuantParams a_q, const int8_t* b,
                       QuantParams b_q, size_t n, QuantParams out_q,
                       int8_t* out) {
    const FixedMultiplier ma = FixedMultiplier::from_double(
        static_cast<double>(a_q.scale) / out_q.scale);
    const FixedMultiplier mb = FixedMultiplier::from_double(
        static_cast<double>(b_q.scale) / out_q.scale);
    for (size_t i = 0; i < n; ++i) {
        const int32_t ta = ma.apply(a[i] - a_q.zero_point);
        const int32_t tb = mb.apply(b[i] - b_q.zero_point);
        out[i] = clamp_i8(static_cast<int64_t>(ta) + tb + out_q.zero_point);
    }
}

void layernorm_core(const int8_t* in, QuantParams in_q, int32_t rows,
                    int32_t channels, const NormParams& p, int8_t* out) {
    (void)in_q;  // scale and zero point cancel in the normalized value
    if (static_cast<size_t>(channels) != p.gamma_q.size()) {
        throw ShapeMismatch("norm parameter width " +
                            std::to_string(p.gamma_q.size()) +
                            " does not match " + std::to_string(channels) +
                            " channels");
    }
    const int64_t c = channels;
    const FixedMultiplier m = FixedMultiplier::from_double(
        static_cast<double>(p.gamma_scale) / 128.0 / p.out_q.scale);
    for (int32_t r = 0; r < rows; ++r) {
        const int8_t* x = in + static_cast<size_t>(r) * channels;
        int8_t* o = out + static_cast<size_t>(r) * channels;
        int64_t sum = 0, sumsq = 0;
        for (int32_t i = 0; i < channels; ++i) {
            sum += x[i];
            sumsq += static_cast<int64_t>(x[i]) * x[i];
        }
        // c^2 * variance; adding 1 stands in for the epsilon guard
        const int64_t num = c * sumsq - sum * sum;
        const int64_t s = isqrt_i64(num + 1);
        for (int32_t i = 0; i < channels; ++i) {
            const int64_t scaled =
                round_div_away(128 * (c * x[i] - sum), std::max<int64_t>(s, 1));
            const auto n16 = static_cast<int32_t>(
                std::clamp<int64_t>(scaled, -32768, 32767));
            const int64_t acc =
                static_cast<int64_t>(p.gamma_q[i]) * n16 + p.beta_q[i];
            o[i] = requantize(clamp_i32(acc), m, p.out_q.zero_point);
        }
    }
}

void seqpool_core(const int8_t* in, QuantParams in_q, int32_t tokens,
                  int32_t channels, const PreparedSeqPool& w, int8_t* out) {
    std::vector<int8_t> logits(tokens), probs(tokens);
    linear_core(in, in_q, tokens, w.attn, logits.data());
    SoftmaxLUT lut(w.attn.out_q.scale);
    softmax_row_lut(logits, probs, lut);

    const FixedMultiplier m = FixedMultiplier::from_double(
        static_cast<double>(in_q.scale) / 256.0 / w.out_q.scale);
    for (int32_t ch = 0; ch < channels; ++ch) {
        int64_t acc = 0;
        for (int32_t t = 0; t < tokens; ++t) {
            acc += static_cast<int64_t>(probs[t] + 128) *
                   (in[static_cast<size_t>(t) * channels + ch] -
                    in_q.zero_point);
        }
        out[ch] = requantize(clamp_i32(acc), m, w.out_q.zero_point);
    }
    g_counters.macs += static_cast<uint64_t>(tokens) * channels;
}

void encoder_core(const int8_t* in, QuantParams in_q, int32_t tokens,
                  int32_t channels, const PreparedEncoder& w, int8_t* out) {
    const int32_t heads = w.heads;
    if (heads <= 0 || channels % heads != 0) {
        throw ShapeMismatch("head count must divide the channel dim");
    }
    const int32_t dh = channels / heads;
    const size_t tc = static_cast<size_t>(tokens) * channels;
    const int32_t hidden = w.fc1.out_features;

    std::vector<int8_t> h1(tc), q(tc), k(tc), v(tc), ctx(tc), attn(tc),
        r1(tc), h2(tc), m2(tc);
    std::vector<int8_t> m1(static_cast<size_t>(tokens) * hidden);

    layernorm_core(in, in_q, tokens, channels, w.ln1, h1.data());
    linear_core(h1.data(), w.ln1.out_q, tokens, w.wq, q.data());
    linear_core(h1.data(), w.ln1.out_q, tokens, w.wk, k.data());
    linear_core(h1.data(), w.ln1.out_q, tokens, w.wv, v.data());

    // Scores fold the 1/sqrt(d_head) factor into the requantizer.
    const FixedMultiplier ms = FixedMultiplier::from_double(
        static_cast<double>(w.wq.out_q.scale) * w.wk.out_q.scale /
        (std::sqrt(static_cast<double>(dh)) * w.scores_q.scale));
    const FixedMultiplier mc = FixedMultiplier::from_double(
        static_cast<double>(w.wv.out_q.scale) / 256.0 / w.ctx_q.scale);
    const int32_t zq = w.wq.out_q.zero_point, zk = w.wk.out_q.zero_point;
    const int32_t zv = w.wv.out_q.zero_point;

    SoftmaxLUT lut(w.scores_q.scale);
    std::vector<int8_t> srow(tokens), prow(tokens);
    for (int32_t h = 0; h < heads; ++h) {
        const int32_t base = h * dh;
        for (int32_t i = 0; i < tokens; ++i) {
            const int8_t* qi = q.data() + static_cast<size_t>(i) * channels +
                               base;
            for (int32_t j = 0; j < tokens; ++j) {
                const int8_t* kj = k.data() +
                                   static_cast<size_t>(j) * channels + base;
                int32_t acc = 0;
                for (int32_t d = 0; d < dh; ++d) {
                    acc += (qi[d] - zq) * (kj[d] - zk);
                }
                srow[j] = requantize(acc, ms, w.scores_q.zero_point);
            }
            softmax_row_lut(srow, prow, lut);
            int8_t* ci = ctx.data() + static_cast<size_t>(i) * channels + base;
            for (int32_t d = 0; d < dh; ++d) {
                int64_t acc = 0;
                for (int32_t j = 0; j < tokens; ++j) {
                    acc += static_cast<int64_t>(prow[j] + 128) *
                           (v[static_cast<size_t>(j) * channels + base + d] -
                            zv);
                }
                ci[d] = requantize(clamp_i32(acc), mc, w.ctx_q.zero_point);
            }
        }
    }
    g_counters.macs += 2ull * static_cast<uint64_t>(tokens) * tokens * channels;

    linear_core(ctx.data(), w.ctx_q, tokens, w.wo, attn.data());
    residual_add_core(attn.data(), w.wo.out_q, in, in_q, tc, w.res1_q,
                      r1.data());
    layernorm_core(r1.data(), w.res1_q, tokens, channels, w.ln2, h2.data());
    linear_core(h2.data(), w.ln2.out_q, tokens, w.fc1, m1.data());
    relu_core(m1.data(), m1.size(), w.fc1.out_q.zero_point, m1.data());
    linear_core(m1.data(), w.fc1.out_q, tokens, w.fc2, m2.data());
    residual_add_core(m2.data(), w.fc2.out_q, r1.data(), w.res1_q, tc, w.out_q,
                      out);
}

// ---------------------------------------------------------------------------
// Tensor-level wrappers.

namespace {

void require_rank3(const TensorI8& t, const char* who) {
    if (t.shape.size() != 3) {
        throw ShapeMismatch(std::string(who) + " expects a rank-3 [C,H,W] tensor");
    }
}

} // namespace

TensorI8 conv2d_int8(const TensorI8& in, const PreparedConv& w) {
    require_rank3(in, "conv");
    ConvGeom g{in.shape[0], in.shape[1], in.shape[2],
               w.out_channels,  w.kernel,    w.stride,
               w.padding,       w.groups};
    if (g.in_c % g.groups != 0 || g.out_c % g.groups != 0) {
        throw ShapeMismatch("group count must divide both channel counts");
    }
    const size_t expect = static_cast<size_t>(g.out_c) *
                          (g.in_c / g.groups) * g.kernel * g.kernel;
    if (w.w.numel() != expect) {
        throw ShapeMismatch("conv weight element count mismatch");
    }
    TensorI8 out;
    out.shape = {g.out_c, g.out_h(), g.out_w()};
    out.qparams = w.out_q;
    out.data.resize(numel_of(out.shape));
    conv2d_core(in.data.data(), in.qparams, g, w, out.data.data());
    return out;
}

TensorI8 dwconv2d_int8(const TensorI8& in, const PreparedConv& w) {
    require_rank3(in, "depthwise conv");
    if (w.groups != in.shape[0] || w.out_channels != in.shape[0]) {
        throw ShapeMismatch("depthwise conv must keep one filter per channel");
    }
    return conv2d_int8(in, w);
}

TensorI8 linear_int8(const TensorI8& in, const PreparedLinear& w) {
    TensorI8 out;
    const size_t n = in.data.size();
    if (in.shape.size() >= 2 &&
        in.shape.back() == w.in_features) {
        const size_t rows = n / static_cast<size_t>(w.in_features);
        out.shape.assign(in.shape.begin(), in.shape.end() - 1);
        out.shape.push_back(w.out_features);
        out.data.resize(rows * w.out_features);
        out.qparams = w.out_q;
        linear_core(in.data.data(), in.qparams, static_cast<int32_t>(rows), w,
                    out.data.data());
        return out;
    }
    if (n != static_cast<size_t>(w.in_features)) {
        throw ShapeMismatch("linear input has " + std::to_string(n) +
                            " elements, weights expect " +
                            std::to_string(w.in_features));
    }
    out.shape = {w.out_features};
    out.data.resize(w.out_features);
    out.qparams = w.out_q;
    linear_core(in.data.data(), in.qparams, 1, w, out.data.data());
    return out;
}

TensorI8 relu_int8(const TensorI8& in) {
    TensorI8 out = in;
    relu_core(in.data.data(), in.data.size(), in.qparams.zero_point,
              out.data.data());
    return out;
}

TensorI8 maxpool2x2(const TensorI8& in) {
    require_rank3(in, "max pool");
    if (in.shape[1] % 2 != 0 || in.shape[2] % 2 != 0) {
        throw ShapeMismatch("max pool needs even spatial dims");
    }
    TensorI8 out;
    out.shape = {in.shape[0], in.shape[1] / 2, in.shape[2] / 2};
    out.qparams = in.qparams;
    out.data.resize(numel_of(out.shape));
    maxpool2x2_core(in.data.data(), in.shape[0], in.shape[1], in.shape[2],
                    out.data.data());
    return out;
}

TensorI8 avgpool2x2(const TensorI8& in, QuantParams out_q) {
    require_rank3(in, "average pool");
    if (in.shape[1] % 2 != 0 || in.shape[2] % 2 != 0) {
        throw ShapeMismatch("average pool needs even spatial dims");
    }
    TensorI8 out;
    out.shape = {in.shape[0], in.shape[1] / 2, in.shape[2] / 2};
    out.qparams = out_q;
    out.data.resize(numel_of(out.shape));
    avgpool2x2_core(in.data.data(), in.qparams, in.shape[0], in.shape[1],
                    in.shape[2], out_q, out.data.data());
    return out;
}

TensorI8 seqpool(const TensorI8& in, const PreparedSeqPool& w) {
    const TensorI8* src = &in;
    TensorI8 tok;
    if (in.shape.size() == 3) {
        tok = chw_to_tokens(in);
        src = &tok;
    } else if (in.shape.size() != 2) {
        throw ShapeMismatch("sequence pool expects rank-2 or rank-3 input");
    }
    TensorI8 out;
    out.shape = {src->shape[1]};
    out.qparams = w.out_q;
    out.data.resize(src->shape[1]);
    seqpool_core(src->data.data(), src->qparams, src->shape[0], src->shape[1],
                 w, out.data.data());
    return out;
}

TensorI8 residual_add(const TensorI8& a, const TensorI8& b,
                      QuantParams out_q) {
    if (a.shape != b.shape) {
        throw ShapeMismatch("residual operand shapes differ");
    }
    TensorI8 out;
    out.shape = a.shape;
    out.qparams = out_q;
    out.data.resize(a.data.size());
    residual_add_core(a.data.data(), a.qparams, b.data.data(), b.qparams,
                      a.data.size(), out_q, out.data.data());
    return out;
}

TensorI8 scaled_layernorm(const TensorI8& in, const NormParams& p) {
    if (in.shape.empty()) throw ShapeMismatch("cannot normalize a scalar");
    if (in.shape.size() == 3) {
        TensorI8 tok = chw_to_tokens(in);
        TensorI8 ntok = scaled_layernorm(tok, p);
        return tokens_to_chw(ntok, in.shape[1], in.shape[2]);
    }
    const int32_t channels = in.shape.back();
    const auto rows =
        static_cast<int32_t>(in.data.size() / static_cast<size_t>(channels));
    TensorI8 out;
    out.shape = in.shape;
    out.qparams = p.out_q;
    out.data.resize(in.data.size());
    layernorm_core(in.data.data(), in.qparams, rows, channels, p,
                   out.data.data());
    return out;
}

TensorI8 softmax_rows(const TensorI8& in, SoftmaxLUT& lut) {
    if (in.shape.empty()) throw ShapeMismatch("cannot softmax a scalar");
    const int32_t channels = in.shape.back();
    const auto rows =
        static_cast<int32_t>(in.data.size() / static_cast<size_t>(channels));
    TensorI8 out;
    out.shape = in.shape;
    out.qparams = kSoftmaxOutQ;
    out.data.resize(in.data.size());
    softmax_core(in.data.data(), rows, channels, lut, out.data.data());
    return out;
}

TensorI8 softmax_rows_exact(const TensorI8& in) {
    if (in.shape.empty()) throw ShapeMismatch("cannot softmax a scalar");
    const int32_t channels = in.shape.back();
    const auto rows =
        static_cast<int32_t>(in.data.size() / static_cast<size_t>(channels));
    TensorI8 out;
    out.shape = in.shape;
    out.qparams = kSoftmaxOutQ;
    out.data.resize(in.data.size());
    for (int32_t r = 0; r < rows; ++r) {
        softmax_row_exact({in.data.data() + static_cast<size_t>(r) * channels,
                           static_cast<size_t>(channels)},
                          {out.data.data() + static_cast<size_t>(r) * channels,
                           static_cast<size_t>(channels)},
                          in.qparams.scale);
    }
    return out;
}

TensorI8 encoder_forward(const TensorI8& in, const PreparedEncoder& w) {
    if (in.shape.size() == 3) {
        TensorI8 tok = chw_to_tokens(in);
        TensorI8 enc = encoder_forward(tok, w);
        return tokens_to_chw(enc, in.shape[1], in.shape[2]);
    }
    if (in.shape.size() != 2) {
        throw ShapeMismatch("encoder expects rank-2 [tokens, channels] input");
    }
    TensorI8 out;
    out.shape = in.shape;
    out.qparams = w.out_q;
    out.data.resize(in.data.size());
    encoder_core(in.data.data(), in.qparams, in.shape[0], in.shape[1], w,
                 out.data.data());
    return out;
}

} // namespace tinyforge
