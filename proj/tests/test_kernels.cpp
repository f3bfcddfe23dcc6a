#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "doctest.h"
#include "support/oracles.hpp"
#include "support/testutil.hpp"
#include "tinyforge/errors.hpp"
#include "tinyforge/kernels.hpp"
#include "tinyforge/rng.hpp"
#include "tinyforge/tensor.hpp"

using namespace tinyforge;

namespace {

struct ConvCase {
    TensorI8 in;
    std::vector<int8_t> flat;
    PreparedConv dense, sparse;
};

ConvCase make_conv_case(Rng& rng, int32_t oc, int32_t ic, int32_t h, int32_t w,
                        int32_t k, int32_t stride, int32_t pad, int32_t groups,
                        double rho, int b) {
    ConvCase c;
    c.in = TensorI8({ic, h, w},
                    QuantParams{0.05f, static_cast<int32_t>(rng.range(-40, 40))});
    for (auto& v : c.in.data) v = static_cast<int8_t>(rng.range(-128, 127));

    const size_t n = static_cast<size_t>(oc) * (ic / groups) * k * k;
    c.flat = testutil::random_block_pruned(rng, n, b, rho);

    PreparedConv base;
    base.bias.resize(static_cast<size_t>(oc));
    for (auto& bv : base.bias) bv = static_cast<int32_t>(rng.range(-500, 500));
    base.w_q = {0.02f, 0};
    base.out_q = {0.07f, static_cast<int32_t>(rng.range(-20, 20))};
    base.out_channels = oc;
    base.kernel = k;
    base.stride = stride;
    base.padding = pad;
    base.groups = groups;

    c.dense = base;
    c.dense.w = StoredWeights::make_dense(c.flat);
    c.sparse = base;
    c.sparse.w =
        StoredWeights::make_sparse(encode_blockwise_rle(c.flat, {rho, b}));
    return c;
}

LinearParams random_linear(Rng& rng, int32_t in_f, int32_t out_f, double rho,
                           int b, QuantParams out_q) {
    LinearParams p;
    p.w = TensorI8({out_f, in_f}, QuantParams{0.01f, 0});
    p.w.data = testutil::random_block_pruned(rng, p.w.data.size(), b, rho);
    p.bias.resize(static_cast<size_t>(out_f));
    for (auto& v : p.bias) v = static_cast<int32_t>(rng.range(-200, 200));
    p.out_q = out_q;
    return p;
}

size_t count_nonzero(const std::vector<int8_t>& v) {
    return static_cast<size_t>(
        std::count_if(v.begin(), v.end(), [](int8_t x) { return x != 0; }));
}

int32_t sat_i32(int64_t v) {
    return static_cast<int32_t>(std::clamp<int64_t>(
        v, std::numeric_limits<int32_t>::min(),
        std::numeric_limits<int32_t>::max()));
}

// Composes the attention block from independently verified pieces; the
// per-head score and mixing loops are re-derived here rather than shared.
TensorI8 ref_encoder(const TensorI8& in, const EncoderParams& p, int32_t heads,
                     QuantParams out_q) {
    const int32_t tokens = in.shape[0], channels = in.shape[1];
    const int32_t dh = channels / heads;
    const auto dense = [](const LinearParams& lp) {
        return prepare_linear(lp, std::nullopt);
    };

    const TensorI8 h1 = scaled_layernorm(in, p.ln1);
    const TensorI8 q = linear_int8(h1, dense(p.wq));
    const TensorI8 k = linear_int8(h1, dense(p.wk));
    const TensorI8 v = linear_int8(h1, dense(p.wv));

    const FixedMultiplier ms = FixedMultiplier::from_double(
        static_cast<double>(p.wq.out_q.scale) * p.wk.out_q.scale /
        (std::sqrt(static_cast<double>(dh)) * p.scores_q.scale));
    const FixedMultiplier mc = FixedMultiplier::from_double(
        static_cast<double>(p.wv.out_q.scale) / 256.0 / p.ctx_q.scale);
    const int32_t zq = p.wq.out_q.zero_point, zk = p.wk.out_q.zero_point;
    const int32_t zv = p.wv.out_q.zero_point;

    TensorI8 ctx({tokens, channels}, p.ctx_q);
    std::vector<int8_t> srow(static_cast<size_t>(tokens));
    std::vector<int8_t> prow(static_cast<size_t>(tokens));
    for (int32_t h = 0; h < heads; ++h) {
        const int32_t base = h * dh;
        for (int32_t i = 0; i < tokens; ++i) {
            for (int32_t j = 0; j < tokens; ++j) {
                int32_t acc = 0;
                for (int32_t d = 0; d < dh; ++d) {
                    acc += (q.data[static_cast<size_t>(i) * channels + base + d] -
                            zq) *
                           (k.data[static_cast<size_t>(j) * channels + base + d] -
                            zk);
                }
                srow[static_cast<size_t>(j)] =
                    requantize(acc, ms, p.scores_q.zero_point);
            }
            softmax_row_exact(srow, prow, p.scores_q.scale);
            for (int32_t d = 0; d < dh; ++d) {
                int64_t acc = 0;
                for (int32_t j = 0; j < tokens; ++j) {
                    acc += static_cast<int64_t>(prow[static_cast<size_t>(j)] +
                                                128) *
                           (v.data[static_cast<size_t>(j) * channels + base + d] -
                            zv);
                }
                ctx.data[static_cast<size_t>(i) * channels + base + d] =
                    requantize(sat_i32(acc), mc, p.ctx_q.zero_point);
            }
        }
    }

    const TensorI8 attn = linear_int8(ctx, dense(p.wo));
    const TensorI8 r1 = residual_add(attn, in, p.res1_q);
    const TensorI8 h2 = scaled_layernorm(r1, p.ln2);
    const TensorI8 f1 = relu_int8(linear_int8(h2, dense(p.fc1)));
    const TensorI8 f2 = linear_int8(f1, dense(p.fc2));
    return residual_add(f2, r1, out_q);
}

} // namespace

TEST_SUITE("kernels") {

TEST_CASE("packed dual-lane mac equals scalar arithmetic") {
    const int8_t corners[] = {-128, -127, -1, 0, 1, 126, 127};
    for (int8_t w0 : corners) {
        for (int8_t w1 : corners) {
            for (int8_t x0 : corners) {
                for (int8_t x1 : corners) {
                    const int32_t want = 7 + w0 * x0 + w1 * x1;
                    CHECK(paired_mac(7, w0, w1, x0, x1) == want);
                }
            }
        }
    }
    Rng rng(21);
    for (int i = 0; i < 2000; ++i) {
        const auto w0 = static_cast<int8_t>(rng.range(-128, 127));
        const auto w1 = static_cast<int8_t>(rng.range(-128, 127));
        const auto x0 = static_cast<int8_t>(rng.range(-128, 127));
        const auto x1 = static_cast<int8_t>(rng.range(-128, 127));
        const auto acc = static_cast<int32_t>(rng.range(-100000, 100000));
        CHECK(paired_mac(acc, w0, w1, x0, x1) ==
              acc + w0 * x0 + w1 * x1);
    }
}

TEST_CASE("integer square root floors exactly") {
    for (int64_t v = 0; v <= 2000; ++v) {
        CHECK(isqrt_i64(v) ==
              static_cast<int64_t>(std::floor(std::sqrt(static_cast<double>(v)))));
    }
    for (int64_t k : {int64_t{1} << 20, int64_t{1000000007},
                      int64_t{3037000498}}) {
        CHECK(isqrt_i64(k * k) == k);
        CHECK(isqrt_i64(k * k - 1) == k - 1);
        CHECK(isqrt_i64(k * k + 1) == k);
    }
}

TEST_CASE("conv matches the plain int64 reference, dense and coded") {
    Rng rng(0xC07F);
    const std::vector<double> rhos{0.0, 0.5, 0.75, 0.9};
    const std::vector<int> blocks{2, 3, 4};
    for (int iter = 0; iter < 120; ++iter) {
        const auto ic = static_cast<int32_t>(1 + rng.index(5));
        const auto oc = static_cast<int32_t>(1 + rng.index(6));
        const auto h = static_cast<int32_t>(3 + rng.index(6));
        const auto w = static_cast<int32_t>(3 + rng.index(6));
        const bool pointwise = rng.index(4) == 0;
        const int32_t k = pointwise ? 1 : 3;
        const int32_t pad = pointwise ? 0 : 1;
        const int32_t stride = (!pointwise && rng.index(2) == 0) ? 2 : 1;
        const double rho = rng.pick(rhos);
        const int b = rng.pick(blocks);
        CAPTURE(ic);
        CAPTURE(oc);
        CAPTURE(k);
        CAPTURE(stride);
        CAPTURE(rho);
        CAPTURE(b);

        const auto c = make_conv_case(rng, oc, ic, h, w, k, stride, pad, 1,
                                      rho, b);
        const auto want =
            testutil::ref_conv(c.in, c.flat, c.dense.bias, c.dense.w_q,
                               c.dense.out_q, oc, k, stride, pad, 1);
        const auto got_dense = conv2d_int8(c.in, c.dense);
        const auto got_sparse = conv2d_int8(c.in, c.sparse);
        CHECK(got_dense.shape == want.shape);
        CHECK(got_dense.data == want.data);
        CHECK(got_sparse.data == want.data);
    }
}

TEST_CASE("depthwise conv matches the reference with 3-wide rows") {
    Rng rng(0xD3C0);
    for (int iter = 0; iter < 60; ++iter) {
        const auto ch = static_cast<int32_t>(1 + rng.index(8));
        const auto h = static_cast<int32_t>(3 + rng.index(6));
        const auto w = static_cast<int32_t>(3 + rng.index(6));
        const int32_t stride = rng.index(2) == 0 ? 2 : 1;
        const double rho = rng.index(2) == 0 ? 0.0 : 0.5;
        CAPTURE(ch);
        CAPTURE(stride);
        CAPTURE(rho);

        const auto c =
            make_conv_case(rng, ch, ch, h, w, 3, stride, 1, ch, rho, 3);
        const auto want =
            testutil::ref_conv(c.in, c.flat, c.dense.bias, c.dense.w_q,
                               c.dense.out_q, ch, 3, stride, 1, ch);
        CHECK(dwconv2d_int8(c.in, c.dense).data == want.data);
        CHECK(dwconv2d_int8(c.in, c.sparse).data == want.data);
    }
}

TEST_CASE("conv rejects inconsistent geometry") {
    Rng rng(3);
    auto c = make_conv_case(rng, 4, 4, 5, 5, 3, 1, 1, 1, 0.0, 4);
    c.dense.out_channels = 5;  // weight count no longer matches
    CHECK_THROWS_AS(conv2d_int8(c.in, c.dense), ShapeMismatch);

    auto dw = make_conv_case(rng, 4, 4, 5, 5, 3, 1, 1, 4, 0.0, 4);
    dw.dense.groups = 2;
    CHECK_THROWS_AS(dwconv2d_int8(c.in, dw.dense), ShapeMismatch);
}

TEST_CASE("linear matches the plain int64 reference, dense and coded") {
    Rng rng(0x11EA);
    const std::vector<double> rhos{0.0, 0.5, 0.75, 0.9};
    const std::vector<int> blocks{2, 3, 4};
    for (int iter = 0; iter < 100; ++iter) {
        const auto rows = static_cast<int32_t>(1 + rng.index(5));
        const auto in_f = static_cast<int32_t>(1 + rng.index(40));
        const auto out_f = static_cast<int32_t>(1 + rng.index(12));
        const double rho = rng.pick(rhos);
        const int b = rng.pick(blocks);
        CAPTURE(rows);
        CAPTURE(in_f);
        CAPTURE(out_f);
        CAPTURE(rho);
        CAPTURE(b);

        TensorI8 x({rows, in_f},
                   QuantParams{0.04f, static_cast<int32_t>(rng.range(-30, 30))});
        for (auto& v : x.data) v = static_cast<int8_t>(rng.range(-128, 127));

        const LinearParams p = random_linear(
            rng, in_f, out_f, rho, b,
            QuantParams{0.06f, static_cast<int32_t>(rng.range(-20, 20))});
        const auto want =
            testutil::ref_linear(x.data, x.qparams, rows, p.w.data, in_f,
                                 out_f, p.bias, p.w.qparams, p.out_q);

        const auto got_dense = linear_int8(x, prepare_linear(p, std::nullopt));
        PreparedLinear forced = prepare_linear(p, std::nullopt);
        forced.w = StoredWeights::make_sparse(
            encode_blockwise_rle(p.w.data, {rho, b}));
        const auto got_sparse = linear_int8(x, forced);

        CHECK(got_dense.data == want);
        CHECK(got_sparse.data == want);
        CHECK(got_dense.shape == std::vector<int32_t>{rows, out_f});
    }
}

TEST_CASE("linear accepts flat input and rejects a width mismatch") {
    Rng rng(8);
    const LinearParams p = random_linear(rng, 12, 3, 0.0, 4, {0.1f, 0});
    TensorI8 x({12}, {0.04f, 0});
    for (auto& v : x.data) v = static_cast<int8_t>(rng.range(-128, 127));
    const auto out = linear_int8(x, prepare_linear(p, std::nullopt));
    CHECK(out.shape == std::vector<int32_t>{3});
    CHECK(out.data ==
          testutil::ref_linear(x.data, x.qparams, 1, p.w.data, 12, 3, p.bias,
                               p.w.qparams, p.out_q));

    TensorI8 bad({11}, {0.04f, 0});
    CHECK_THROWS_AS(linear_int8(bad, prepare_linear(p, std::nullopt)),
                    ShapeMismatch);
}

TEST_CASE("mac counters: dense counts every tap, coded only nonzero weights") {
    Rng rng(0xACC0);
    const auto c = make_conv_case(rng, 8, 4, 8, 8, 3, 1, 1, 1, 0.75, 4);
    const auto plane = static_cast<uint64_t>(8) * 8;

    reset_kernel_counters();
    conv2d_int8(c.in, c.dense);
    CHECK(kernel_counters().macs == uint64_t{8} * 4 * 9 * plane);

    reset_kernel_counters();
    conv2d_int8(c.in, c.sparse);
    CHECK(kernel_counters().macs == count_nonzero(c.flat) * plane);

    const LinearParams p = random_linear(rng, 32, 6, 0.5, 4, {0.1f, 0});
    TensorI8 x({3, 32}, {0.04f, 0});
    for (auto& v : x.data) v = static_cast<int8_t>(rng.range(-128, 127));

    reset_kernel_counters();
    linear_int8(x, prepare_linear(p, std::nullopt));
    CHECK(kernel_counters().macs == uint64_t{3} * 6 * 32);

    PreparedLinear forced = prepare_linear(p, std::nullopt);
    forced.w =
        StoredWeights::make_sparse(encode_blockwise_rle(p.w.data, {0.5, 4}));
    reset_kernel_counters();
    linear_int8(x, forced);
    CHECK(kernel_counters().macs == count_nonzero(p.w.data) * 3);
}

TEST_CASE("relu clamps from below at the zero point") {
    TensorI8 t({2, 3}, {0.1f, -5});
    t.data = {-128, -6, -5, -4, 0, 127};
    const auto out = relu_int8(t);
    CHECK(out.data == std::vector<int8_t>{-5, -5, -5, -4, 0, 127});
    CHECK(out.qparams == t.qparams);
}

TEST_CASE("max pool takes the window maximum per channel") {
    TensorI8 t({2, 2, 4}, {0.1f, 0});
    t.data = {1, 5, -3, -1, 2, 0, -8, -2,     // channel 0
              9, 9, 9, 9, 9, 9, 9, 9};        // channel 1
    const auto out = maxpool2x2(t);
    CHECK(out.shape == std::vector<int32_t>{2, 1, 2});
    CHECK(out.data == std::vector<int8_t>{5, -1, 9, 9});
    TensorI8 odd({1, 3, 4}, {0.1f, 0});
    CHECK_THROWS_AS(maxpool2x2(odd), ShapeMismatch);
}

TEST_CASE("average pool requantizes the window sum") {
    Rng rng(44);
    const QuantParams in_q{0.08f, 7};
    const QuantParams out_q{0.05f, -3};
    TensorI8 t({3, 4, 6}, in_q);
    for (auto& v : t.data) v = static_cast<int8_t>(rng.range(-128, 127));
    const auto out = avgpool2x2(t, out_q);

    const FixedMultiplier m = FixedMultiplier::from_double(
        static_cast<double>(in_q.scale) / (4.0 * out_q.scale));
    for (int32_t ch = 0; ch < 3; ++ch) {
        for (int32_t y = 0; y < 2; ++y) {
            for (int32_t x = 0; x < 3; ++x) {
                int32_t acc = 0;
                for (int32_t dy = 0; dy < 2; ++dy) {
                    for (int32_t dx = 0; dx < 2; ++dx) {
                        acc += t.data[(static_cast<size_t>(ch) * 4 +
                                       2 * y + dy) * 6 + 2 * x + dx] -
                               in_q.zero_point;
                    }
                }
                CHECK(out.data[(static_cast<size_t>(ch) * 2 + y) * 3 + x] ==
                      requantize(acc, m, out_q.zero_point));
            }
        }
    }
}

TEST_CASE("residual add rescales both arms then clamps") {
    Rng rng(45);
    const QuantParams a_q{0.1f, 3}, b_q{0.25f, -2}, out_q{0.2f, 1};
    TensorI8 a({40}, a_q), b({40}, b_q);
    for (auto& v : a.data) v = static_cast<int8_t>(rng.range(-128, 127));
    for (auto& v : b.data) v = static_cast<int8_t>(rng.range(-128, 127));
    const auto out = residual_add(a, b, out_q);

    const auto ma = FixedMultiplier::from_double(
        static_cast<double>(a_q.scale) / out_q.scale);
    const auto mb = FixedMultiplier::from_double(
        static_cast<double>(b_q.scale) / out_q.scale);
    for (size_t i = 0; i < a.data.size(); ++i) {
        const int64_t sum = static_cast<int64_t>(ma.apply(a.data[i] - 3)) +
                            mb.apply(b.data[i] + 2) + 1;
        CHECK(out.data[i] ==
              static_cast<int8_t>(std::clamp<int64_t>(sum, -128, 127)));
    }

    TensorI8 c({39}, b_q);
    CHECK_THROWS_AS(residual_add(a, c, out_q), ShapeMismatch);
}

TEST_CASE("layer norm stays within two steps of the float pipeline") {
    Rng rng(0x11A0);
    const int32_t channels = 44, rows = 6;
    TensorI8 t({rows, channels}, {0.06f, 4});
    for (auto& v : t.data) v = static_cast<int8_t>(rng.range(-60, 60));
    // A spike row stresses the upper normalized range; a flat row the
    // zero-variance guard.
    for (int32_t i = 0; i < channels; ++i) {
        t.data[static_cast<size_t>(channels) + i] = (i == 7) ? 90 : 2;
        t.data[static_cast<size_t>(2) * channels + i] = 11;
    }

    std::vector<float> gamma(channels), beta(channels);
    for (auto& gv : gamma) gv = 0.5f + 1.0f * static_cast<float>(rng.real01());
    for (auto& bv : beta) bv = static_cast<float>(rng.real01()) - 0.5f;
    const QuantParams out_q{1.0f / 16.0f, 0};
    const NormParams np = make_norm_params(gamma, beta, out_q);

    const auto got = scaled_layernorm(t, np);
    const auto want = testutil::ref_layernorm_float(t, gamma, beta, out_q);
    const auto coarse = testutil::ref_layernorm_unscaled16(t, gamma, beta, out_q);

    int32_t max_err = 0, max_coarse = 0;
    for (size_t i = 0; i < want.size(); ++i) {
        max_err = std::max(max_err, std::abs(got.data[i] - want[i]));
        max_coarse = std::max(max_coarse, std::abs(coarse[i] - want[i]));
    }
    CHECK(max_err <= 2);
    CHECK(max_err < max_coarse);  // the 2^7 gain buys real precision
}

TEST_CASE("layer norm ignores the input grid") {
    // Same codes under different scales and zero points normalize alike.
    Rng rng(0x11A1);
    TensorI8 a({4, 16}, {0.3f, 9});
    for (auto& v : a.data) v = static_cast<int8_t>(rng.range(-100, 100));
    TensorI8 b = a;
    b.qparams = {0.001f, -77};

    const std::vector<float> gamma(16, 1.0f), beta(16, 0.0f);
    const NormParams np = make_norm_params(gamma, beta, {0.05f, 2});
    CHECK(scaled_layernorm(a, np).data == scaled_layernorm(b, np).data);
}

TEST_CASE("layer norm rejects a parameter width mismatch") {
    const std::vector<float> gamma(8, 1.0f), beta(8, 0.0f);
    const NormParams np = make_norm_params(gamma, beta, {0.05f, 0});
    TensorI8 t({2, 9}, {0.1f, 0});
    CHECK_THROWS_AS(scaled_layernorm(t, np), ShapeMismatch);
}

TEST_CASE("softmax by table equals the table-free twin byte for byte") {
    Rng rng(0x50F7);
    for (float scale : {1.0f / 256.0f, 0.05f, 0.25f, 1.0f}) {
        SoftmaxLUT lut(scale);
        for (int iter = 0; iter < 30; ++iter) {
            const auto rows = static_cast<int32_t>(1 + rng.index(6));
            const auto ch = static_cast<int32_t>(1 + rng.index(40));
            TensorI8 t({rows, ch}, {scale, 0});
            for (auto& v : t.data) v = static_cast<int8_t>(rng.range(-128, 127));
            const auto by_table = softmax_rows(t, lut);
            const auto direct = softmax_rows_exact(t);
            CHECK(by_table.data == direct.data);
            CHECK(by_table.qparams == kSoftmaxOutQ);
        }
    }
}

TEST_CASE("softmax table memoizes every distance once") {
    SoftmaxLUT lut(0.0625f);
    TensorI8 t({4, 64}, {0.0625f, 0});
    Rng rng(11);
    for (auto& v : t.data) v = static_cast<int8_t>(rng.range(-128, 127));

    reset_kernel_counters();
    softmax_rows(t, lut);
    const uint64_t first = kernel_counters().exp_evals;
    CHECK(first == static_cast<uint64_t>(lut.computed_entries()));
    CHECK(first <= 257);

    reset_kernel_counters();
    softmax_rows(t, lut);  // same table: every distance already cached
    CHECK(kernel_counters().exp_evals == 0);

    reset_kernel_counters();
    softmax_rows_exact(t);  // the twin pays one evaluation per element
    CHECK(kernel_counters().exp_evals == t.data.size());
}

TEST_CASE("softmax table footprint is small and bounded") {
    SoftmaxLUT lut(0.1f);
    CHECK(lut.footprint_bytes() == 257 * 4 + 33);
    CHECK(lut.footprint_bytes() <= 1228);
}

TEST_CASE("softmax rows sum near one and peak at the maximum") {
    TensorI8 t({1, 5}, {0.25f, 0});
    t.data = {20, -40, 7, 20, -128};
    const auto out = softmax_rows_exact(t);
    int64_t mass = 0;
    for (int8_t q : out.data) mass += q + 128;
    CHECK(mass >= 254);  // rounding may drop a count or two
    CHECK(mass <= 258);
    CHECK(out.data[0] == out.data[3]);       // equal logits, equal mass
    CHECK(out.data[0] > out.data[2]);
    CHECK(out.data[4] == -128);              // vanishing tail
}

TEST_CASE("token transpose round-trips") {
    Rng rng(0x7013);
    TensorI8 t({3, 4, 5}, {0.1f, 2});
    for (auto& v : t.data) v = static_cast<int8_t>(rng.range(-128, 127));
    const TensorI8 tok = chw_to_tokens(t);
    CHECK(tok.shape == std::vector<int32_t>{20, 3});
    const TensorI8 back = tokens_to_chw(tok, 4, 5);
    CHECK(back.shape == t.shape);
    CHECK(back.data == t.data);
}

TEST_CASE("sequence pool mixes tokens by attention weight") {
    Rng rng(0x5E09);
    const int32_t tokens = 10, channels = 6;
    TensorI8 t({tokens, channels}, {0.05f, 3});
    for (auto& v : t.data) v = static_cast<int8_t>(rng.range(-128, 127));

    const LinearParams attn =
        random_linear(rng, channels, 1, 0.0, 4, {0.11f, 0});
    PreparedSeqPool pool{prepare_linear(attn, std::nullopt), {0.07f, -1}};
    const auto got = seqpool(t, pool);
    REQUIRE(got.shape == std::vector<int32_t>{channels});

    const auto logits =
        testutil::ref_linear(t.data, t.qparams, tokens, attn.w.data, channels,
                             1, attn.bias, attn.w.qparams, attn.out_q);
    std::vector<int8_t> probs(static_cast<size_t>(tokens));
    softmax_row_exact(logits, probs, attn.out_q.scale);
    const FixedMultiplier m = FixedMultiplier::from_double(
        static_cast<double>(t.qparams.scale) / 256.0 / pool.out_q.scale);
    for (int32_t ch = 0; ch < channels; ++ch) {
        int64_t acc = 0;
        for (int32_t tk = 0; tk < tokens; ++tk) {
            acc += static_cast<int64_t>(probs[static_cast<size_t>(tk)] + 128) *
                   (t.data[static_cast<size_t>(tk) * channels + ch] - 3);
        }
        CHECK(got.data[static_cast<size_t>(ch)] ==
              requantize(sat_i32(acc), m, pool.out_q.zero_point));
    }

    // Rank-3 input goes through the token view first.
    const TensorI8 chw = tokens_to_chw(t, 2, 5);
    CHECK(seqpool(chw, pool).data == got.data);
}

TEST_CASE("encoder matches a composition of verified pieces") {
    Rng rng(0xE2C0);
    for (int iter = 0; iter < 10; ++iter) {
        const auto heads = static_cast<int32_t>(1 + rng.index(2));
        const int32_t dh = static_cast<int32_t>(2 + rng.index(2));
        const int32_t channels = heads * dh;
        const auto tokens = static_cast<int32_t>(2 + rng.index(6));
        const auto hidden = static_cast<int32_t>(channels * 2);
        const double rho = rng.index(2) == 0 ? 0.0 : 0.5;
        CAPTURE(heads);
        CAPTURE(channels);
        CAPTURE(tokens);
        CAPTURE(rho);

        const QuantParams act{1.0f / 16.0f, 0};
        std::vector<float> gamma(static_cast<size_t>(channels));
        std::vector<float> beta(static_cast<size_t>(channels));
        for (auto& g : gamma) g = 0.5f + static_cast<float>(rng.real01());
        for (auto& b : beta) b = static_cast<float>(rng.real01()) - 0.5f;

        EncoderParams p;
        p.ln1 = make_norm_params(gamma, beta, act);
        p.wq = random_linear(rng, channels, channels, rho, 4, act);
        p.wk = random_linear(rng, channels, channels, rho, 4, act);
        p.wv = random_linear(rng, channels, channels, rho, 4, act);
        p.wo = random_linear(rng, channels, channels, rho, 4, act);
        p.ln2 = make_norm_params(gamma, beta, act);
        p.fc1 = random_linear(rng, channels, hidden, rho, 4, act);
        p.fc2 = random_linear(rng, hidden, channels, rho, 4, act);
        p.scores_q = {0.25f, 0};
        p.ctx_q = act;
        p.res1_q = act;

        TensorI8 x({tokens, channels}, {1.0f / 16.0f, 2});
        for (auto& v : x.data) v = static_cast<int8_t>(rng.range(-128, 127));

        const QuantParams out_q{1.0f / 16.0f, 0};
        const TensorI8 want = ref_encoder(x, p, heads, out_q);

        const auto dense = prepare_encoder(p, heads, out_q, std::nullopt);
        CHECK(encoder_forward(x, dense).data == want.data);

        const auto coded =
            prepare_encoder(p, heads, out_q, SparseConfig{rho, 4});
        CHECK(encoder_forward(x, coded).data == want.data);
    }
}

TEST_CASE("encoder rejects a head count that does not divide channels") {
    Rng rng(2);
    const QuantParams act{1.0f / 16.0f, 0};
    const std::vector<float> ones(6, 1.0f), zeros(6, 0.0f);
    EncoderParams p;
    p.ln1 = make_norm_params(ones, zeros, act);
    p.wq = random_linear(rng, 6, 6, 0.0, 4, act);
    p.wk = random_linear(rng, 6, 6, 0.0, 4, act);
    p.wv = random_linear(rng, 6, 6, 0.0, 4, act);
    p.wo = random_linear(rng, 6, 6, 0.0, 4, act);
    p.ln2 = make_norm_params(ones, zeros, act);
    p.fc1 = random_linear(rng, 6, 12, 0.0, 4, act);
    p.fc2 = random_linear(rng, 12, 6, 0.0, 4, act);
    p.scores_q = {0.25f, 0};
    p.ctx_q = act;
    p.res1_q = act;

    TensorI8 x({3, 6}, act);
    const auto prepared = prepare_encoder(p, 4, act, std::nullopt);
    CHECK_THROWS_AS(encoder_forward(x, prepared), ShapeMismatch);
}

} // TEST_SUITE
