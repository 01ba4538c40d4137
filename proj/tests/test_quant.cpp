#include "doctest.h"

#include "olab/model.hpp"
#include "olab/quant.hpp"
#include "olab/quant_eval.hpp"

#include <cmath>
#include <vector>

using namespace olab;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.depth = 2;
    c.width = 16;
    c.heads = 2;
    c.vocab = 11;
    c.context = 8;
    c.embed_scale = 1.0;
    c.block = BlockKind::PreNorm;
    c.norm = NormKind::LayerNorm;
    c.entropy = EntropyReg::None;
    return c;
}

std::vector<std::vector<int>> ramp_batch(int rows, int t, int vocab, int offset) {
    std::vector<std::vector<int>> out(rows, std::vector<int>(t));
    for (int r = 0; r < rows; ++r)
        for (int i = 0; i < t; ++i) out[r][i] = (offset + r * 7 + i * 3) % vocab;
    return out;
}

} // namespace

TEST_CASE("weight quantizer fitting") {
    Tensor w = Tensor::vector({-2, 0.5, 1});
    QuantizerSpec s = fit_weight_quantizer(w, 8);
    CHECK(s.scale == doctest::Approx(2.0 / 127).epsilon(1e-15));
    CHECK(s.zero_point == 0);
    CHECK(s.q_min == -127);
    CHECK(s.q_max == 127);

    Tensor z(4);
    QuantizerSpec zs = fit_weight_quantizer(z, 8);
    CHECK(zs.scale == 1e-12);
    Tensor rt = fake_quant(z, zs);
    for (std::size_t i = 0; i < 4; ++i) CHECK(rt(i) == 0.0);

    Tensor pm = Tensor::vector({-1, 1, 1, -1});
    QuantizerSpec ps = fit_weight_quantizer(pm, 8);
    Tensor back = fake_quant(pm, ps);
    for (std::size_t i = 0; i < 4; ++i) CHECK(back(i) == pm(i));
}

TEST_CASE("activation quantizer fitting") {
    ActivationRange r;
    r.observe(Tensor::vector({-1, 0, 2}));
    r.observe(Tensor::vector({3, 1}));
    CHECK(r.lo == -1.0);
    CHECK(r.hi == 3.0);

    QuantizerSpec s = fit_activation_quantizer(r, 8);
    CHECK(s.scale == doctest::Approx(4.0 / 255).epsilon(1e-15));
    CHECK(s.zero_point == 64);
    CHECK(s.q_min == 0);
    CHECK(s.q_max == 255);
    CHECK(fake_quant(0.0, s) == 0.0);

    // grid case: integers exactly representable with min 0, max 255*s
    ActivationRange g;
    g.observe(Tensor::vector({0.0, 255.0}));
    QuantizerSpec gs = fit_activation_quantizer(g, 8);
    CHECK(gs.scale == doctest::Approx(1.0).epsilon(1e-15));
    for (double v : {0.0, 1.0, 17.0, 255.0}) CHECK(fake_quant(v, gs) == v);

    // constant activation dequantizes to itself; all-zero range hits the floor
    ActivationRange c;
    c.observe(Tensor::vector({0.75, 0.75}));
    QuantizerSpec cs = fit_activation_quantizer(c, 8);
    CHECK(fake_quant(0.75, cs) == doctest::Approx(0.75).epsilon(1e-12));
    ActivationRange zr;
    zr.observe(Tensor::vector({0.0, 0.0}));
    CHECK(fit_activation_quantizer(zr, 8).scale == 1e-12);
}

TEST_CASE("fake_quant grid, clamping, half-even rounding") {
    QuantizerSpec s;
    s.mode = QuantMode::SymmetricWeight;
    s.scale = 2.0 / 127;
    s.zero_point = 0;
    s.q_min = -127;
    s.q_max = 127;

    // representable grid values round-trip exactly
    for (int q : {-127, -64, 0, 1, 126, 127}) {
        const double v = q * s.scale;
        CHECK(fake_quant(v, s) == v);
    }
    // out of range clamps to the endpoint
    CHECK(fake_quant(100.0, s) == doctest::Approx(127 * s.scale).epsilon(1e-15));
    CHECK(fake_quant(-100.0, s) == doctest::Approx(-127 * s.scale).epsilon(1e-15));
    // x = 1.0 -> q = round(63.5) = 64 under half-even
    CHECK(fake_quant(1.0, s) == doctest::Approx(64 * s.scale).epsilon(1e-15));
    CHECK(64 * s.scale == doctest::Approx(1.00787).epsilon(1e-5));
    // half-even rounds 62.5 down to 62
    CHECK(fake_quant(62.5 * s.scale, s) == doctest::Approx(62 * s.scale).epsilon(1e-15));
}

TEST_CASE("fake_quant idempotence and half-scale error bound") {
    QuantizerSpec s;
    s.scale = 0.013;
    s.q_min = -127;
    s.q_max = 127;
    for (int i = 0; i <= 1000; ++i) {
        const double x = -1.6 + 3.2 * i / 1000.0;
        const double once = fake_quant(x, s);
        CHECK(fake_quant(once, s) == once);
        if (x >= s.q_min * s.scale && x <= s.q_max * s.scale) {
            CHECK(std::fabs(once - x) <= s.scale / 2 + 1e-15);
        }
    }
}

TEST_CASE("quantized_eval on a fresh model") {
    ModelConfig c = tiny_config();
    Rng rng(61);
    Model m(c, rng);
    auto calib_in = ramp_batch(4, 8, c.vocab, 0);
    auto calib_tg = ramp_batch(4, 8, c.vocab, 1);
    auto eval_in = ramp_batch(4, 8, c.vocab, 2);
    auto eval_tg = ramp_batch(4, 8, c.vocab, 3);

    QuantReport near = quantized_eval(m, calib_in, calib_tg, eval_in, eval_tg, 31);
    CHECK(std::fabs(near.quantization_error) <= 1e-4);

    QuantReport r8 = quantized_eval(m, calib_in, calib_tg, eval_in, eval_tg, 8);
    CHECK(r8.loss_fp == doctest::Approx(near.loss_fp).epsilon(1e-12));
    CHECK(r8.mean_kurtosis >= 1.0);
    CHECK(!r8.weight_specs.empty());
    CHECK(r8.weight_specs.size() == r8.activation_specs.size());

    // monotone in bits on this fixed seed
    QuantReport r4 = quantized_eval(m, calib_in, calib_tg, eval_in, eval_tg, 4);
    QuantReport r16 = quantized_eval(m, calib_in, calib_tg, eval_in, eval_tg, 16);
    CHECK(r4.quantization_error >= r8.quantization_error - 1e-12);
    CHECK(r8.quantization_error >= r16.quantization_error - 1e-12);

    // unembedding and embeddings stay unquantized
    for (const auto &[path, spec] : r8.weight_specs) {
        CHECK(path.find("unembed") == std::string::npos);
        CHECK(path.find("embed.") == std::string::npos);
    }
}

TEST_CASE("all-zero weights make quantization lossless") {
    ModelConfig c = tiny_config();
    Rng rng(62);
    Model m(c, rng);
    for (const auto &path : quantizable_paths(m)) m.params().param(path).zero();
    auto in = ramp_batch(2, 8, c.vocab, 0);
    auto tg = ramp_batch(2, 8, c.vocab, 1);
    QuantReport r = quantized_eval(m, in, tg, in, tg, 8);
    CHECK(r.loss_w8a8 == doctest::Approx(r.loss_fp).epsilon(1e-12));
}

TEST_CASE("missing quantizer is reported with the tensor path") {
    ModelConfig c = tiny_config();
    Rng rng(63);
    Model m(c, rng);
    std::map<std::string, QuantizerSpec> weights, acts;
    QuantContext ctx;
    ctx.weights = &weights;
    ctx.activations = &acts;
    auto in = ramp_batch(1, 4, c.vocab, 0);
    CHECK_THROWS_WITH_AS(m.loss(in, in, nullptr, &ctx), doctest::Contains("block.0.attn.wq"),
                         std::runtime_error);
}

TEST_CASE("quant report serializes") {
    ModelConfig c = tiny_config();
    Rng rng(64);
    Model m(c, rng);
    auto in = ramp_batch(2, 8, c.vocab, 0);
    auto tg = ramp_batch(2, 8, c.vocab, 1);
    QuantReport r = quantized_eval(m, in, tg, in, tg, 8);
    nlohmann::json j = r.to_json();
    CHECK(j.contains("loss_fp"));
    CHECK(j.contains("loss_w8a8"));
    CHECK(j.contains("quantization_error"));
    CHECK(j.contains("mean_kurtosis"));
    CHECK(j["tensors"].is_array());

    CHECK_THROWS(fit_weight_quantizer(Tensor::vector({1.0}), 1));
    CHECK_THROWS(fit_weight_quantizer(Tensor::vector({1.0}), 32));
}
