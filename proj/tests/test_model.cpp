#include "doctest.h"

#include "olab/model.hpp"
#include "olab/ops.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
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

std::vector<int> ramp_tokens(int t, int vocab) {
    std::vector<int> v(t);
    for (int i = 0; i < t; ++i) v[i] = (i * 3 + 1) % vocab;
    return v;
}

const Tensor *tap_x(const std::vector<ActivationTap> &taps, int layer, TapSite site) {
    for (const auto &t : taps) {
        if (t.layer == layer && t.site == site) return &t.x;
    }
    return nullptr;
}

} // namespace

TEST_CASE("init statistics, gains, residual scalars") {
    ModelConfig c = tiny_config();
    c.residual = ResidualScaling::TrainableScalar;
    c.residual_beta = 0.1;
    Rng rng(1);
    Model m(c, rng);

    for (const auto &path : m.params().paths()) {
        const Tensor &w = m.params().param(path);
        if (path.find("norm") != std::string::npos) continue;
        if (path.find("res.") != std::string::npos) continue;
        if (w.size() < 256) continue;
        double mean = 0;
        for (std::size_t i = 0; i < w.size(); ++i) mean += w(i);
        mean /= static_cast<double>(w.size());
        double var = 0;
        for (std::size_t i = 0; i < w.size(); ++i) var += (w(i) - mean) * (w(i) - mean);
        const double std_dev = std::sqrt(var / static_cast<double>(w.size()));
        INFO(path);
        CHECK(std_dev > 0.01);
        CHECK(std_dev < 0.03);
    }

    const Tensor &gain = m.params().param("block.0.norm1.gain");
    for (std::size_t i = 0; i < gain.size(); ++i) CHECK(gain(i) == 1.0);
    const Tensor &bias = m.params().param("block.0.norm1.bias");
    for (std::size_t i = 0; i < bias.size(); ++i) CHECK(bias(i) == 0.0);

    CHECK(m.params().param("block.0.res.attn")(0) == 0.1);
    CHECK(m.params().param("block.1.res.mlp")(0) == 0.1);
}

TEST_CASE("embedding upweight factor") {
    ModelConfig c = tiny_config();
    c.embed_scale = 50.0;
    Rng r1(4), r2(4);
    Model scaled(c, r1);
    c.embed_scale = 1.0;
    Model plain(c, r2);
    const Tensor &a = scaled.params().param("embed.tok");
    const Tensor &b = plain.params().param("embed.tok");
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a(i) == doctest::Approx(50.0 * b(i)).epsilon(1e-15));
}

TEST_CASE("norm_apply examples") {
    Tensor x = Tensor::matrix({{3, 4}});
    Tensor out = norm_apply(x, NormKind::SrmsNorm, nullptr, nullptr);
    CHECK(out(0, 0) == doctest::Approx(0.84853).epsilon(1e-4));
    CHECK(out(0, 1) == doctest::Approx(1.13137).epsilon(1e-4));
    const double norm = std::sqrt(out(0, 0) * out(0, 0) + out(0, 1) * out(0, 1));
    CHECK(norm == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));

    // constant row collapses to the bias under layer-norm
    Tensor c = Tensor::matrix({{5, 5, 5}});
    Tensor gain = Tensor::full({3}, 1.0);
    Tensor bias = Tensor::vector({0.25, -0.5, 1});
    Tensor ln = norm_apply(c, NormKind::LayerNorm, &gain, &bias);
    CHECK(ln(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(ln(0, 1) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(ln(0, 2) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor pm = Tensor::matrix({{1, -1}});
    Tensor g2 = Tensor::full({2}, 1.0);
    Tensor rms = norm_apply(pm, NormKind::RmsNorm, &g2, nullptr);
    CHECK(rms(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rms(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("srms rows land on the sqrt(d) sphere") {
    Rng rng(6);
    Tensor x(5, 12);
    for (std::size_t i = 0; i < x.size(); ++i) x(i) = rng.normal() * 3;
    Tensor out = norm_apply(x, NormKind::SrmsNorm, nullptr, nullptr);
    for (std::size_t i = 0; i < 5; ++i) {
        double nrm = 0;
        for (std::size_t j = 0; j < 12; ++j) nrm += out(i, j) * out(i, j);
        CHECK(std::sqrt(nrm) == doctest::Approx(std::sqrt(12.0)).epsilon(1e-10));
    }
}

TEST_CASE("tanh cap saturates at the configured maximum") {
    CHECK(tanh_cap(1000.0, 30.0) == doctest::Approx(30.0).epsilon(1e-10));
    CHECK(tanh_cap(0.0, 30.0) == 0.0);
    CHECK(tanh_cap(-1000.0, 30.0) == doctest::Approx(-30.0).epsilon(1e-10));
    CHECK(tanh_cap(0.001, 30.0) == doctest::Approx(0.001).epsilon(1e-6));
}

TEST_CASE("attention rows sum to one; T=1 attention is [[1]]") {
    ModelConfig c = tiny_config();
    Rng rng(7);
    Model m(c, rng);
    std::vector<ActivationTap> taps;
    m.forward(ramp_tokens(8, c.vocab), &taps);
    bool saw_attn = false;
    for (const auto &t : taps) {
        for (const auto &a : t.attention) {
            saw_attn = true;
            for (std::size_t i = 0; i < a.rows(); ++i) {
                double s = 0;
                for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
                CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
    CHECK(saw_attn);

    std::vector<ActivationTap> one;
    m.forward({3}, &one);
    for (const auto &t : one) {
        for (const auto &a : t.attention) {
            REQUIRE(a.rows() == 1);
            CHECK(a(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("value-skipinit with alpha=1 beta=0 is identity attention") {
    ModelConfig c = tiny_config();
    c.depth = 1;
    c.block = BlockKind::Op;
    c.norm = NormKind::None;
    c.entropy = EntropyReg::TanhCap;
    c.residual = ResidualScaling::FixedScalar;
    c.residual_beta = 1.0;
    c.attn_shape_alpha = 1.0;
    c.attn_shape_beta = 0.0;
    c.final_norm = false;
    Rng rng(8);
    Model m(c, rng);
    m.params().param("block.0.mlp.w2").zero();

    std::vector<ActivationTap> taps;
    m.forward(ramp_tokens(8, c.vocab), &taps);
    const Tensor *in = tap_x(taps, 0, TapSite::AttnInput);
    const Tensor *out = tap_x(taps, 1, TapSite::UnembedInput);
    REQUIRE(in != nullptr);
    REQUIRE(out != nullptr);

    // identity attention: the whole attention sub-block reduces to x Wv Wp
    Tensor expect = *in + matmul(matmul(*in, m.params().param("block.0.attn.wv")),
                                 m.params().param("block.0.attn.wp"));
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK((*out)(i) == doctest::Approx(expect(i)).epsilon(1e-13));
}

TEST_CASE("op block with zero residual scalars is the identity") {
    ModelConfig c = tiny_config();
    c.block = BlockKind::Op;
    c.norm = NormKind::None;
    c.entropy = EntropyReg::TanhCap;
    c.residual = ResidualScaling::FixedScalar;
    c.residual_beta = 0.0;
    c.final_norm = false;
    Rng rng(9);
    Model m(c, rng);
    std::vector<ActivationTap> taps;
    m.forward(ramp_tokens(8, c.vocab), &taps);
    const Tensor *in = tap_x(taps, 0, TapSite::AttnInput);
    const Tensor *out = tap_x(taps, c.depth, TapSite::UnembedInput);
    REQUIRE(in != nullptr);
    REQUIRE(out != nullptr);
    REQUIRE(in->same_shape(*out));
    for (std::size_t i = 0; i < in->size(); ++i) CHECK((*in)(i) == (*out)(i));
}

TEST_CASE("pre-norm block with zeroed projections is the identity") {
    ModelConfig c = tiny_config();
    Rng rng(10);
    Model m(c, rng);
    for (int b = 0; b < c.depth; ++b) {
        m.params().param("block." + std::to_string(b) + ".attn.wp").zero();
        m.params().param("block." + std::to_string(b) + ".mlp.w2").zero();
    }
    std::vector<ActivationTap> taps;
    m.forward(ramp_tokens(8, c.vocab), &taps);
    const Tensor *in = tap_x(taps, 0, TapSite::AttnInput);
    const Tensor *out = tap_x(taps, c.depth, TapSite::UnembedInput);
    REQUIRE(in != nullptr);
    REQUIRE(out != nullptr);
    for (std::size_t i = 0; i < in->size(); ++i) CHECK((*in)(i) == (*out)(i));
}

TEST_CASE("post-norm block with zeroed branches applies norm twice") {
    ModelConfig c = tiny_config();
    c.block = BlockKind::PostNorm;
    c.depth = 1;
    Rng rng(11);
    Model m(c, rng);
    m.params().param("block.0.attn.wp").zero();
    m.params().param("block.0.mlp.w2").zero();
    std::vector<ActivationTap> taps;
    m.forward(ramp_tokens(8, c.vocab), &taps);
    const Tensor *in = tap_x(taps, 0, TapSite::AttnInput);
    const Tensor *out = tap_x(taps, 1, TapSite::UnembedInput);
    REQUIRE(in != nullptr);
    REQUIRE(out != nullptr);

    const Tensor &g1 = m.params().param("block.0.norm1.gain");
    const Tensor &b1 = m.params().param("block.0.norm1.bias");
    const Tensor &g2 = m.params().param("block.0.norm2.gain");
    const Tensor &b2 = m.params().param("block.0.norm2.bias");
    Tensor expect = norm_apply(norm_apply(*in, c.norm, &g1, &b1), c.norm, &g2, &b2);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK((*out)(i) == doctest::Approx(expect(i)).epsilon(1e-14));
}

TEST_CASE("depth zero model unembeds the embedding stream") {
    ModelConfig c = tiny_config();
    c.depth = 0;
    Rng rng(12);
    Model m(c, rng);
    const auto tokens = ramp_tokens(5, c.vocab);
    Tensor logits = m.forward(tokens);
    const Tensor &tok = m.params().param("embed.tok");
    const Tensor &pos = m.params().param("embed.pos");
    const Tensor &wu = m.params().param("unembed");
    Tensor x(tokens.size(), static_cast<std::size_t>(c.width));
    for (std::size_t t = 0; t < tokens.size(); ++t)
        for (int j = 0; j < c.width; ++j)
            x(t, j) = tok(static_cast<std::size_t>(tokens[t]), j) + pos(t, j);
    Tensor expect = matmul(x, wu);
    REQUIRE(logits.same_shape(expect));
    for (std::size_t i = 0; i < logits.size(); ++i)
        CHECK(logits(i) == doctest::Approx(expect(i)).epsilon(1e-14));
}

TEST_CASE("forward is deterministic for a fixed seed") {
    ModelConfig c = tiny_config();
    Rng r1(13), r2(13);
    Model a(c, r1), b(c, r2);
    const auto tokens = ramp_tokens(8, c.vocab);
    Tensor la = a.forward(tokens);
    Tensor lb = b.forward(tokens);
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(la(i) == lb(i));
}

TEST_CASE("all-zero parameters: uniform loss and zero gradients") {
    ModelConfig c = tiny_config();
    Rng rng(14);
    Model m(c, rng);
    for (const auto &path : m.params().paths()) m.params().param(path).zero();
    std::vector<std::vector<int>> in{ramp_tokens(8, c.vocab)}, tg{ramp_tokens(8, c.vocab)};
    m.params().zero_grads();
    const double loss = m.loss_and_grad(in, tg);
    CHECK(loss == doctest::Approx(std::log(static_cast<double>(c.vocab))).epsilon(1e-12));
    for (const auto &path : m.params().paths()) {
        const Tensor &g = m.params().grad(path);
        for (std::size_t i = 0; i < g.size(); ++i) {
            INFO(path);
            CHECK(g(i) == 0.0);
        }
    }
}

TEST_CASE("loss at init is close to log vocab") {
    ModelConfig c = tiny_config();
    c.vocab = 31;
    Rng rng(15);
    Model m(c, rng);
    std::vector<std::vector<int>> in{ramp_tokens(8, c.vocab)}, tg{ramp_tokens(8, c.vocab)};
    const double loss = m.loss(in, tg);
    CHECK(loss == doctest::Approx(std::log(31.0)).epsilon(0.02));
}

TEST_CASE("op block homogeneity under qk-norm") {
    ModelConfig c = tiny_config();
    c.block = BlockKind::Op;
    c.norm = NormKind::None;
    c.entropy = EntropyReg::QkNorm;
    c.activation = MlpActivation::Relu;
    c.residual = ResidualScaling::FixedScalar;
    c.residual_beta = 0.5;
    c.final_norm = false;
    Rng rng(16);
    Model m(c, rng);
    const auto tokens = ramp_tokens(8, c.vocab);

    std::vector<ActivationTap> taps1;
    m.forward(tokens, &taps1);
    const Tensor base = *tap_x(taps1, c.depth, TapSite::UnembedInput);

    const double k = 2.0;
    m.params().param("embed.tok") *= k;
    m.params().param("embed.pos") *= k;
    std::vector<ActivationTap> taps2;
    m.forward(tokens, &taps2);
    const Tensor scaled = *tap_x(taps2, c.depth, TapSite::UnembedInput);

    REQUIRE(base.same_shape(scaled));
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(scaled(i) == doctest::Approx(k * base(i)).epsilon(1e-12));
}

TEST_CASE("causality: perturbing token t only moves logits at positions >= t") {
    ModelConfig c = tiny_config();
    Rng rng(17);
    Model m(c, rng);
    auto tokens = ramp_tokens(8, c.vocab);
    Tensor before = m.forward(tokens);
    const int t = 4;
    tokens[t] = (tokens[t] + 5) % c.vocab;
    Tensor after = m.forward(tokens);
    for (int pos = 0; pos < 8; ++pos) {
        bool changed = false;
        for (int v = 0; v < c.vocab; ++v) {
            if (before(pos, v) != after(pos, v)) changed = true;
        }
        if (pos < t) CHECK_FALSE(changed);
        if (pos == t) CHECK(changed);
    }
}

TEST_CASE("out-of-range token is rejected") {
    ModelConfig c = tiny_config();
    Rng rng(18);
    Model m(c, rng);
    CHECK_THROWS(m.forward({0, 1, static_cast<int>(c.vocab)}));
}

TEST_CASE("taps are copies") {
    ModelConfig c = tiny_config();
    Rng rng(19);
    Model m(c, rng);
    const auto tokens = ramp_tokens(8, c.vocab);
    std::vector<ActivationTap> taps;
    Tensor l1 = m.forward(tokens, &taps);
    for (auto &t : taps) t.x.fill(1e9);
    Tensor l2 = m.forward(tokens);
    for (std::size_t i = 0; i < l1.size(); ++i) CHECK(l1(i) == l2(i));
}

TEST_CASE("checkpoint round trip") {
    ModelConfig c = tiny_config();
    c.block = BlockKind::Op;
    c.norm = NormKind::None;
    c.entropy = EntropyReg::QkNorm;
    c.residual = ResidualScaling::TrainableVector;
    c.residual_beta = 0.3;
    Rng rng(20);
    Model m(c, rng);
    const std::string dir = "/tmp/olab_test_ckpt";
    std::filesystem::remove_all(dir);
    m.save_checkpoint(dir);
    Model back = Model::load_checkpoint(dir);
    CHECK(back.config().block == c.block);
    CHECK(back.config().vocab == c.vocab);
    REQUIRE(back.params().paths() == m.params().paths());
    for (const auto &path : m.params().paths()) {
        const Tensor &a = m.params().param(path);
        const Tensor &b = back.params().param(path);
        REQUIRE(a.same_shape(b));
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a(i) == b(i));
    }
    const auto tokens = ramp_tokens(8, c.vocab);
    Tensor la = m.forward(tokens);
    Tensor lb = back.forward(tokens);
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(la(i) == lb(i));
    std::filesystem::remove_all(dir);
}

TEST_CASE("tied embeddings reuse the token table") {
    ModelConfig c = tiny_config();
    c.tied_embeddings = true;
    Rng rng(21);
    Model m(c, rng);
    const auto &paths = m.params().paths();
    bool has_unembed = false;
    for (const auto &p : paths) has_unembed = has_unembed || p == "unembed";
    CHECK_FALSE(has_unembed);
    Tensor logits = m.forward(ramp_tokens(4, c.vocab));
    CHECK(logits.cols() == static_cast<std::size_t>(c.vocab));
    CHECK(logits.all_finite());
}

TEST_CASE("config validation") {
    ModelConfig c = tiny_config();
    c.width = 15; // not divisible by heads
    CHECK_THROWS(c.validate());

    ModelConfig op = tiny_config();
    op.block = BlockKind::Op;
    op.norm = NormKind::None;
    op.entropy = EntropyReg::None;
    CHECK_THROWS(op.validate());
    op.mlp_only = true;
    CHECK_NOTHROW(op.validate());

    ModelConfig json_rt = tiny_config();
    json_rt.entropy = EntropyReg::TanhCap;
    ModelConfig back = ModelConfig::from_json(json_rt.to_json());
    CHECK(back.entropy == EntropyReg::TanhCap);
    CHECK(back.width == json_rt.width);
}
