#include "olab/model.hpp"

#include "olab/ops.hpp"
#include "olab/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace olab {

namespace {

constexpr double kSigmaFloor = 1e-12;
constexpr double kGeluInputGain = 1.7015;

double norm_centre(NormKind k) { return k == NormKind::LayerNorm ? 1.0 : 0.0; }

struct NormCache {
    Tensor y0;                  // (x - c mu)/sigma, before gain/bias
    std::vector<double> sigma;  // per row
    std::vector<bool> floored;
    NormKind kind = NormKind::None;
};

Tensor norm_forward(const Tensor &x, NormKind kind, const Tensor *gain, const Tensor *bias,
                    NormCache *cache) {
    if (kind == NormKind::None) {
        if (cache) cache->kind = NormKind::None;
        return x;
    }
    const std::size_t n = x.rows(), d = x.cols();
    const double c = norm_centre(kind);
    Tensor y0(n, d);
    std::vector<double> sigmas(n);
    std::vector<bool> floored(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        if (c != 0.0) {
            for (std::size_t j = 0; j < d; ++j) mu += x(i, j);
            mu /= static_cast<double>(d);
        }
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double xc = x(i, j) - c * mu;
            var += xc * xc;
        }
        var /= static_cast<double>(d);
        const double sigma_raw = std::sqrt(var);
        const bool fl = sigma_raw < kSigmaFloor;
        const double sigma = fl ? kSigmaFloor : sigma_raw;
        for (std::size_t j = 0; j < d; ++j) {
            y0(i, j) = (x(i, j) - c * mu) / sigma;
        }
        sigmas[i] = sigma;
        floored[i] = fl;
    }
    Tensor y = y0;
    if (gain) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) y(i, j) = y0(i, j) * (*gain)(j);
    }
    if (bias) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) y(i, j) += (*bias)(j);
    }
    if (cache) {
        cache->y0 = std::move(y0);
        cache->sigma = std::move(sigmas);
        cache->floored = std::move(floored);
        cache->kind = kind;
    }
    return y;
}

Tensor norm_backward(const Tensor &dy, const NormCache &cache, const Tensor *gain, Tensor *dgain,
                     Tensor *dbias) {
    if (cache.kind == NormKind::None) return dy;
    const std::size_t n = dy.rows(), d = dy.cols();
    const double c = norm_centre(cache.kind);
    Tensor dx(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        double mean_dy0 = 0.0, mean_dy0_y0 = 0.0;
        std::vector<double> dy0(d);
        for (std::size_t j = 0; j < d; ++j) {
            double g = dy(i, j);
            if (dbias) (*dbias)(j) += g;
            if (dgain) (*dgain)(j) += g * cache.y0(i, j);
            if (gain) g *= (*gain)(j);
            dy0[j] = g;
            mean_dy0 += g;
            mean_dy0_y0 += g * cache.y0(i, j);
        }
        mean_dy0 /= static_cast<double>(d);
        mean_dy0_y0 /= static_cast<double>(d);
        const double inv_sigma = 1.0 / cache.sigma[i];
        for (std::size_t j = 0; j < d; ++j) {
            double v = dy0[j] - c * mean_dy0;
            if (!cache.floored[i]) v -= cache.y0(i, j) * mean_dy0_y0;
            dx(i, j) = v * inv_sigma;
        }
    }
    return dx;
}

Tensor col_slice(const Tensor &m, std::size_t start, std::size_t k) {
    Tensor out(m.rows(), k);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < k; ++j) out(i, j) = m(i, start + j);
    return out;
}

void col_scatter_add(Tensor &m, const Tensor &part, std::size_t start) {
    for (std::size_t i = 0; i < part.rows(); ++i)
        for (std::size_t j = 0; j < part.cols(); ++j) m(i, start + j) += part(i, j);
}

Tensor vec_slice(const Tensor &v, std::size_t start, std::size_t k) {
    Tensor out(k);
    for (std::size_t j = 0; j < k; ++j) out(j) = v(start + j);
    return out;
}

void vec_scatter_add(Tensor &v, const Tensor &part, std::size_t start) {
    for (std::size_t j = 0; j < part.size(); ++j) v(start + j) += part(j);
}

struct HeadCache {
    Tensor qn, kn;       // post qk-norm queries/keys, T x d_k
    NormCache qn_cache, kn_cache;
    Tensor s_pre;        // logits before any cap, T x T
    Tensor attn;         // softmax output, T x T
    Tensor attn_used;    // after Value-SkipInit shaping
};

struct AttnCache {
    Tensor q, k, v;      // full T x d projections
    std::vector<HeadCache> heads;
    Tensor concat;       // T x d
};

struct MlpCache {
    Tensor xin;   // input to w1
    Tensor z;     // alpha * xin w1
    Tensor h;     // act(z)
};

struct BlockCache {
    Tensor xin;
    NormCache n1, n2;
    Tensor norm1_out;
    AttnCache attn;
    Tensor attn_branch;  // pre residual-scale
    Tensor xhat;
    MlpCache mlp;
    Tensor mlp_branch;   // pre residual-scale
};

struct ForwardCache {
    Tensor x0;
    std::vector<BlockCache> blocks;
    NormCache final_norm;
    Tensor unembed_in;
    Tensor logits;
};

double act_forward(double z, MlpActivation a, double slope) {
    switch (a) {
    case MlpActivation::Relu: return z > 0.0 ? z : 0.0;
    case MlpActivation::LeakyRelu: return z > 0.0 ? z : slope * z;
    case MlpActivation::Gelu: return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0)));
    }
    return z;
}

double act_grad(double z, MlpActivation a, double slope) {
    switch (a) {
    case MlpActivation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case MlpActivation::LeakyRelu: return z > 0.0 ? 1.0 : slope;
    case MlpActivation::Gelu: {
        const double cdf = 0.5 * (1.0 + std::erf(z / std::sqrt(2.0)));
        const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::acos(-1.0));
        return cdf + z * pdf;
    }
    }
    return 1.0;
}

Tensor causal_mask(std::size_t t) {
    Tensor m(t, t);
    const double ninf = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) m(i, j) = j > i ? ninf : 0.0;
    return m;
}

} // namespace

std::string to_string(TapSite s) {
    switch (s) {
    case TapSite::AttnInput: return "attn-input";
    case TapSite::MlpInput: return "mlp-input";
    case TapSite::UnembedInput: return "unembed-input";
    }
    return "?";
}

TapSite tap_site_from_string(const std::string &s) {
    if (s == "attn-input") return TapSite::AttnInput;
    if (s == "mlp-input") return TapSite::MlpInput;
    if (s == "unembed-input") return TapSite::UnembedInput;
    throw std::invalid_argument("unknown tap site: '" + s + "'");
}

Tensor norm_apply(const Tensor &x, NormKind kind, const Tensor *gain, const Tensor *bias) {
    return norm_forward(x, kind, gain, bias, nullptr);
}

double tanh_cap(double s, double cap) { return cap * std::tanh(s / cap); }

// ============================================================================
// construction
// ============================================================================

namespace {

Tensor gaussian(std::vector<std::size_t> shape, double std, Rng &rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t(i) = std * rng.normal();
    return t;
}

double resolved_mlp_alpha(const ModelConfig &c) {
    if (!c.mlp_alpha_auto) return c.mlp_alpha;
    return c.activation == MlpActivation::Gelu ? kGeluInputGain : 1.0;
}

void add_norm_params(ParameterStore &ps, const std::string &prefix, NormKind kind,
                     std::size_t d) {
    if (kind == NormKind::LayerNorm || kind == NormKind::RmsNorm) {
        ps.add(prefix + ".gain", Tensor::full({d}, 1.0));
    }
    if (kind == NormKind::LayerNorm) {
        ps.add(prefix + ".bias", Tensor::full({d}, 0.0));
    }
}

} // namespace

Model::Model(ModelConfig config, Rng &rng) : cfg_(std::move(config)) {
    cfg_.validate();
    const auto d = static_cast<std::size_t>(cfg_.width);
    const auto v = static_cast<std::size_t>(cfg_.vocab);
    const auto t = static_cast<std::size_t>(cfg_.context);
    const auto hid = static_cast<std::size_t>(cfg_.mlp_hidden());
    const double std = cfg_.init_std;

    Tensor tok = gaussian({v, d}, std, rng);
    tok *= cfg_.embed_scale;
    ps_.add("embed.tok", std::move(tok));
    Tensor pos = gaussian({t, d}, std, rng);
    pos *= cfg_.embed_scale;
    ps_.add("embed.pos", std::move(pos));
    if (!cfg_.tied_embeddings) {
        ps_.add("unembed", gaussian({d, v}, std, rng));
    }

    const bool block_norms =
        cfg_.block == BlockKind::PreNorm || cfg_.block == BlockKind::PostNorm;
    for (int b = 0; b < cfg_.depth; ++b) {
        const std::string p = "block." + std::to_string(b) + ".";
        if (!cfg_.mlp_only) {
            ps_.add(p + "attn.wq", gaussian({d, d}, std, rng));
            ps_.add(p + "attn.wk", gaussian({d, d}, std, rng));
            ps_.add(p + "attn.wv", gaussian({d, d}, std, rng));
            ps_.add(p + "attn.wp", gaussian({d, d}, std, rng));
            if (cfg_.entropy == EntropyReg::QkNorm && cfg_.qk_norm_trainable) {
                add_norm_params(ps_, p + "attn.qnorm", cfg_.qk_norm_kind, d);
                add_norm_params(ps_, p + "attn.knorm", cfg_.qk_norm_kind, d);
            }
            if (block_norms) {
                add_norm_params(ps_, p + "norm1", cfg_.norm, d);
            }
            if (cfg_.residual == ResidualScaling::TrainableScalar) {
                ps_.add(p + "res.attn", Tensor::full({1}, cfg_.residual_beta));
            } else if (cfg_.residual == ResidualScaling::TrainableVector) {
                ps_.add(p + "res.attn", Tensor::full({d}, cfg_.residual_beta));
            }
        }
        if (block_norms) {
            add_norm_params(ps_, p + "norm2", cfg_.norm, d);
        }
        ps_.add(p + "mlp.w1", gaussian({d, hid}, std, rng));
        ps_.add(p + "mlp.w2", gaussian({hid, d}, std, rng));
        if (cfg_.residual == ResidualScaling::TrainableScalar) {
            ps_.add(p + "res.mlp", Tensor::full({1}, cfg_.residual_beta));
        } else if (cfg_.residual == ResidualScaling::TrainableVector) {
            ps_.add(p + "res.mlp", Tensor::full({d}, cfg_.residual_beta));
        }
    }
    if (cfg_.final_norm) {
        add_norm_params(ps_, "final", cfg_.final_norm_kind, d);
    }
}

Model::Model(ModelConfig config, ParameterStore ps) : cfg_(std::move(config)), ps_(std::move(ps)) {
    cfg_.validate();
}

// ============================================================================
// forward
// ============================================================================

namespace {

// X * W with optional fake quantization of both operands.
Tensor qmm(const Tensor &x, const std::string &wpath, const Tensor &w, const QuantContext *q) {
    if (!q) return matmul(x, w);
    if (q->observe) {
        (*q->observe)[wpath].observe(x);
        return matmul(x, w);
    }
    if (!q->weights || q->weights->count(wpath) == 0) {
        throw std::runtime_error("missing weight quantizer for " + wpath);
    }
    if (!q->activations || q->activations->count(wpath) == 0) {
        throw std::runtime_error("missing activation quantizer for input of " + wpath);
    }
    return matmul(fake_quant(x, q->activations->at(wpath)),
                  fake_quant(w, q->weights->at(wpath)));
}

} // namespace

struct ModelPass {
    const ModelConfig &cfg;
    ParameterStore &ps;
    const QuantContext *quant = nullptr;

    const Tensor *gain_of(const std::string &prefix) const {
        return ps.has(prefix + ".gain") ? &ps.param(prefix + ".gain") : nullptr;
    }
    const Tensor *bias_of(const std::string &prefix) const {
        return ps.has(prefix + ".bias") ? &ps.param(prefix + ".bias") : nullptr;
    }

    double res_scale_value(const std::string &path, std::size_t j) const {
        switch (cfg.residual) {
        case ResidualScaling::Implicit: return 1.0;
        case ResidualScaling::FixedScalar: return cfg.residual_beta;
        case ResidualScaling::TrainableScalar: return ps.param(path)(0);
        case ResidualScaling::TrainableVector: return ps.param(path)(j);
        }
        return 1.0;
    }

    Tensor apply_res_scale(const Tensor &branch, const std::string &path) const {
        Tensor out = branch;
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j)
                out(i, j) *= res_scale_value(path, j);
        return out;
    }

    // d(branch) from d(scaled branch); also accumulates the scale's gradient.
    Tensor res_scale_backward(const Tensor &dscaled, const Tensor &branch,
                              const std::string &path) {
        if (cfg.residual == ResidualScaling::TrainableScalar) {
            double acc = 0.0;
            for (std::size_t i = 0; i < branch.size(); ++i) acc += dscaled(i) * branch(i);
            ps.grad(path)(0) += acc;
        } else if (cfg.residual == ResidualScaling::TrainableVector) {
            Tensor &g = ps.grad(path);
            for (std::size_t i = 0; i < branch.rows(); ++i)
                for (std::size_t j = 0; j < branch.cols(); ++j)
                    g(j) += dscaled(i, j) * branch(i, j);
        }
        Tensor db = dscaled;
        for (std::size_t i = 0; i < db.rows(); ++i)
            for (std::size_t j = 0; j < db.cols(); ++j)
                db(i, j) *= res_scale_value(path, j);
        return db;
    }

    Tensor attention_forward(const Tensor &x, const std::string &p, AttnCache &c) const {
        const auto heads = static_cast<std::size_t>(cfg.heads);
        const auto dk = static_cast<std::size_t>(cfg.head_dim());
        const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
        const std::size_t t = x.rows();

        c.q = qmm(x, p + "attn.wq", ps.param(p + "attn.wq"), quant);
        c.k = qmm(x, p + "attn.wk", ps.param(p + "attn.wk"), quant);
        c.v = qmm(x, p + "attn.wv", ps.param(p + "attn.wv"), quant);
        c.heads.resize(heads);
        c.concat = Tensor(t, static_cast<std::size_t>(cfg.width));
        c.concat.zero();
        const Tensor mask = causal_mask(t);

        for (std::size_t h = 0; h < heads; ++h) {
            HeadCache &hc = c.heads[h];
            const std::size_t off = h * dk;
            Tensor qh = col_slice(c.q, off, dk);
            Tensor kh = col_slice(c.k, off, dk);
            if (cfg.entropy == EntropyReg::QkNorm) {
                Tensor qg, kg, qb, kb;
                const Tensor *qgain = nullptr, *kgain = nullptr, *qbias = nullptr,
                             *kbias = nullptr;
                if (ps.has(p + "attn.qnorm.gain")) {
                    qg = vec_slice(ps.param(p + "attn.qnorm.gain"), off, dk);
                    kg = vec_slice(ps.param(p + "attn.knorm.gain"), off, dk);
                    qgain = &qg;
                    kgain = &kg;
                }
                if (ps.has(p + "attn.qnorm.bias")) {
                    qb = vec_slice(ps.param(p + "attn.qnorm.bias"), off, dk);
                    kb = vec_slice(ps.param(p + "attn.knorm.bias"), off, dk);
                    qbias = &qb;
                    kbias = &kb;
                }
                hc.qn = norm_forward(qh, cfg.qk_norm_kind, qgain, qbias, &hc.qn_cache);
                hc.kn = norm_forward(kh, cfg.qk_norm_kind, kgain, kbias, &hc.kn_cache);
            } else {
                hc.qn = std::move(qh);
                hc.kn = std::move(kh);
            }
            hc.s_pre = matmul_nt(hc.qn, hc.kn);
            hc.s_pre *= inv_sqrt_dk;
            Tensor s = hc.s_pre;
            if (cfg.entropy == EntropyReg::TanhCap) {
                for (std::size_t i = 0; i < s.size(); ++i)
                    s(i) = tanh_cap(s(i), cfg.max_attn_val);
            } else if (cfg.entropy == EntropyReg::Clamp) {
                for (std::size_t i = 0; i < s.size(); ++i)
                    s(i) = std::clamp(s(i), -cfg.clamp_cap, cfg.clamp_cap);
            }
            hc.attn = masked_softmax(s, mask);
            hc.attn_used = hc.attn;
            if (cfg.attn_shape_alpha != 0.0 || cfg.attn_shape_beta != 1.0) {
                hc.attn_used *= cfg.attn_shape_beta;
                for (std::size_t i = 0; i < t; ++i)
                    hc.attn_used(i, i) += cfg.attn_shape_alpha;
            }
            Tensor vh = col_slice(c.v, off, dk);
            Tensor head_out = matmul(hc.attn_used, vh);
            col_scatter_add(c.concat, head_out, off);
        }
        return qmm(c.concat, p + "attn.wp", ps.param(p + "attn.wp"), quant);
    }

    Tensor attention_backward(const Tensor &dy, const Tensor &x, const std::string &p,
                              const AttnCache &c) {
        const auto heads = static_cast<std::size_t>(cfg.heads);
        const auto dk = static_cast<std::size_t>(cfg.head_dim());
        const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
        const std::size_t t = x.rows();

        ps.grad(p + "attn.wp") += matmul_tn(c.concat, dy);
        Tensor dconcat = matmul_nt(dy, ps.param(p + "attn.wp"));

        Tensor dq(c.q.shape()), dkm(c.k.shape()), dv(c.v.shape());
        dq.zero();
        dkm.zero();
        dv.zero();

        for (std::size_t h = 0; h < heads; ++h) {
            const HeadCache &hc = c.heads[h];
            const std::size_t off = h * dk;
            Tensor dhead = col_slice(dconcat, off, dk);
            Tensor vh = col_slice(c.v, off, dk);

            Tensor da_used = matmul_nt(dhead, vh);
            col_scatter_add(dv, matmul_tn(hc.attn_used, dhead), off);

            Tensor da = da_used;
            if (cfg.attn_shape_alpha != 0.0 || cfg.attn_shape_beta != 1.0) {
                da *= cfg.attn_shape_beta;
            }
            // softmax rows: ds = A (*) (dA - <dA, A>)
            Tensor ds(t, t);
            for (std::size_t i = 0; i < t; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < t; ++j) dot += da(i, j) * hc.attn(i, j);
                for (std::size_t j = 0; j < t; ++j)
                    ds(i, j) = hc.attn(i, j) * (da(i, j) - dot);
            }
            if (cfg.entropy == EntropyReg::TanhCap) {
                for (std::size_t i = 0; i < ds.size(); ++i) {
                    const double th = std::tanh(hc.s_pre(i) / cfg.max_attn_val);
                    ds(i) *= 1.0 - th * th;
                }
            } else if (cfg.entropy == EntropyReg::Clamp) {
                for (std::size_t i = 0; i < ds.size(); ++i) {
                    if (std::fabs(hc.s_pre(i)) >= cfg.clamp_cap) ds(i) = 0.0;
                }
            }
            Tensor dqn = matmul(ds, hc.kn);
            dqn *= inv_sqrt_dk;
            Tensor dkn = matmul_tn(ds, hc.qn);
            dkn *= inv_sqrt_dk;

            if (cfg.entropy == EntropyReg::QkNorm) {
                Tensor qg, kg;
                const Tensor *qgain = nullptr, *kgain = nullptr;
                Tensor dqg(dk), dkg(dk), dqb(dk), dkb(dk);
                dqg.zero();
                dkg.zero();
                dqb.zero();
                dkb.zero();
                Tensor *dqgain = nullptr, *dkgain = nullptr, *dqbias = nullptr, *dkbias = nullptr;
                if (ps.has(p + "attn.qnorm.gain")) {
                    qg = vec_slice(ps.param(p + "attn.qnorm.gain"), off, dk);
                    kg = vec_slice(ps.param(p + "attn.knorm.gain"), off, dk);
                    qgain = &qg;
                    kgain = &kg;
                    dqgain = &dqg;
                    dkgain = &dkg;
                }
                if (ps.has(p + "attn.qnorm.bias")) {
                    dqbias = &dqb;
                    dkbias = &dkb;
                }
                Tensor dqh = norm_backward(dqn, hc.qn_cache, qgain, dqgain, dqbias);
                Tensor dkh = norm_backward(dkn, hc.kn_cache, kgain, dkgain, dkbias);
                if (dqgain) {
                    vec_scatter_add(ps.grad(p + "attn.qnorm.gain"), dqg, off);
                    vec_scatter_add(ps.grad(p + "attn.knorm.gain"), dkg, off);
                }
                if (dqbias) {
                    vec_scatter_add(ps.grad(p + "attn.qnorm.bias"), dqb, off);
                    vec_scatter_add(ps.grad(p + "attn.knorm.bias"), dkb, off);
                }
                col_scatter_add(dq, dqh, off);
                col_scatter_add(dkm, dkh, off);
            } else {
                col_scatter_add(dq, dqn, off);
                col_scatter_add(dkm, dkn, off);
            }
        }

        ps.grad(p + "attn.wq") += matmul_tn(x, dq);
        ps.grad(p + "attn.wk") += matmul_tn(x, dkm);
        ps.grad(p + "attn.wv") += matmul_tn(x, dv);
        Tensor dx = matmul_nt(dq, ps.param(p + "attn.wq"));
        dx += matmul_nt(dkm, ps.param(p + "attn.wk"));
        dx += matmul_nt(dv, ps.param(p + "attn.wv"));
        return dx;
    }

    Tensor mlp_forward(const Tensor &xin, const std::string &p, MlpCache &c) const {
        const double alpha = resolved_mlp_alpha(cfg);
        c.xin = xin;
        c.z = qmm(xin, p + "mlp.w1", ps.param(p + "mlp.w1"), quant);
        c.z *= alpha;
        c.h = Tensor(c.z.shape());
        for (std::size_t i = 0; i < c.z.size(); ++i)
            c.h(i) = act_forward(c.z(i), cfg.activation, cfg.leaky_slope);
        return qmm(c.h, p + "mlp.w2", ps.param(p + "mlp.w2"), quant);
    }

    Tensor mlp_backward(const Tensor &dy, const std::string &p, const MlpCache &c) {
        const double alpha = resolved_mlp_alpha(cfg);
        ps.grad(p + "mlp.w2") += matmul_tn(c.h, dy);
        Tensor dh = matmul_nt(dy, ps.param(p + "mlp.w2"));
        Tensor dz(dh.shape());
        for (std::size_t i = 0; i < dh.size(); ++i)
            dz(i) = dh(i) * act_grad(c.z(i), cfg.activation, cfg.leaky_slope) * alpha;
        ps.grad(p + "mlp.w1") += matmul_tn(c.xin, dz);
        return matmul_nt(dz, ps.param(p + "mlp.w1"));
    }

    Tensor block_forward(const Tensor &xin, int layer, BlockCache &c,
                         std::vector<ActivationTap> *taps) const {
        const std::string p = "block." + std::to_string(layer) + ".";
        c.xin = xin;
        Tensor xhat;
        if (cfg.mlp_only) {
            xhat = xin;
        } else if (cfg.block == BlockKind::PreNorm) {
            c.norm1_out = norm_forward(xin, cfg.norm, gain_of(p + "norm1"), bias_of(p + "norm1"),
                                       &c.n1);
            c.attn_branch = attention_forward(c.norm1_out, p, c.attn);
            xhat = xin + apply_res_scale(c.attn_branch, p + "res.attn");
        } else if (cfg.block == BlockKind::PostNorm) {
            c.attn_branch = attention_forward(xin, p, c.attn);
            Tensor sum = xin + apply_res_scale(c.attn_branch, p + "res.attn");
            xhat = norm_forward(sum, cfg.norm, gain_of(p + "norm1"), bias_of(p + "norm1"), &c.n1);
        } else {
            c.attn_branch = attention_forward(xin, p, c.attn);
            xhat = xin + apply_res_scale(c.attn_branch, p + "res.attn");
        }
        if (taps) {
            ActivationTap tap;
            tap.layer = layer;
            tap.site = TapSite::AttnInput;
            tap.x = xin;
            if (!cfg.mlp_only) {
                for (const auto &hc : c.attn.heads) tap.attention.push_back(hc.attn);
            }
            taps->push_back(std::move(tap));
            ActivationTap mtap;
            mtap.layer = layer;
            mtap.site = TapSite::MlpInput;
            mtap.x = xhat;
            taps->push_back(std::move(mtap));
        }
        c.xhat = xhat;
        Tensor out;
        if (cfg.block == BlockKind::PreNorm) {
            Tensor n2 = norm_forward(xhat, cfg.norm, gain_of(p + "norm2"), bias_of(p + "norm2"),
                                     &c.n2);
            c.mlp_branch = mlp_forward(n2, p, c.mlp);
            out = xhat + apply_res_scale(c.mlp_branch, p + "res.mlp");
        } else if (cfg.block == BlockKind::PostNorm) {
            c.mlp_branch = mlp_forward(xhat, p, c.mlp);
            Tensor sum = xhat + apply_res_scale(c.mlp_branch, p + "res.mlp");
            out = norm_forward(sum, cfg.norm, gain_of(p + "norm2"), bias_of(p + "norm2"), &c.n2);
        } else {
            c.mlp_branch = mlp_forward(xhat, p, c.mlp);
            out = xhat + apply_res_scale(c.mlp_branch, p + "res.mlp");
        }
        return out;
    }

    Tensor block_backward(const Tensor &dout, int layer, const BlockCache &c) {
        const std::string p = "block." + std::to_string(layer) + ".";
        Tensor dxhat;
        if (cfg.block == BlockKind::PostNorm) {
            Tensor dsum = norm_backward(dout, c.n2, gain_of(p + "norm2"),
                                        ps.has(p + "norm2.gain") ? &ps.grad(p + "norm2.gain")
                                                                 : nullptr,
                                        ps.has(p + "norm2.bias") ? &ps.grad(p + "norm2.bias")
                                                                 : nullptr);
            Tensor dm = res_scale_backward(dsum, c.mlp_branch, p + "res.mlp");
            dxhat = dsum + mlp_backward(dm, p, c.mlp);
        } else if (cfg.block == BlockKind::PreNorm) {
            Tensor dm = res_scale_backward(dout, c.mlp_branch, p + "res.mlp");
            Tensor dn2 = mlp_backward(dm, p, c.mlp);
            dxhat = dout + norm_backward(dn2, c.n2, gain_of(p + "norm2"),
                                         ps.has(p + "norm2.gain") ? &ps.grad(p + "norm2.gain")
                                                                  : nullptr,
                                         ps.has(p + "norm2.bias") ? &ps.grad(p + "norm2.bias")
                                                                  : nullptr);
        } else {
            Tensor dm = res_scale_backward(dout, c.mlp_branch, p + "res.mlp");
            dxhat = dout + mlp_backward(dm, p, c.mlp);
        }

        if (cfg.mlp_only) return dxhat;

        if (cfg.block == BlockKind::PostNorm) {
            Tensor dsum = norm_backward(dxhat, c.n1, gain_of(p + "norm1"),
                                        ps.has(p + "norm1.gain") ? &ps.grad(p + "norm1.gain")
                                                                 : nullptr,
                                        ps.has(p + "norm1.bias") ? &ps.grad(p + "norm1.bias")
                                                                 : nullptr);
            Tensor da = res_scale_backward(dsum, c.attn_branch, p + "res.attn");
            return dsum + attention_backward(da, c.xin, p, c.attn);
        }
        if (cfg.block == BlockKind::PreNorm) {
            Tensor da = res_scale_backward(dxhat, c.attn_branch, p + "res.attn");
            Tensor dn1 = attention_backward(da, c.norm1_out, p, c.attn);
            return dxhat + norm_backward(dn1, c.n1, gain_of(p + "norm1"),
                                         ps.has(p + "norm1.gain") ? &ps.grad(p + "norm1.gain")
                                                                  : nullptr,
                                         ps.has(p + "norm1.bias") ? &ps.grad(p + "norm1.bias")
                                                                  : nullptr);
        }
        Tensor da = res_scale_backward(dxhat, c.attn_branch, p + "res.attn");
        return dxhat + attention_backward(da, c.xin, p, c.attn);
    }

    Tensor run_forward(const std::vector<int> &tokens, ForwardCache &fc,
                       std::vector<ActivationTap> *taps) const {
        const std::size_t t = tokens.size();
        if (t == 0) throw std::invalid_argument("empty token sequence");
        if (t > static_cast<std::size_t>(cfg.context)) {
            throw std::invalid_argument("sequence longer than context length");
        }
        const auto d = static_cast<std::size_t>(cfg.width);
        const Tensor &tok = ps.param("embed.tok");
        const Tensor &pos = ps.param("embed.pos");
        fc.x0 = Tensor(t, d);
        for (std::size_t i = 0; i < t; ++i) {
            if (tokens[i] < 0 || tokens[i] >= cfg.vocab) {
                throw std::invalid_argument("token id out of range: " +
                                            std::to_string(tokens[i]));
            }
            const auto id = static_cast<std::size_t>(tokens[i]);
            for (std::size_t j = 0; j < d; ++j) fc.x0(i, j) = tok(id, j) + pos(i, j);
        }
        Tensor x = fc.x0;
        fc.blocks.resize(static_cast<std::size_t>(cfg.depth));
        for (int b = 0; b < cfg.depth; ++b) {
            x = block_forward(x, b, fc.blocks[static_cast<std::size_t>(b)], taps);
        }
        if (cfg.final_norm) {
            x = norm_forward(x, cfg.final_norm_kind, gain_of("final"), bias_of("final"),
                             &fc.final_norm);
        }
        fc.unembed_in = x;
        if (taps) {
            ActivationTap tap;
            tap.layer = cfg.depth;
            tap.site = TapSite::UnembedInput;
            tap.x = x;
            taps->push_back(std::move(tap));
        }
        if (cfg.tied_embeddings) {
            fc.logits = matmul_nt(x, tok);
        } else {
            fc.logits = matmul(x, ps.param("unembed"));
        }
        return fc.logits;
    }

    void run_backward(const Tensor &dlogits, const ForwardCache &fc,
                      const std::vector<int> &tokens) {
        Tensor dx;
        if (cfg.tied_embeddings) {
            ps.grad("embed.tok") += matmul_tn(dlogits, fc.unembed_in);
            dx = matmul(dlogits, ps.param("embed.tok"));
        } else {
            ps.grad("unembed") += matmul_tn(fc.unembed_in, dlogits);
            dx = matmul_nt(dlogits, ps.param("unembed"));
        }
        if (cfg.final_norm) {
            dx = norm_backward(dx, fc.final_norm, gain_of("final"),
                               ps.has("final.gain") ? &ps.grad("final.gain") : nullptr,
                               ps.has("final.bias") ? &ps.grad("final.bias") : nullptr);
        }
        for (int b = cfg.depth - 1; b >= 0; --b) {
            dx = block_backward(dx, b, fc.blocks[static_cast<std::size_t>(b)]);
        }
        Tensor &dtok = ps.grad("embed.tok");
        Tensor &dpos = ps.grad("embed.pos");
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const auto id = static_cast<std::size_t>(tokens[i]);
            for (std::size_t j = 0; j < dx.cols(); ++j) {
                dtok(id, j) += dx(i, j);
                dpos(i, j) += dx(i, j);
            }
        }
    }
};

Tensor Model::forward(const std::vector<int> &tokens, std::vector<ActivationTap> *taps,
                      const QuantContext *quant) const {
    ModelPass pass{cfg_, const_cast<ParameterStore &>(ps_), quant};
    ForwardCache fc;
    return pass.run_forward(tokens, fc, taps);
}

namespace {

// Stack per-sequence taps into one record per (layer, site), n = batch * T.
std::vector<ActivationTap> merge_taps(const std::vector<std::vector<ActivationTap>> &per_seq) {
    std::vector<ActivationTap> merged;
    if (per_seq.empty()) return merged;
    const std::size_t per = per_seq.front().size();
    for (std::size_t k = 0; k < per; ++k) {
        ActivationTap tap;
        tap.layer = per_seq.front()[k].layer;
        tap.site = per_seq.front()[k].site;
        std::size_t rows = 0;
        for (const auto &seq : per_seq) rows += seq[k].x.rows();
        const std::size_t d = per_seq.front()[k].x.cols();
        tap.x = Tensor(rows, d);
        std::size_t r = 0;
        for (const auto &seq : per_seq) {
            const Tensor &x = seq[k].x;
            for (std::size_t i = 0; i < x.rows(); ++i, ++r)
                for (std::size_t j = 0; j < d; ++j) tap.x(r, j) = x(i, j);
            for (const auto &a : seq[k].attention) tap.attention.push_back(a);
        }
        merged.push_back(std::move(tap));
    }
    return merged;
}

double nll_and_dlogits(const Tensor &logits, const std::vector<int> &targets, double inv_n,
                       Tensor *dlogits) {
    const std::size_t t = logits.rows(), v = logits.cols();
    if (targets.size() != t) throw std::invalid_argument("targets/positions length mismatch");
    double loss = 0.0;
    if (dlogits) *dlogits = Tensor(t, v);
    for (std::size_t i = 0; i < t; ++i) {
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, logits(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(logits(i, j) - mx);
        const double logz = std::log(z) + mx;
        const auto tgt = static_cast<std::size_t>(targets[i]);
        if (targets[i] < 0 || tgt >= v) {
            throw std::invalid_argument("target id out of range: " + std::to_string(targets[i]));
        }
        loss += logz - logits(i, tgt);
        if (dlogits) {
            for (std::size_t j = 0; j < v; ++j) {
                double p = std::exp(logits(i, j) - logz);
                (*dlogits)(i, j) = (p - (j == tgt ? 1.0 : 0.0)) * inv_n;
            }
        }
    }
    return loss;
}

} // namespace

double Model::loss_and_grad(const std::vector<std::vector<int>> &inputs,
                            const std::vector<std::vector<int>> &targets,
                            std::vector<ActivationTap> *taps) {
    if (inputs.size() != targets.size() || inputs.empty()) {
        throw std::invalid_argument("batch inputs/targets mismatch");
    }
    std::size_t total = 0;
    for (const auto &s : inputs) total += s.size();
    const double inv_n = 1.0 / static_cast<double>(total);

    ModelPass pass{cfg_, ps_, nullptr};
    std::vector<std::vector<ActivationTap>> per_seq;
    double loss = 0.0;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        ForwardCache fc;
        std::vector<ActivationTap> seq_taps;
        pass.run_forward(inputs[b], fc, taps ? &seq_taps : nullptr);
        Tensor dlogits;
        loss += nll_and_dlogits(fc.logits, targets[b], inv_n, &dlogits);
        pass.run_backward(dlogits, fc, inputs[b]);
        if (taps) per_seq.push_back(std::move(seq_taps));
    }
    if (taps) {
        auto merged = merge_taps(per_seq);
        for (auto &m : merged) taps->push_back(std::move(m));
    }
    return loss * inv_n;
}

double Model::loss(const std::vector<std::vector<int>> &inputs,
                   const std::vector<std::vector<int>> &targets,
                   std::vector<ActivationTap> *taps, const QuantContext *quant) const {
    if (inputs.size() != targets.size() || inputs.empty()) {
        throw std::invalid_argument("batch inputs/targets mismatch");
    }
    std::size_t total = 0;
    for (const auto &s : inputs) total += s.size();
    ModelPass pass{cfg_, const_cast<ParameterStore &>(ps_), quant};
    std::vector<std::vector<ActivationTap>> per_seq;
    double loss = 0.0;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        ForwardCache fc;
        std::vector<ActivationTap> seq_taps;
        pass.run_forward(inputs[b], fc, taps ? &seq_taps : nullptr);
        loss += nll_and_dlogits(fc.logits, targets[b], 0.0, nullptr);
        if (taps) per_seq.push_back(std::move(seq_taps));
    }
    if (taps) {
        auto merged = merge_taps(per_seq);
        for (auto &m : merged) taps->push_back(std::move(m));
    }
    return loss / static_cast<double>(total);
}

// ============================================================================
// checkpoints
// ============================================================================

void Model::save_checkpoint(const std::string &dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["config"] = cfg_.to_json();
    manifest["params"] = ps_.paths();
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
    mf << manifest.dump(2) << "\n";
    for (const auto &path : ps_.paths()) {
        write_tensor(dir + "/" + path + ".tens", ps_.param(path));
    }
}

Model Model::load_checkpoint(const std::string &dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw std::runtime_error("cannot read checkpoint manifest in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(mf);
    ModelConfig cfg = ModelConfig::from_json(manifest.at("config"));
    ParameterStore ps;
    for (const auto &p : manifest.at("params")) {
        const std::string path = p.get<std::string>();
        ps.add(path, read_tensor(dir + "/" + path + ".tens"));
    }
    return Model(std::move(cfg), std::move(ps));
}

} // namespace olab
