#include "olab/model_config.hpp"

#include <cmath>
#include <stdexcept>

namespace olab {

namespace {
[[noreturn]] void bad_enum(const std::string &what, const std::string &s) {
    throw std::invalid_argument("unknown " + what + ": '" + s + "'");
}
} // namespace

std::string to_string(BlockKind k) {
    switch (k) {
    case BlockKind::PreNorm: return "pre-norm";
    case BlockKind::PostNorm: return "post-norm";
    case BlockKind::Op: return "op";
    case BlockKind::UnnormalizedNaive: return "unnormalized-naive";
    }
    return "?";
}
std::string to_string(NormKind k) {
    switch (k) {
    case NormKind::LayerNorm: return "layer-norm";
    case NormKind::RmsNorm: return "rms-norm";
    case NormKind::SrmsNorm: return "srms-norm";
    case NormKind::None: return "none";
    }
    return "?";
}
std::string to_string(EntropyReg k) {
    switch (k) {
    case EntropyReg::None: return "none";
    case EntropyReg::QkNorm: return "qk-norm";
    case EntropyReg::TanhCap: return "tanh-cap";
    case EntropyReg::Clamp: return "clamp";
    }
    return "?";
}
std::string to_string(ResidualScaling k) {
    switch (k) {
    case ResidualScaling::Implicit: return "implicit";
    case ResidualScaling::FixedScalar: return "fixed-scalar";
    case ResidualScaling::TrainableScalar: return "trainable-scalar";
    case ResidualScaling::TrainableVector: return "trainable-vector";
    }
    return "?";
}
std::string to_string(MlpActivation k) {
    switch (k) {
    case MlpActivation::Relu: return "relu";
    case MlpActivation::Gelu: return "gelu";
    case MlpActivation::LeakyRelu: return "leaky-relu";
    }
    return "?";
}

BlockKind block_kind_from_string(const std::string &s) {
    if (s == "pre-norm") return BlockKind::PreNorm;
    if (s == "post-norm") return BlockKind::PostNorm;
    if (s == "op") return BlockKind::Op;
    if (s == "unnormalized-naive") return BlockKind::UnnormalizedNaive;
    bad_enum("block kind", s);
}
NormKind norm_kind_from_string(const std::string &s) {
    if (s == "layer-norm") return NormKind::LayerNorm;
    if (s == "rms-norm") return NormKind::RmsNorm;
    if (s == "srms-norm") return NormKind::SrmsNorm;
    if (s == "none") return NormKind::None;
    bad_enum("norm kind", s);
}
EntropyReg entropy_reg_from_string(const std::string &s) {
    if (s == "none") return EntropyReg::None;
    if (s == "qk-norm") return EntropyReg::QkNorm;
    if (s == "tanh-cap") return EntropyReg::TanhCap;
    if (s == "clamp") return EntropyReg::Clamp;
    bad_enum("entropy regulation", s);
}
ResidualScaling residual_scaling_from_string(const std::string &s) {
    if (s == "implicit") return ResidualScaling::Implicit;
    if (s == "fixed-scalar") return ResidualScaling::FixedScalar;
    if (s == "trainable-scalar") return ResidualScaling::TrainableScalar;
    if (s == "trainable-vector") return ResidualScaling::TrainableVector;
    bad_enum("residual scaling", s);
}
MlpActivation mlp_activation_from_string(const std::string &s) {
    if (s == "relu") return MlpActivation::Relu;
    if (s == "gelu") return MlpActivation::Gelu;
    if (s == "leaky-relu") return MlpActivation::LeakyRelu;
    bad_enum("mlp activation", s);
}

void ModelConfig::validate() const {
    if (depth < 0 || width < 1 || heads < 1 || vocab < 1 || context < 1) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (width % heads != 0) {
        throw std::invalid_argument("width must be divisible by heads");
    }
    if (!std::isfinite(residual_beta) || !std::isfinite(mlp_alpha) ||
        !std::isfinite(attn_shape_alpha) || !std::isfinite(attn_shape_beta)) {
        throw std::invalid_argument("scaling coefficients must be finite");
    }
    const bool unnormalized = block == BlockKind::Op || block == BlockKind::UnnormalizedNaive;
    if (unnormalized && norm != NormKind::None) {
        throw std::invalid_argument("op / unnormalized-naive blocks forbid block norms");
    }
    if (!unnormalized && norm == NormKind::None) {
        throw std::invalid_argument("pre-norm / post-norm blocks need a norm kind");
    }
    if (block == BlockKind::Op && entropy == EntropyReg::None && !mlp_only) {
        throw std::invalid_argument(
            "op block needs an entropy regulation mechanism (use unnormalized-naive otherwise)");
    }
    if (entropy == EntropyReg::QkNorm && qk_norm_kind == NormKind::None) {
        throw std::invalid_argument("qk-norm needs a norm kind");
    }
    if (max_attn_val <= 0.0 || clamp_cap <= 0.0) {
        throw std::invalid_argument("entropy caps must be positive");
    }
    if (final_norm && final_norm_kind == NormKind::None) {
        throw std::invalid_argument("final norm enabled but kind is none");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return nlohmann::json{{"depth", depth},
                          {"width", width},
                          {"heads", heads},
                          {"vocab", vocab},
                          {"context", context},
                          {"block", to_string(block)},
                          {"norm", to_string(norm)},
                          {"mlp_only", mlp_only},
                          {"entropy", to_string(entropy)},
                          {"qk_norm_kind", to_string(qk_norm_kind)},
                          {"qk_norm_trainable", qk_norm_trainable},
                          {"max_attn_val", max_attn_val},
                          {"clamp_cap", clamp_cap},
                          {"residual", to_string(residual)},
                          {"residual_beta", residual_beta},
                          {"activation", to_string(activation)},
                          {"leaky_slope", leaky_slope},
                          {"mlp_alpha", mlp_alpha},
                          {"mlp_alpha_auto", mlp_alpha_auto},
                          {"attn_shape_alpha", attn_shape_alpha},
                          {"attn_shape_beta", attn_shape_beta},
                          {"final_norm", final_norm},
                          {"final_norm_kind", to_string(final_norm_kind)},
                          {"embed_scale", embed_scale},
                          {"tied_embeddings", tied_embeddings},
                          {"init_std", init_std}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json &j) {
    ModelConfig c;
    c.depth = j.at("depth").get<int>();
    c.width = j.at("width").get<int>();
    c.heads = j.at("heads").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.context = j.at("context").get<int>();
    c.block = block_kind_from_string(j.at("block").get<std::string>());
    c.norm = norm_kind_from_string(j.at("norm").get<std::string>());
    c.mlp_only = j.value("mlp_only", false);
    c.entropy = entropy_reg_from_string(j.at("entropy").get<std::string>());
    c.qk_norm_kind = norm_kind_from_string(j.at("qk_norm_kind").get<std::string>());
    c.qk_norm_trainable = j.at("qk_norm_trainable").get<bool>();
    c.max_attn_val = j.at("max_attn_val").get<double>();
    c.clamp_cap = j.at("clamp_cap").get<double>();
    c.residual = residual_scaling_from_string(j.at("residual").get<std::string>());
    c.residual_beta = j.at("residual_beta").get<double>();
    c.activation = mlp_activation_from_string(j.at("activation").get<std::string>());
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.mlp_alpha = j.at("mlp_alpha").get<double>();
    c.mlp_alpha_auto = j.at("mlp_alpha_auto").get<bool>();
    c.attn_shape_alpha = j.at("attn_shape_alpha").get<double>();
    c.attn_shape_beta = j.at("attn_shape_beta").get<double>();
    c.final_norm = j.at("final_norm").get<bool>();
    c.final_norm_kind = norm_kind_from_string(j.at("final_norm_kind").get<std::string>());
    c.embed_scale = j.at("embed_scale").get<double>();
    c.tied_embeddings = j.at("tied_embeddings").get<bool>();
    c.init_std = j.at("init_std").get<double>();
    return c;
}

} // namespace olab
