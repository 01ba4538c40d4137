#pragma once

#include <string>

#include "json.hpp"

namespace olab {

enum class BlockKind { PreNorm, PostNorm, Op, UnnormalizedNaive };
enum class NormKind { LayerNorm, RmsNorm, SrmsNorm, None };
enum class EntropyReg { None, QkNorm, TanhCap, Clamp };
enum class ResidualScaling { Implicit, FixedScalar, TrainableScalar, TrainableVector };
enum class MlpActivation { Relu, Gelu, LeakyRelu };

std::string to_string(BlockKind k);
std::string to_string(NormKind k);
std::string to_string(EntropyReg k);
std::string to_string(ResidualScaling k);
std::string to_string(MlpActivation k);

BlockKind block_kind_from_string(const std::string &s);
NormKind norm_kind_from_string(const std::string &s);
EntropyReg entropy_reg_from_string(const std::string &s);
ResidualScaling residual_scaling_from_string(const std::string &s);
MlpActivation mlp_activation_from_string(const std::string &s);

/// Full architectural genome of the toy transformer.
struct ModelConfig {
    int depth = 6;
    int width = 64;
    int heads = 4;
    int vocab = 64;
    int context = 64;

    BlockKind block = BlockKind::PreNorm;
    NormKind norm = NormKind::LayerNorm;
    bool mlp_only = false; // drop the attention sub-block entirely

    EntropyReg entropy = EntropyReg::None;
    NormKind qk_norm_kind = NormKind::RmsNorm; // norm used inside QK-Norm
    bool qk_norm_trainable = true;
    double max_attn_val = 30.0; // tanh-cap threshold
    double clamp_cap = 30.0;

    ResidualScaling residual = ResidualScaling::Implicit;
    double residual_beta = 1.0; // fixed value, or init for trainable kinds

    MlpActivation activation = MlpActivation::Relu;
    double leaky_slope = 0.01;
    double mlp_alpha = 1.0;
    bool mlp_alpha_auto = false;

    // Value-SkipInit attention shaping: A <- alpha*I + beta*A. (0, 1) is off.
    double attn_shape_alpha = 0.0;
    double attn_shape_beta = 1.0;

    bool final_norm = false;
    NormKind final_norm_kind = NormKind::LayerNorm;

    double embed_scale = 50.0;
    bool tied_embeddings = false;
    double init_std = 0.02;

    int head_dim() const { return width / heads; }
    int mlp_hidden() const { return 4 * width; }
    bool norm_has_gain(NormKind k) const { return k == NormKind::LayerNorm || k == NormKind::RmsNorm; }
    bool norm_has_bias(NormKind k) const { return k == NormKind::LayerNorm; }

    /// Throws std::invalid_argument for inconsistent configurations.
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json &j);
};

} // namespace olab
