#pragma once

#include "olab/model_config.hpp"
#include "olab/param_store.hpp"
#include "olab/quant.hpp"
#include "olab/rng.hpp"
#include "olab/tensor.hpp"

#include <string>
#include <vector>

namespace olab {

enum class TapSite { AttnInput, MlpInput, UnembedInput };

std::string to_string(TapSite s);
TapSite tap_site_from_string(const std::string &s);

/// Snapshot of the residual stream at one site. Taps are copies; mutating
/// them never touches training state.
struct ActivationTap {
    int layer = 0;
    TapSite site = TapSite::AttnInput;
    Tensor x;                       // n x d, n = batch * sequence
    std::vector<Tensor> attention;  // per head, T x T (attn-input site only)
};

/// Per-row normalization (x - c*mu)/sigma (*) gain + bias.
/// layer-norm: c=1, gain+bias. rms-norm: c=0, gain. srms-norm: c=0, no
/// parameters, output rows land on the radius-sqrt(d) sphere. sigma uses the
/// population denominator d and is floored at 1e-12.
Tensor norm_apply(const Tensor &x, NormKind kind, const Tensor *gain, const Tensor *bias);

/// Soft attention-logit cap, cap * tanh(s / cap).
double tanh_cap(double s, double cap);

class Model {
  public:
    Model(ModelConfig config, Rng &rng);

    const ModelConfig &config() const { return cfg_; }
    ParameterStore &params() { return ps_; }
    const ParameterStore &params() const { return ps_; }

    /// Logits for one sequence; optionally records taps (appended) and
    /// applies fake quantization to matmul weights/inputs.
    Tensor forward(const std::vector<int> &tokens, std::vector<ActivationTap> *taps = nullptr,
                   const QuantContext *quant = nullptr) const;

    /// Mean cross-entropy over all positions of all sequences. Gradients are
    /// accumulated into the store (call params().zero_grads() first).
    /// Taps from a batch are flattened over (batch, sequence) per site.
    double loss_and_grad(const std::vector<std::vector<int>> &inputs,
                         const std::vector<std::vector<int>> &targets,
                         std::vector<ActivationTap> *taps = nullptr);

    /// Evaluation-only loss, no gradients.
    double loss(const std::vector<std::vector<int>> &inputs,
                const std::vector<std::vector<int>> &targets,
                std::vector<ActivationTap> *taps = nullptr,
                const QuantContext *quant = nullptr) const;

    void save_checkpoint(const std::string &dir) const;
    static Model load_checkpoint(const std::string &dir);

  private:
    ModelConfig cfg_;
    ParameterStore ps_;

    Model(ModelConfig config, ParameterStore ps);
};

} // namespace olab
