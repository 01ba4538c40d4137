#include "olab/quant_eval.hpp"

#include "olab/metrics.hpp"

#include <stdexcept>

namespace olab {

std::vector<std::string> quantizable_paths(const Model &model) {
    std::vector<std::string> out;
    for (const auto &path : model.params().paths()) {
        if (path.find("attn.w") != std::string::npos ||
            path.find("mlp.w") != std::string::npos) {
            out.push_back(path);
        }
    }
    return out;
}

nlohmann::json QuantReport::to_json() const {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto &kv : weight_specs) {
        nlohmann::json row = kv.second.to_json();
        row["path"] = kv.first;
        tensors.push_back(row);
    }
    for (const auto &kv : activation_specs) {
        nlohmann::json row = kv.second.to_json();
        row["path"] = kv.first + ":input";
        tensors.push_back(row);
    }
    return nlohmann::json{{"loss_fp", loss_fp},
                          {"loss_w8a8", loss_w8a8},
                          {"quantization_error", quantization_error},
                          {"mean_kurtosis", mean_kurtosis},
                          {"tensors", tensors}};
}

QuantReport quantized_eval(const Model &model,
                           const std::vector<std::vector<int>> &calib_inputs,
                           const std::vector<std::vector<int>> &calib_targets,
                           const std::vector<std::vector<int>> &eval_inputs,
                           const std::vector<std::vector<int>> &eval_targets, int bits) {
    if (calib_inputs.empty()) {
        throw std::invalid_argument("quantized_eval needs at least one calibration batch");
    }
    QuantReport rep;

    for (const auto &path : quantizable_paths(model)) {
        rep.weight_specs.emplace(path, fit_weight_quantizer(model.params().param(path), bits));
    }

    std::map<std::string, ActivationRange> ranges;
    {
        QuantContext observe_ctx;
        observe_ctx.observe = &ranges;
        model.loss(calib_inputs, calib_targets, nullptr, &observe_ctx);
    }
    for (const auto &kv : ranges) {
        rep.activation_specs.emplace(kv.first, fit_activation_quantizer(kv.second, bits));
    }

    std::vector<ActivationTap> taps;
    rep.loss_fp = model.loss(eval_inputs, eval_targets, &taps);
    double ksum = 0.0;
    std::size_t kcount = 0;
    for (const auto &t : taps) {
        if (t.site == TapSite::MlpInput) continue;
        ksum += kurtosis(t.x);
        ++kcount;
    }
    if (kcount > 0) rep.mean_kurtosis = ksum / static_cast<double>(kcount);

    QuantContext quant_ctx;
    quant_ctx.weights = &rep.weight_specs;
    quant_ctx.activations = &rep.activation_specs;
    rep.loss_w8a8 = model.loss(eval_inputs, eval_targets, nullptr, &quant_ctx);
    rep.quantization_error = rep.loss_w8a8 - rep.loss_fp;
    return rep;
}

} // namespace olab
