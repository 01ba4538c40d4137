#pragma once

#include "olab/model.hpp"
#include "olab/quant.hpp"

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace olab {

struct QuantReport {
    double loss_fp = 0.0;
    double loss_w8a8 = 0.0;
    double quantization_error = 0.0; // loss_w8a8 - loss_fp
    double mean_kurtosis = 0.0;      // layer-averaged, from the fp eval taps
    std::map<std::string, QuantizerSpec> weight_specs;
    std::map<std::string, QuantizerSpec> activation_specs;

    nlohmann::json to_json() const;
};

/// Fits per-tensor quantizers (symmetric weights, asymmetric activations,
/// ranges from the calibration batches) and evaluates the model with every
/// quantizable matmul running on fake-quantized operands. The unembedding
/// and the embedding lookups stay in full precision.
QuantReport quantized_eval(const Model &model,
                           const std::vector<std::vector<int>> &calib_inputs,
                           const std::vector<std::vector<int>> &calib_targets,
                           const std::vector<std::vector<int>> &eval_inputs,
                           const std::vector<std::vector<int>> &eval_targets, int bits);

/// Weight parameter paths subject to quantization (matmul weights only).
std::vector<std::string> quantizable_paths(const Model &model);

} // namespace olab
