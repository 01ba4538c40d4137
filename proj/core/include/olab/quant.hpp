#pragma once

#include "olab/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

#include "json.hpp"

namespace olab {

enum class QuantMode { SymmetricWeight, AsymmetricActivation };

std::string to_string(QuantMode m);

/// Scale / zero-point record for one tensor's fake quantization.
/// Symmetric: zero_point 0, grid [-q_max, q_max]. Asymmetric: grid
/// [0, 2^bits - 1] with the zero point placed so 0 round-trips exactly.
struct QuantizerSpec {
    QuantMode mode = QuantMode::SymmetricWeight;
    int bits = 8;
    double scale = 1.0;
    std::int64_t zero_point = 0;
    std::int64_t q_min = -127;
    std::int64_t q_max = 127;

    nlohmann::json to_json() const;
};

QuantizerSpec fit_weight_quantizer(const Tensor &w, int bits = 8);

/// Running per-tensor extrema over calibration batches.
struct ActivationRange {
    double lo = 0.0;
    double hi = 0.0;
    bool seen = false;

    void observe(const Tensor &x);
};

QuantizerSpec fit_activation_quantizer(const ActivationRange &range, int bits = 8);

/// Quantize-then-dequantize in full precision, round-half-to-even.
Tensor fake_quant(const Tensor &x, const QuantizerSpec &spec);
double fake_quant(double x, const QuantizerSpec &spec);

/// Hook passed through the model's forward pass. With `observe` set the pass
/// records the input range of every quantizable matmul; otherwise both the
/// weight and its input are fake-quantized before the product. Keys are
/// weight parameter paths. The unembedding projection is never quantized.
struct QuantContext {
    const std::map<std::string, QuantizerSpec> *weights = nullptr;
    const std::map<std::string, QuantizerSpec> *activations = nullptr;
    std::map<std::string, ActivationRange> *observe = nullptr;
};

} // namespace olab
