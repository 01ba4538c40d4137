#include "olab/quant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace olab {

namespace {
constexpr double kScaleFloor = 1e-12;

std::int64_t unsigned_q_max(int bits) { return (std::int64_t{1} << bits) - 1; }

void check_bits(int bits) {
    if (bits < 2 || bits > 31) {
        throw std::invalid_argument("quantizer bits must be in [2, 31]");
    }
}
} // namespace

std::string to_string(QuantMode m) {
    return m == QuantMode::SymmetricWeight ? "symmetric-weight" : "asymmetric-activation";
}

nlohmann::json QuantizerSpec::to_json() const {
    return nlohmann::json{{"mode", to_string(mode)}, {"bits", bits},   {"scale", scale},
                          {"zero_point", zero_point}, {"q_min", q_min}, {"q_max", q_max}};
}

QuantizerSpec fit_weight_quantizer(const Tensor &w, int bits) {
    check_bits(bits);
    if (w.empty()) {
        throw std::invalid_argument("cannot fit a quantizer to an empty tensor");
    }
    QuantizerSpec spec;
    spec.mode = QuantMode::SymmetricWeight;
    spec.bits = bits;
    spec.q_max = (std::int64_t{1} << (bits - 1)) - 1;
    spec.q_min = -spec.q_max;
    spec.zero_point = 0;
    double peak = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        peak = std::max(peak, std::fabs(w(i)));
    }
    spec.scale = std::max(peak / static_cast<double>(spec.q_max), kScaleFloor);
    return spec;
}

void ActivationRange::observe(const Tensor &x) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x(i);
        if (!seen) {
            lo = hi = v;
            seen = true;
        } else {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
}

QuantizerSpec fit_activation_quantizer(const ActivationRange &range, int bits) {
    check_bits(bits);
    if (!range.seen) {
        throw std::invalid_argument("activation range has no observations");
    }
    QuantizerSpec spec;
    spec.mode = QuantMode::AsymmetricActivation;
    spec.bits = bits;
    spec.q_min = 0;
    spec.q_max = unsigned_q_max(bits);
    // anchor the range at zero so the zero point is always exact and a
    // constant-valued tensor still round-trips
    const double lo = std::min(range.lo, 0.0);
    const double hi = std::max(range.hi, 0.0);
    spec.scale = std::max((hi - lo) / static_cast<double>(spec.q_max), kScaleFloor);
    const double zp = std::nearbyint(-lo / spec.scale);
    spec.zero_point = static_cast<std::int64_t>(
        std::clamp(zp, static_cast<double>(spec.q_min), static_cast<double>(spec.q_max)));
    return spec;
}

double fake_quant(double x, const QuantizerSpec &spec) {
    double q = std::nearbyint(x / spec.scale) + static_cast<double>(spec.zero_point);
    q = std::clamp(q, static_cast<double>(spec.q_min), static_cast<double>(spec.q_max));
    return (q - static_cast<double>(spec.zero_point)) * spec.scale;
}

Tensor fake_quant(const Tensor &x, const QuantizerSpec &spec) {
    if (spec.scale <= 0.0) {
        throw std::invalid_argument("quantizer scale must be positive");
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out(i) = fake_quant(x(i), spec);
    }
    return out;
}

} // namespace olab
