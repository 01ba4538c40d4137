#pragma once

#include "olab/rng.hpp"
#include "olab/tensor.hpp"

#include <string>
#include <vector>

#include "json.hpp"

namespace olab {

/// Per-neuron root mean-squared activation, s_j = sqrt(mean_rows x_j^2).
Tensor neuron_rms(const Tensor &x);

/// Uncentred activation kurtosis, mean_j s_j^4 / (mean_j s_j^2)^2.
/// Ranges over [1, d]. Set `centred` to subtract the per-neuron mean first.
double kurtosis(const Tensor &x, bool centred = false);

enum class MmrAggregate { Mean, Median, Max };

struct MmrResult {
    double value = 0.0;
    std::size_t skipped_rows = 0; // rows whose abs-median was zero
};

/// Per-row max|x| / abs-median|x|, aggregated over rows.
MmrResult mmr(const Tensor &x, MmrAggregate aggregate = MmrAggregate::Mean);

struct SigpropResult {
    double mean_offdiag = 0.0;     // mean over a != b of (X X^T / d)_{ab}
    double rms_offdiag = 0.0;
    double feature_corr_rms = 0.0; // rms over i != j of (X^T X / n)_{ij}
    double trace_residual = 0.0;   // |Tr(S_F S_F) - Tr(S_I S_I)|
};

/// Gram statistics of X after rescaling by 1/sqrt(m2).
SigpropResult sigprop(const Tensor &x);

/// Mean row entropy of an attention matrix, -(1/T) sum a ln a with
/// 0 ln 0 := 0. Rows must sum to 1 within 1e-6 and be non-negative.
double attention_entropy(const Tensor &a);

struct MomentDecomposition {
    double u21 = 0, u22 = 0;
    double u41 = 0, u42 = 0, u43 = 0, u44 = 0;
    double m2_delta = 0, m4_delta = 0;
};

/// Splits the second/fourth activation-moment change under x -> x + dx into
/// contributions by order in dx. m2_delta = (u21+u22)/(nd);
/// m4_delta = (u41+u42+u43+u44)/(n^2 d). Both equal the direct differences.
MomentDecomposition moment_update_decomposition(const Tensor &x, const Tensor &dx);

/// m2 = mean of squares; m4 = mean_j (mean_rows x_j^2)^2 (the kurtosis
/// numerator before normalization by m2^2).
double moment_m2(const Tensor &x);
double moment_m4(const Tensor &x);

struct GaussianOracleResult {
    double estimate = 0.0;
    double stderr_ = 0.0;
    double exact_finite_n = 0.0;
};

/// Monte Carlo check of the expected squared diagonal entry of the feature
/// Gram (1/n) X^T X for X = sqrt(1-rho) U + sqrt(rho) v broadcast over rows.
/// exact_finite_n = (1 + 2 rho^2) + (2(1-rho)^2 + 4 rho(1-rho))/n.
GaussianOracleResult gaussian_feature_oracle(double rho, std::size_t n, std::size_t d,
                                             std::size_t trials, Rng &rng);

/// One metrics row as logged per (step, layer, site).
struct MetricRecord {
    long step = 0;
    int layer = 0;
    std::string site;
    double kurtosis = 0;
    double mmr = 0;
    std::size_t mmr_skipped_rows = 0;
    double activation_rms = 0;
    double sigprop_mean_offdiag = 0;
    double sigprop_rms_offdiag = 0;
    double feature_corr_rms = 0;
    double trace_identity_residual = 0;
    double attention_entropy = 0; // mean over heads; -1 when no attention here
    bool has_decomposition = false;
    MomentDecomposition decomposition;

    nlohmann::json to_json() const;
    static MetricRecord from_json(const nlohmann::json &j);
    static std::vector<std::string> csv_header();
    std::string csv_row() const;
};

/// Computes every activation statistic of a record from a tap snapshot.
MetricRecord compute_metrics(const Tensor &x, const std::vector<Tensor> &attention, long step,
                             int layer, const std::string &site);

} // namespace olab
