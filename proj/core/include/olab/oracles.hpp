#pragma once

#include "olab/model_config.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace olab {

struct OracleReport {
    bool pass = false;
    std::string text;
};

/// Monte Carlo check of the correlated-Gaussian feature-Gram expectation
/// against its closed form. Passes when the estimate lies within
/// `sigmas` standard errors of the exact value.
OracleReport oracle_gaussian_prop(double rho, std::size_t n, std::size_t d, std::size_t trials,
                                  std::uint64_t seed, double sigmas = 4.0);

/// Exact-identity sweep: |Tr(S_F S_F) - Tr(S_I S_I)| and the fourth-moment
/// ledger on random matrices.
OracleReport oracle_trace_identity(int trials, std::uint64_t seed);

/// Moment-update decomposition reconstructs both direct moment deltas.
OracleReport oracle_decomposition(int trials, std::uint64_t seed);

struct GradcheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::string config_name;
};

/// Compares every parameter's reverse-mode gradient against central finite
/// differences on a small random batch.
GradcheckResult gradcheck(const ModelConfig &cfg, const std::string &name, std::uint64_t seed);

/// The block-kind x entropy-regulation sweep used by the acceptance gate.
std::vector<std::pair<std::string, ModelConfig>> gradcheck_configs();

OracleReport oracle_gradcheck(std::uint64_t seed, double tol = 1e-5);

} // namespace olab
