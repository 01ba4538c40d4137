#include "olab/metrics.hpp"

#include "olab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace olab {

namespace {

void require_matrix(const Tensor &x, const char *what) {
    if (x.rank() != 2 || x.rows() == 0 || x.cols() == 0) {
        throw std::invalid_argument(std::string(what) + " needs a non-empty n x d matrix");
    }
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

Tensor neuron_rms(const Tensor &x) {
    require_matrix(x, "neuron_rms");
    const std::size_t n = x.rows(), d = x.cols();
    Tensor s(d);
    for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += x(i, j) * x(i, j);
        s(j) = std::sqrt(acc / static_cast<double>(n));
    }
    return s;
}

double kurtosis(const Tensor &x, bool centred) {
    require_matrix(x, "kurtosis");
    const std::size_t n = x.rows(), d = x.cols();
    double m2 = 0.0, m4 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double mu = 0.0;
        if (centred) {
            for (std::size_t i = 0; i < n; ++i) mu += x(i, j);
            mu /= static_cast<double>(n);
        }
        double s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = x(i, j) - mu;
            s2 += v * v;
        }
        s2 /= static_cast<double>(n);
        m2 += s2;
        m4 += s2 * s2;
    }
    m2 /= static_cast<double>(d);
    m4 /= static_cast<double>(d);
    if (m2 == 0.0) {
        throw std::invalid_argument("kurtosis undefined for an all-zero activation matrix");
    }
    return m4 / (m2 * m2);
}

MmrResult mmr(const Tensor &x, MmrAggregate aggregate) {
    require_matrix(x, "mmr");
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> ratios;
    ratios.reserve(n);
    std::size_t skipped = 0;
    std::vector<double> row(d);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            row[j] = std::fabs(x(i, j));
            mx = std::max(mx, row[j]);
        }
        const double med = median_of(row);
        if (med == 0.0) {
            ++skipped;
            continue;
        }
        ratios.push_back(mx / med);
    }
    if (ratios.empty()) {
        throw std::invalid_argument("mmr undefined: every row has zero abs-median");
    }
    MmrResult r;
    r.skipped_rows = skipped;
    switch (aggregate) {
    case MmrAggregate::Mean: {
        double acc = 0.0;
        for (double v : ratios) acc += v;
        r.value = acc / static_cast<double>(ratios.size());
        break;
    }
    case MmrAggregate::Median: r.value = median_of(ratios); break;
    case MmrAggregate::Max: r.value = *std::max_element(ratios.begin(), ratios.end()); break;
    }
    return r;
}

SigpropResult sigprop(const Tensor &x) {
    require_matrix(x, "sigprop");
    const std::size_t n = x.rows(), d = x.cols();
    double m2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m2 += x(i) * x(i);
    m2 /= static_cast<double>(x.size());
    if (m2 <= 0.0) {
        throw std::invalid_argument("sigprop undefined for an all-zero activation matrix");
    }
    Tensor xn = x;
    xn *= 1.0 / std::sqrt(m2);

    const Tensor sig_i = matmul_nt(xn, xn); // n x n
    const Tensor sig_f = matmul_tn(xn, xn); // d x d

    SigpropResult r;
    if (n >= 2) {
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) {
                if (a == b) continue;
                const double v = sig_i(a, b) / static_cast<double>(d);
                sum += v;
                sumsq += v * v;
            }
        }
        const double cnt = static_cast<double>(n) * static_cast<double>(n - 1);
        r.mean_offdiag = sum / cnt;
        r.rms_offdiag = std::sqrt(sumsq / cnt);
    }
    if (d >= 2) {
        double sumsq = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                if (i == j) continue;
                const double v = sig_f(i, j) / static_cast<double>(n);
                sumsq += v * v;
            }
        }
        r.feature_corr_rms = std::sqrt(sumsq / (static_cast<double>(d) * static_cast<double>(d - 1)));
    }
    double tr_f = 0.0, tr_i = 0.0;
    for (std::size_t i = 0; i < sig_f.size(); ++i) tr_f += sig_f(i) * sig_f(i);
    for (std::size_t i = 0; i < sig_i.size(); ++i) tr_i += sig_i(i) * sig_i(i);
    r.trace_residual = std::fabs(tr_f - tr_i);
    return r;
}

double attention_entropy(const Tensor &a) {
    require_matrix(a, "attention_entropy");
    const std::size_t t = a.rows();
    if (a.cols() != t) throw std::invalid_argument("attention matrix must be square");
    double h = 0.0;
    for (std::size_t s = 0; s < t; ++s) {
        double rowsum = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
            const double v = a(s, j);
            if (v < 0.0) {
                throw std::invalid_argument("attention entries must be non-negative");
            }
            rowsum += v;
            if (v > 0.0) h -= v * std::log(v);
        }
        if (std::fabs(rowsum - 1.0) > 1e-6) {
            throw std::invalid_argument("attention row " + std::to_string(s) +
                                        " does not sum to 1");
        }
    }
    return h / static_cast<double>(t);
}

MomentDecomposition moment_update_decomposition(const Tensor &x, const Tensor &dx) {
    require_matrix(x, "moment_update_decomposition");
    if (!x.same_shape(dx)) {
        throw std::invalid_argument("moment_update_decomposition: shape mismatch");
    }
    const std::size_t n = x.rows(), d = x.cols();
    MomentDecomposition r;
    for (std::size_t j = 0; j < d; ++j) {
        double a = 0.0, b = 0.0, c = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double xv = x(i, j), dv = dx(i, j);
            a += xv * xv;
            b += dv * dv;
            c += xv * dv;
        }
        r.u21 += 2.0 * c;
        r.u22 += b;
        r.u41 += 4.0 * c * a;
        r.u42 += 2.0 * b * a + 4.0 * c * c;
        r.u43 += 4.0 * c * b;
        r.u44 += b * b;
    }
    const double nd = static_cast<double>(n) * static_cast<double>(d);
    const double n2d = static_cast<double>(n) * static_cast<double>(n) * static_cast<double>(d);
    r.m2_delta = (r.u21 + r.u22) / nd;
    r.m4_delta = (r.u41 + r.u42 + r.u43 + r.u44) / n2d;
    return r;
}

double moment_m2(const Tensor &x) {
    require_matrix(x, "moment_m2");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x(i) * x(i);
    return acc / static_cast<double>(x.size());
}

double moment_m4(const Tensor &x) {
    require_matrix(x, "moment_m4");
    const std::size_t n = x.rows(), d = x.cols();
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) s2 += x(i, j) * x(i, j);
        s2 /= static_cast<double>(n);
        acc += s2 * s2;
    }
    return acc / static_cast<double>(d);
}

GaussianOracleResult gaussian_feature_oracle(double rho, std::size_t n, std::size_t d,
                                             std::size_t trials, Rng &rng) {
    if (rho < 0.0 || rho >= 1.0) {
        throw std::invalid_argument("rho must lie in [0, 1)");
    }
    if (n < 2 || trials < 1 || d < 1) {
        throw std::invalid_argument("gaussian_feature_oracle needs n >= 2, d >= 1, trials >= 1");
    }
    const double su = std::sqrt(1.0 - rho), sv = std::sqrt(rho);
    double sum = 0.0, sumsq = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
            const double v = sv * rng.normal();
            double s2 = 0.0;
            for (std::size_t a = 0; a < n; ++a) {
                const double x = su * rng.normal() + v;
                s2 += x * x;
            }
            s2 /= static_cast<double>(n); // (Sigma_F)_{jj}
            const double sample = s2 * s2;
            sum += sample;
            sumsq += sample * sample;
            ++count;
        }
    }
    GaussianOracleResult r;
    const double cnt = static_cast<double>(count);
    r.estimate = sum / cnt;
    const double var = std::max(0.0, sumsq / cnt - r.estimate * r.estimate);
    r.stderr_ = std::sqrt(var / cnt);
    r.exact_finite_n = (1.0 + 2.0 * rho * rho) +
                       (2.0 * (1.0 - rho) * (1.0 - rho) + 4.0 * rho * (1.0 - rho)) /
                           static_cast<double>(n);
    return r;
}

nlohmann::json MetricRecord::to_json() const {
    nlohmann::json j{{"step", step},
                     {"layer", layer},
                     {"site", site},
                     {"kurtosis", kurtosis},
                     {"mmr", mmr},
                     {"mmr_skipped_rows", mmr_skipped_rows},
                     {"activation_rms", activation_rms},
                     {"sigprop_mean_offdiag", sigprop_mean_offdiag},
                     {"sigprop_rms_offdiag", sigprop_rms_offdiag},
                     {"feature_corr_rms", feature_corr_rms},
                     {"trace_identity_residual", trace_identity_residual},
                     {"attention_entropy", attention_entropy}};
    if (has_decomposition) {
        j["u21"] = decomposition.u21;
        j["u22"] = decomposition.u22;
        j["u41"] = decomposition.u41;
        j["u42"] = decomposition.u42;
        j["u43"] = decomposition.u43;
        j["u44"] = decomposition.u44;
        j["m2_delta"] = decomposition.m2_delta;
        j["m4_delta"] = decomposition.m4_delta;
    }
    return j;
}

MetricRecord MetricRecord::from_json(const nlohmann::json &j) {
    MetricRecord r;
    r.step = j.at("step").get<long>();
    r.layer = j.at("layer").get<int>();
    r.site = j.at("site").get<std::string>();
    r.kurtosis = j.at("kurtosis").get<double>();
    r.mmr = j.at("mmr").get<double>();
    r.mmr_skipped_rows = j.value("mmr_skipped_rows", std::size_t{0});
    r.activation_rms = j.at("activation_rms").get<double>();
    r.sigprop_mean_offdiag = j.at("sigprop_mean_offdiag").get<double>();
    r.sigprop_rms_offdiag = j.at("sigprop_rms_offdiag").get<double>();
    r.feature_corr_rms = j.at("feature_corr_rms").get<double>();
    r.trace_identity_residual = j.at("trace_identity_residual").get<double>();
    r.attention_entropy = j.at("attention_entropy").get<double>();
    if (j.contains("u21")) {
        r.has_decomposition = true;
        r.decomposition.u21 = j.at("u21").get<double>();
        r.decomposition.u22 = j.at("u22").get<double>();
        r.decomposition.u41 = j.at("u41").get<double>();
        r.decomposition.u42 = j.at("u42").get<double>();
        r.decomposition.u43 = j.at("u43").get<double>();
        r.decomposition.u44 = j.at("u44").get<double>();
        r.decomposition.m2_delta = j.at("m2_delta").get<double>();
        r.decomposition.m4_delta = j.at("m4_delta").get<double>();
    }
    return r;
}

std::vector<std::string> MetricRecord::csv_header() {
    return {"step",
            "layer",
            "site",
            "kurtosis",
            "mmr",
            "mmr_skipped_rows",
            "activation_rms",
            "sigprop_mean_offdiag",
            "sigprop_rms_offdiag",
            "feature_corr_rms",
            "trace_identity_residual",
            "attention_entropy"};
}

std::string MetricRecord::csv_row() const {
    std::string s;
    s += std::to_string(step) + "," + std::to_string(layer) + "," + site + ",";
    s += fmt(kurtosis) + "," + fmt(mmr) + "," + std::to_string(mmr_skipped_rows) + ",";
    s += fmt(activation_rms) + "," + fmt(sigprop_mean_offdiag) + "," + fmt(sigprop_rms_offdiag) +
         ",";
    s += fmt(feature_corr_rms) + "," + fmt(trace_identity_residual) + "," +
         fmt(attention_entropy);
    return s;
}

MetricRecord compute_metrics(const Tensor &x, const std::vector<Tensor> &attention, long step,
                             int layer, const std::string &site) {
    MetricRecord r;
    r.step = step;
    r.layer = layer;
    r.site = site;
    r.kurtosis = kurtosis(x);
    try {
        const MmrResult m = mmr(x);
        r.mmr = m.value;
        r.mmr_skipped_rows = m.skipped_rows;
    } catch (const std::invalid_argument &) {
        // every row had zero abs-median; record the sentinel instead of
        // refusing the whole row of otherwise well-defined statistics
        r.mmr = -1.0;
        r.mmr_skipped_rows = x.rows();
    }
    r.activation_rms = std::sqrt(moment_m2(x));
    const SigpropResult sp = sigprop(x);
    r.sigprop_mean_offdiag = sp.mean_offdiag;
    r.sigprop_rms_offdiag = sp.rms_offdiag;
    r.feature_corr_rms = sp.feature_corr_rms;
    r.trace_identity_residual = sp.trace_residual;
    if (attention.empty()) {
        r.attention_entropy = -1.0;
    } else {
        double h = 0.0;
        for (const auto &a : attention) h += attention_entropy(a);
        r.attention_entropy = h / static_cast<double>(attention.size());
    }
    return r;
}

} // namespace olab
