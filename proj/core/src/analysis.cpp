#include "olab/analysis.hpp"

#include "olab/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace olab {

namespace {

nlohmann::json read_json_file(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    return nlohmann::json::parse(is);
}

} // namespace

RunSummary load_run_summary(const std::string &dir) {
    RunSummary s;
    s.dir = dir;
    const nlohmann::json status = read_json_file(dir + "/status.json");
    s.status = status.at("status").get<std::string>();
    s.initial_loss = status.at("initial_loss").get<double>();
    s.final_loss = status.at("final_loss").get<double>();
    s.steps_run = status.at("steps_run").get<long>();
    s.last_tap_step = status.at("last_tap_step").get<long>();

    std::ifstream is(dir + "/metrics.jsonl");
    if (!is) throw std::runtime_error("cannot read metrics log in " + dir);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        s.records.push_back(MetricRecord::from_json(nlohmann::json::parse(line)));
    }

    // per-step aggregates over attn-input sites
    std::map<long, std::vector<const MetricRecord *>> by_step;
    for (const auto &r : s.records) {
        if (r.site == "attn-input") by_step[r.step].push_back(&r);
    }
    bool first = true;
    for (const auto &kv : by_step) {
        double ksum = 0.0, hsum = 0.0;
        std::size_t hcount = 0;
        for (const auto *r : kv.second) {
            ksum += r->kurtosis;
            s.peak_mean_offdiag = std::max(s.peak_mean_offdiag, r->sigprop_mean_offdiag);
            auto it = s.peak_kurtosis_by_layer.find(r->layer);
            if (it == s.peak_kurtosis_by_layer.end()) {
                s.peak_kurtosis_by_layer[r->layer] = r->kurtosis;
            } else {
                it->second = std::max(it->second, r->kurtosis);
            }
            if (r->attention_entropy >= 0.0) {
                hsum += r->attention_entropy;
                ++hcount;
            }
        }
        const double kmean = ksum / static_cast<double>(kv.second.size());
        s.peak_layer_mean_kurtosis = first ? kmean : std::max(s.peak_layer_mean_kurtosis, kmean);
        s.final_layer_mean_kurtosis = kmean;
        if (hcount > 0) {
            const double hmean = hsum / static_cast<double>(hcount);
            s.min_mean_entropy = first ? hmean : std::min(s.min_mean_entropy, hmean);
        }
        first = false;
    }

    // trained-model kurtosis: all sites at the last tapped step
    double ksum = 0.0;
    std::size_t kcount = 0;
    for (const auto &r : s.records) {
        if (r.step == s.last_tap_step) {
            ksum += r.kurtosis;
            ++kcount;
        }
    }
    if (kcount > 0) s.overall_mean_kurtosis = ksum / static_cast<double>(kcount);
    return s;
}

nlohmann::json CompareReport::to_json() const {
    nlohmann::json verdict_rows = nlohmann::json::array();
    for (const auto &v : verdicts) {
        verdict_rows.push_back(
            nlohmann::json{{"metric", v.metric}, {"a", v.a}, {"b", v.b}, {"verdict", v.verdict}});
    }
    return nlohmann::json{{"run_a", run_a},
                          {"run_b", run_b},
                          {"status_a", status_a},
                          {"status_b", status_b},
                          {"verdicts", verdict_rows}};
}

std::string CompareReport::text() const {
    std::string out;
    out += "A: " + run_a + " (" + status_a + ")\n";
    out += "B: " + run_b + " (" + status_b + ")\n";
    for (const auto &v : verdicts) {
        out += v.metric + ": " + v.verdict + "  (A=" + std::to_string(v.a) +
               ", B=" + std::to_string(v.b) + ")\n";
    }
    return out;
}

CompareReport compare_runs(const std::string &dir_a, const std::string &dir_b) {
    const RunSummary a = load_run_summary(dir_a);
    const RunSummary b = load_run_summary(dir_b);
    CompareReport rep;
    rep.run_a = dir_a;
    rep.run_b = dir_b;
    rep.status_a = a.status;
    rep.status_b = b.status;
    auto add = [&](const std::string &name, double va, double vb) {
        CompareVerdict v;
        v.metric = name;
        v.a = va;
        v.b = vb;
        v.verdict = va > vb ? "A > B" : (va < vb ? "A < B" : "tie");
        rep.verdicts.push_back(v);
    };
    add("peak_layer_mean_kurtosis", a.peak_layer_mean_kurtosis, b.peak_layer_mean_kurtosis);
    add("final_layer_mean_kurtosis", a.final_layer_mean_kurtosis, b.final_layer_mean_kurtosis);
    add("peak_mean_offdiag", a.peak_mean_offdiag, b.peak_mean_offdiag);
    add("min_mean_entropy", a.min_mean_entropy, b.min_mean_entropy);
    add("final_loss", a.final_loss, b.final_loss);
    return rep;
}

bool verify_run_metrics(const std::string &dir, double tol, std::string *error) {
    namespace fs = std::filesystem;
    const RunSummary s = load_run_summary(dir);
    if (s.last_tap_step < 0) return true;
    const std::string tap_dir = dir + "/taps/step-" + std::to_string(s.last_tap_step);
    if (!fs::exists(tap_dir)) {
        if (error) *error = "missing tap dump directory " + tap_dir;
        return false;
    }
    for (const auto &r : s.records) {
        if (r.step != s.last_tap_step) continue;
        const std::string base = tap_dir + "/layer-" + std::to_string(r.layer) + "-" + r.site;
        Tensor x = read_tensor(base + ".tens");
        std::vector<Tensor> attn;
        for (std::size_t h = 0;; ++h) {
            const std::string ap = base + "-attn-" + std::to_string(h) + ".tens";
            if (!fs::exists(ap)) break;
            attn.push_back(read_tensor(ap));
        }
        MetricRecord rec = compute_metrics(x, attn, r.step, r.layer, r.site);
        auto close = [&](double got, double want) {
            return std::fabs(got - want) <= tol * (1.0 + std::fabs(want));
        };
        const bool ok = close(rec.kurtosis, r.kurtosis) && close(rec.mmr, r.mmr) &&
                        close(rec.activation_rms, r.activation_rms) &&
                        close(rec.sigprop_mean_offdiag, r.sigprop_mean_offdiag) &&
                        close(rec.sigprop_rms_offdiag, r.sigprop_rms_offdiag) &&
                        close(rec.feature_corr_rms, r.feature_corr_rms) &&
                        close(rec.attention_entropy, r.attention_entropy);
        if (!ok) {
            if (error) {
                *error = "recomputed metrics disagree with the log at step " +
                         std::to_string(r.step) + ", layer " + std::to_string(r.layer) + ", " +
                         r.site;
            }
            return false;
        }
    }
    return true;
}

void export_metrics_csv(const std::string &run_dir, const std::string &out_path) {
    std::ifstream is(run_dir + "/metrics.jsonl");
    if (!is) throw std::runtime_error("cannot read metrics log in " + run_dir);
    std::ofstream os(out_path);
    if (!os) throw std::runtime_error("cannot write " + out_path);
    const auto header = MetricRecord::csv_header();
    for (std::size_t i = 0; i < header.size(); ++i) {
        os << header[i] << (i + 1 < header.size() ? "," : "\n");
    }
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        os << MetricRecord::from_json(nlohmann::json::parse(line)).csv_row() << "\n";
    }
}

double spearman(const std::vector<double> &a, const std::vector<double> &b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("spearman needs two equal-length series, n >= 2");
    }
    auto ranks = [](const std::vector<double> &v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

} // namespace olab
