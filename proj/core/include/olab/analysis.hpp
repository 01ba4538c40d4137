#pragma once

#include "olab/metrics.hpp"

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace olab {

/// Everything worth comparing about one finished run.
struct RunSummary {
    std::string dir;
    std::string status;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    long steps_run = 0;
    long last_tap_step = -1;
    std::vector<MetricRecord> records;

    // derived, attn-input sites only unless noted
    double peak_layer_mean_kurtosis = 0.0; // max over steps of mean over layers
    double final_layer_mean_kurtosis = 0.0;
    double peak_mean_offdiag = 0.0;
    double min_mean_entropy = 0.0; // min over steps of mean over layers
    std::map<int, double> peak_kurtosis_by_layer;
    // mean over layers and tapped steps, includes unembed-input (used for
    // the quantization association)
    double overall_mean_kurtosis = 0.0;
};

RunSummary load_run_summary(const std::string &dir);

struct CompareVerdict {
    std::string metric;
    double a = 0.0;
    double b = 0.0;
    std::string verdict; // "A > B", "A < B" or "tie"
};

struct CompareReport {
    std::string run_a, run_b;
    std::string status_a, status_b;
    std::vector<CompareVerdict> verdicts;

    nlohmann::json to_json() const;
    std::string text() const;
};

CompareReport compare_runs(const std::string &dir_a, const std::string &dir_b);

/// Recomputes metrics from the run's final tap dumps and checks them against
/// the logged rows within `tol`. Returns true when everything matches;
/// otherwise fills `error`.
bool verify_run_metrics(const std::string &dir, double tol, std::string *error);

/// Writes metrics.jsonl as CSV with identical columns.
void export_metrics_csv(const std::string &run_dir, const std::string &out_path);

/// Spearman rank correlation (average-rank ties).
double spearman(const std::vector<double> &a, const std::vector<double> &b);

} // namespace olab
