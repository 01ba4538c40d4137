// Command-line front end: train runs, post-hoc analysis, quantization
// reports, numeric oracles, and run comparisons.

#include "olab/analysis.hpp"
#include "olab/metrics.hpp"
#include "olab/model.hpp"
#include "olab/oracles.hpp"
#include "olab/quant_eval.hpp"
#include "olab/tensor_io.hpp"
#include "olab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace fs = std::filesystem;
using namespace olab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

int threads_from_env() {
    const char *env = std::getenv("OLAB_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    if (n < 1) throw std::runtime_error("OLAB_THREADS must be a positive integer");
    return n;
}

RunConfig run_config_from(const std::string &config_path,
                          const std::vector<std::string> &overrides) {
    KvConfig kv = KvConfig::parse_file(config_path);
    for (const auto &o : overrides) kv.set_override(o);
    return RunConfig::from_kv(kv);
}

std::string latest_checkpoint(const std::string &run_dir) {
    const std::string root = run_dir + "/checkpoints";
    if (!fs::exists(root)) throw std::invalid_argument("no checkpoints under " + run_dir);
    long best = -1;
    for (const auto &e : fs::directory_iterator(root)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("step-", 0) == 0) {
            best = std::max(best, std::stol(name.substr(5)));
        }
    }
    if (best < 0) throw std::invalid_argument("no checkpoints under " + run_dir);
    return root + "/step-" + std::to_string(best);
}

int cmd_train(const std::string &config_path, const std::vector<std::string> &overrides) {
    RunConfig run = run_config_from(config_path, overrides);
    const TrainResult res = train(run);
    std::cout << "run " << res.run_dir << "\nstatus " << res.status << "\nfinal_loss "
              << res.final_loss << "\n";
    return kExitOk;
}

int cmd_analyze(const std::string &input) {
    if (fs::is_directory(input)) {
        std::string err;
        if (!verify_run_metrics(input, 1e-9, &err)) {
            std::cerr << "analyze: " << err << "\n";
            return kExitFail;
        }
        const RunSummary s = load_run_summary(input);
        std::cout << "status " << s.status << "\nfinal_loss " << s.final_loss
                  << "\npeak_layer_mean_kurtosis " << s.peak_layer_mean_kurtosis
                  << "\nfinal_layer_mean_kurtosis " << s.final_layer_mean_kurtosis
                  << "\npeak_mean_offdiag " << s.peak_mean_offdiag << "\nmin_mean_entropy "
                  << s.min_mean_entropy << "\nrecomputation verified\n";
        return kExitOk;
    }
    const Tensor x = read_tensor(input);
    const MetricRecord rec = compute_metrics(x, {}, 0, 0, "dump");
    std::cout << rec.to_json().dump(2) << "\n";
    return kExitOk;
}

int cmd_quantize(const std::string &run_dir, int bits, int calib_seeds, int calib_batches) {
    const nlohmann::json manifest_json = [&] {
        std::ifstream is(run_dir + "/manifest.json");
        if (!is) throw std::invalid_argument("cannot read manifest in " + run_dir);
        return nlohmann::json::parse(is);
    }();
    RunConfig run = RunConfig::from_json(manifest_json);
    Model model = Model::load_checkpoint(latest_checkpoint(run_dir));

    Rng data_rng(run.seed_data);
    const std::vector<int> corpus = load_corpus(run.data, data_rng);
    const int seq_len = run.sequence_length == 0 ? run.model.context : run.sequence_length;

    Rng eval_rng = data_rng.split(200);
    std::vector<std::vector<int>> eval_in, eval_tg;
    for (int b = 0; b < 4; ++b) {
        std::vector<std::vector<int>> in, tg;
        sample_batch(corpus, run.batch_size, seq_len, eval_rng, in, tg);
        eval_in.insert(eval_in.end(), in.begin(), in.end());
        eval_tg.insert(eval_tg.end(), tg.begin(), tg.end());
    }

    std::vector<double> losses;
    QuantReport last;
    for (int s = 0; s < calib_seeds; ++s) {
        Rng calib_rng(run.seed_aux, 9000 + static_cast<std::uint64_t>(s));
        std::vector<std::vector<int>> cal_in, cal_tg;
        for (int b = 0; b < calib_batches; ++b) {
            std::vector<std::vector<int>> in, tg;
            sample_batch(corpus, run.batch_size, seq_len, calib_rng, in, tg);
            cal_in.insert(cal_in.end(), in.begin(), in.end());
            cal_tg.insert(cal_tg.end(), tg.begin(), tg.end());
        }
        last = quantized_eval(model, cal_in, cal_tg, eval_in, eval_tg, bits);
        losses.push_back(last.loss_w8a8);
    }
    double mean = 0.0;
    for (double v : losses) mean += v;
    mean /= static_cast<double>(losses.size());
    double var = 0.0;
    for (double v : losses) var += (v - mean) * (v - mean);
    const double stddev =
        losses.size() > 1 ? std::sqrt(var / static_cast<double>(losses.size() - 1)) : 0.0;

    nlohmann::json out = last.to_json();
    out["loss_w8a8_mean"] = mean;
    out["loss_w8a8_std"] = stddev;
    out["calibration_seeds"] = calib_seeds;
    out["calibration_batches"] = calib_batches;
    std::cout << out.dump(2) << "\n";
    std::ofstream of(run_dir + "/quant-report.json");
    of << out.dump(2) << "\n";
    return kExitOk;
}

int cmd_oracle(const std::string &which, double rho, std::size_t n, std::size_t d,
               std::size_t trials, std::uint64_t seed) {
    OracleReport rep;
    if (which == "gaussian-prop") {
        rep = oracle_gaussian_prop(rho, n, d, trials, seed);
    } else if (which == "trace-identity") {
        rep = oracle_trace_identity(static_cast<int>(trials), seed);
    } else if (which == "decomposition") {
        rep = oracle_decomposition(static_cast<int>(trials), seed);
    } else if (which == "gradcheck") {
        rep = oracle_gradcheck(seed);
    } else {
        throw std::invalid_argument("unknown oracle: '" + which + "'");
    }
    std::cout << which << ": " << (rep.pass ? "pass" : "FAIL") << "\n" << rep.text << "\n";
    return rep.pass ? kExitOk : kExitFail;
}

int cmd_compare(const std::string &dir_a, const std::string &dir_b) {
    const CompareReport rep = compare_runs(dir_a, dir_b);
    std::cout << rep.text();
    export_metrics_csv(dir_a, dir_a + "/metrics.csv");
    export_metrics_csv(dir_b, dir_b + "/metrics.csv");
    std::cout << "csv written to " << dir_a << "/metrics.csv and " << dir_b << "/metrics.csv\n";
    return kExitOk;
}

int cmd_matrix(const std::string &config_path, const std::vector<std::string> &overrides,
               const std::string &vary, int seeds, const std::string &out_root) {
    // vary looks like dotted.key=v1,v2,v3 (optional)
    std::vector<std::pair<std::string, std::string>> variants;
    if (vary.empty()) {
        variants.emplace_back("base", "");
    } else {
        const auto eq = vary.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("--vary must look like dotted.key=v1,v2,...");
        }
        const std::string key = vary.substr(0, eq);
        std::stringstream ss(vary.substr(eq + 1));
        std::string item;
        while (std::getline(ss, item, ',')) {
            variants.emplace_back(key + "-" + item, key + "=" + item);
        }
    }
    for (const auto &[label, assignment] : variants) {
        for (int s = 0; s < seeds; ++s) {
            std::vector<std::string> ov = overrides;
            if (!assignment.empty()) ov.push_back(assignment);
            ov.push_back("run.seed_model=" + std::to_string(1000 + s));
            ov.push_back("run.seed_data=" + std::to_string(2000 + s));
            ov.push_back("run.seed_aux=" + std::to_string(3000 + s));
            ov.push_back("run.out_dir=" + out_root + "/" + label + "/seed-" +
                         std::to_string(s));
            RunConfig run = run_config_from(config_path, ov);
            const TrainResult res = train(run);
            std::cout << res.run_dir << ": " << res.status << " final_loss " << res.final_loss
                      << "\n";
        }
    }
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"desk-scale transformer training laboratory"};
    app.require_subcommand(1);

    std::string config_path, input, run_a, run_b, oracle_name, vary, out_root = "runs/matrix";
    std::vector<std::string> overrides;
    int bits = 8, calib_seeds = 3, calib_batches = 8, seeds = 1;
    double rho = 0.5;
    std::size_t g_n = 64, g_d = 256, trials = 200;
    std::uint64_t seed = 1234;

    auto *train_cmd = app.add_subcommand("train", "run a training experiment");
    train_cmd->add_option("--config", config_path, "config file")->required();
    train_cmd->add_option("--set", overrides, "dotted.key=value override");

    auto *analyze_cmd = app.add_subcommand("analyze", "recompute metrics from a run or dump");
    analyze_cmd->add_option("input", input, "run directory or OLTENS1 file")->required();

    auto *quant_cmd = app.add_subcommand("quantize", "fit quantizers and report the loss gap");
    quant_cmd->add_option("--run", run_a, "run directory")->required();
    quant_cmd->add_option("--bits", bits, "quantizer bit width");
    quant_cmd->add_option("--calib-seeds", calib_seeds, "number of calibration seeds");
    quant_cmd->add_option("--calib-batches", calib_batches, "calibration batches per seed");

    auto *oracle_cmd = app.add_subcommand("oracle", "run a numeric oracle suite");
    oracle_cmd
        ->add_option("which", oracle_name,
                     "gaussian-prop | trace-identity | decomposition | gradcheck")
        ->required();
    oracle_cmd->add_option("--rho", rho, "feature correlation");
    oracle_cmd->add_option("--n", g_n, "rows");
    oracle_cmd->add_option("--d", g_d, "features");
    oracle_cmd->add_option("--trials", trials, "trial count");
    oracle_cmd->add_option("--seed", seed, "rng seed");

    auto *compare_cmd = app.add_subcommand("compare", "compare two finished runs");
    compare_cmd->add_option("run_a", run_a, "first run directory")->required();
    compare_cmd->add_option("run_b", run_b, "second run directory")->required();

    auto *matrix_cmd = app.add_subcommand("matrix", "run a seeded experiment matrix");
    matrix_cmd->add_option("--config", config_path, "base config file")->required();
    matrix_cmd->add_option("--set", overrides, "dotted.key=value override");
    matrix_cmd->add_option("--vary", vary, "dotted.key=v1,v2,... variant axis");
    matrix_cmd->add_option("--seeds", seeds, "seeds per variant");
    matrix_cmd->add_option("--out", out_root, "output root directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        threads_from_env();
        if (train_cmd->parsed()) return cmd_train(config_path, overrides);
        if (analyze_cmd->parsed()) return cmd_analyze(input);
        if (quant_cmd->parsed()) return cmd_quantize(run_a, bits, calib_seeds, calib_batches);
        if (oracle_cmd->parsed()) return cmd_oracle(oracle_name, rho, g_n, g_d, trials, seed);
        if (compare_cmd->parsed()) return cmd_compare(run_a, run_b);
        if (matrix_cmd->parsed())
            return cmd_matrix(config_path, overrides, vary, seeds, out_root);
    } catch (const std::invalid_argument &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFail;
    }
    return kExitUsage;
}
