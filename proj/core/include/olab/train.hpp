#pragma once

#include "olab/data.hpp"
#include "olab/kvconfig.hpp"
#include "olab/model.hpp"
#include "olab/optim.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace olab {

struct RunConfig {
    ModelConfig model;
    OptimizerConfig optimizer;
    ScheduleSpec schedule;
    DatasetSpec data;
    int batch_size = 32;
    int sequence_length = 0; // 0 means model.context
    long total_steps = 1000;
    long tap_interval = 25;
    long checkpoint_interval = 0; // 0 means final checkpoint only
    double clip_norm = 1.0;       // 0 disables clipping
    std::uint64_t seed_model = 1;
    std::uint64_t seed_data = 2;
    std::uint64_t seed_aux = 3;
    std::string out_dir;
    bool taps_enabled = true;
    bool dump_final_taps = true;
    // per-step moment-update probing on a fixed batch (wants beta1 = 0)
    bool probe_enabled = false;
    int probe_layer = 0;
    std::string probe_site = "attn-input";

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json &j);
    /// Builds a RunConfig from flat TOML-style keys (model.*, optimizer.*,
    /// schedule.*, data.*, run.*) on top of the defaults.
    static RunConfig from_kv(const KvConfig &kv);
    void validate() const;
};

struct TrainResult {
    std::string status; // "ok" or "diverged"
    double initial_loss = 0.0;
    double final_loss = 0.0;
    long steps_run = 0;
    std::string run_dir;
    std::string divergence_detail; // exception text if the forward pass blew up
};

/// Runs the full training loop and persists manifest.json, metrics.jsonl,
/// loss.csv, status.json, checkpoints/ and taps/ under run.out_dir.
TrainResult train(const RunConfig &run);

/// Draws a deterministic batch of (input, target) windows from a corpus.
void sample_batch(const std::vector<int> &corpus, int batch, int seq_len, Rng &rng,
                  std::vector<std::vector<int>> &inputs, std::vector<std::vector<int>> &targets);

} // namespace olab
