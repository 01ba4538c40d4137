#include "olab/train.hpp"

#include "olab/metrics.hpp"
#include "olab/tensor_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace olab {

nlohmann::json RunConfig::to_json() const {
    return nlohmann::json{{"model", model.to_json()},
                          {"optimizer", optimizer.to_json()},
                          {"schedule", schedule.to_json()},
                          {"data", data.to_json()},
                          {"batch_size", batch_size},
                          {"sequence_length", sequence_length},
                          {"total_steps", total_steps},
                          {"tap_interval", tap_interval},
                          {"checkpoint_interval", checkpoint_interval},
                          {"clip_norm", clip_norm},
                          {"seed_model", seed_model},
                          {"seed_data", seed_data},
                          {"seed_aux", seed_aux},
                          {"out_dir", out_dir},
                          {"taps_enabled", taps_enabled},
                          {"dump_final_taps", dump_final_taps},
                          {"probe_enabled", probe_enabled},
                          {"probe_layer", probe_layer},
                          {"probe_site", probe_site}};
}

RunConfig RunConfig::from_json(const nlohmann::json &j) {
    RunConfig r;
    r.model = ModelConfig::from_json(j.at("model"));
    r.optimizer = OptimizerConfig::from_json(j.at("optimizer"));
    r.schedule = ScheduleSpec::from_json(j.at("schedule"));
    r.data = DatasetSpec::from_json(j.at("data"));
    r.batch_size = j.at("batch_size").get<int>();
    r.sequence_length = j.at("sequence_length").get<int>();
    r.total_steps = j.at("total_steps").get<long>();
    r.tap_interval = j.at("tap_interval").get<long>();
    r.checkpoint_interval = j.at("checkpoint_interval").get<long>();
    r.clip_norm = j.at("clip_norm").get<double>();
    r.seed_model = j.at("seed_model").get<std::uint64_t>();
    r.seed_data = j.at("seed_data").get<std::uint64_t>();
    r.seed_aux = j.at("seed_aux").get<std::uint64_t>();
    r.out_dir = j.at("out_dir").get<std::string>();
    r.taps_enabled = j.at("taps_enabled").get<bool>();
    r.dump_final_taps = j.at("dump_final_taps").get<bool>();
    r.probe_enabled = j.at("probe_enabled").get<bool>();
    r.probe_layer = j.at("probe_layer").get<int>();
    r.probe_site = j.at("probe_site").get<std::string>();
    return r;
}

RunConfig RunConfig::from_kv(const KvConfig &kv) {
    RunConfig r;
    ModelConfig &m = r.model;
    m.depth = static_cast<int>(kv.get_long("model.depth", m.depth));
    m.width = static_cast<int>(kv.get_long("model.width", m.width));
    m.heads = static_cast<int>(kv.get_long("model.heads", m.heads));
    m.vocab = static_cast<int>(kv.get_long("model.vocab", m.vocab));
    m.context = static_cast<int>(kv.get_long("model.context", m.context));
    m.block = block_kind_from_string(kv.get_string("model.block", to_string(m.block)));
    m.norm = norm_kind_from_string(kv.get_string("model.norm", to_string(m.norm)));
    m.mlp_only = kv.get_bool("model.mlp_only", m.mlp_only);
    m.entropy = entropy_reg_from_string(kv.get_string("model.entropy", to_string(m.entropy)));
    m.qk_norm_kind =
        norm_kind_from_string(kv.get_string("model.qk_norm_kind", to_string(m.qk_norm_kind)));
    m.qk_norm_trainable = kv.get_bool("model.qk_norm_trainable", m.qk_norm_trainable);
    m.max_attn_val = kv.get_double("model.max_attn_val", m.max_attn_val);
    m.clamp_cap = kv.get_double("model.clamp_cap", m.clamp_cap);
    m.residual =
        residual_scaling_from_string(kv.get_string("model.residual", to_string(m.residual)));
    m.residual_beta = kv.get_double("model.residual_beta", m.residual_beta);
    m.activation =
        mlp_activation_from_string(kv.get_string("model.activation", to_string(m.activation)));
    m.leaky_slope = kv.get_double("model.leaky_slope", m.leaky_slope);
    m.mlp_alpha = kv.get_double("model.mlp_alpha", m.mlp_alpha);
    m.mlp_alpha_auto = kv.get_bool("model.mlp_alpha_auto", m.mlp_alpha_auto);
    m.attn_shape_alpha = kv.get_double("model.attn_shape_alpha", m.attn_shape_alpha);
    m.attn_shape_beta = kv.get_double("model.attn_shape_beta", m.attn_shape_beta);
    m.final_norm = kv.get_bool("model.final_norm", m.final_norm);
    m.final_norm_kind = norm_kind_from_string(
        kv.get_string("model.final_norm_kind", to_string(m.final_norm_kind)));
    m.embed_scale = kv.get_double("model.embed_scale", m.embed_scale);
    m.tied_embeddings = kv.get_bool("model.tied_embeddings", m.tied_embeddings);
    m.init_std = kv.get_double("model.init_std", m.init_std);

    OptimizerConfig &o = r.optimizer;
    o.kind = optimizer_kind_from_string(kv.get_string("optimizer.kind", to_string(o.kind)));
    o.momentum = kv.get_double("optimizer.momentum", o.momentum);
    o.beta1 = kv.get_double("optimizer.beta1", o.beta1);
    o.beta2 = kv.get_double("optimizer.beta2", o.beta2);
    o.epsilon = kv.get_double("optimizer.epsilon", o.epsilon);
    o.weight_decay = kv.get_double("optimizer.weight_decay", o.weight_decay);
    o.shampoo_beta = kv.get_double("optimizer.shampoo_beta", o.shampoo_beta);
    o.shampoo_exponent = kv.get_double("optimizer.shampoo_exponent", o.shampoo_exponent);
    o.shampoo_update_freq =
        static_cast<int>(kv.get_long("optimizer.shampoo_update_freq", o.shampoo_update_freq));
    o.soap_precond_freq =
        static_cast<int>(kv.get_long("optimizer.soap_precond_freq", o.soap_precond_freq));
    o.max_rotate_dim = static_cast<std::size_t>(
        kv.get_long("optimizer.max_rotate_dim", static_cast<long>(o.max_rotate_dim)));
    o.soap_freeze_identity = kv.get_bool("optimizer.soap_freeze_identity", o.soap_freeze_identity);

    ScheduleSpec &s = r.schedule;
    s.kind = schedule_kind_from_string(kv.get_string("schedule.kind", to_string(s.kind)));
    s.max_lr = kv.get_double("schedule.max_lr", s.max_lr);
    s.warmup_fraction = kv.get_double("schedule.warmup_fraction", s.warmup_fraction);
    s.decay_fraction = kv.get_double("schedule.decay_fraction", s.decay_fraction);

    DatasetSpec &d = r.data;
    d.kind = dataset_kind_from_string(kv.get_string("data.kind", to_string(d.kind)));
    d.path = kv.get_string("data.path", d.path);
    d.states = static_cast<int>(kv.get_long("data.states", d.states));
    d.temperature = kv.get_double("data.temperature", d.temperature);
    d.vocab = static_cast<int>(kv.get_long("data.vocab", m.vocab));
    d.zipf = kv.get_double("data.zipf", d.zipf);
    d.length = kv.get_long("data.length", d.length);

    r.batch_size = static_cast<int>(kv.get_long("run.batch_size", r.batch_size));
    r.sequence_length = static_cast<int>(kv.get_long("run.sequence_length", r.sequence_length));
    r.total_steps = kv.get_long("run.total_steps", r.total_steps);
    r.tap_interval = kv.get_long("run.tap_interval", r.tap_interval);
    r.checkpoint_interval = kv.get_long("run.checkpoint_interval", r.checkpoint_interval);
    r.clip_norm = kv.get_double("run.clip_norm", r.clip_norm);
    r.seed_model = static_cast<std::uint64_t>(
        kv.get_long("run.seed_model", static_cast<long>(r.seed_model)));
    r.seed_data =
        static_cast<std::uint64_t>(kv.get_long("run.seed_data", static_cast<long>(r.seed_data)));
    r.seed_aux =
        static_cast<std::uint64_t>(kv.get_long("run.seed_aux", static_cast<long>(r.seed_aux)));
    r.out_dir = kv.get_string("run.out_dir", r.out_dir);
    r.taps_enabled = kv.get_bool("run.taps_enabled", r.taps_enabled);
    r.dump_final_taps = kv.get_bool("run.dump_final_taps", r.dump_final_taps);
    r.probe_enabled = kv.get_bool("run.probe_enabled", r.probe_enabled);
    r.probe_layer = static_cast<int>(kv.get_long("run.probe_layer", r.probe_layer));
    r.probe_site = kv.get_string("run.probe_site", r.probe_site);

    r.schedule.total_steps = r.total_steps;
    return r;
}

void RunConfig::validate() const {
    model.validate();
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
    if (tap_interval < 1) throw std::invalid_argument("tap_interval must be >= 1");
    if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be >= 0");
    if (out_dir.empty()) throw std::invalid_argument("out_dir must be set");
    const int seq = sequence_length == 0 ? model.context : sequence_length;
    if (seq < 1 || seq > model.context) {
        throw std::invalid_argument("sequence_length must lie in [1, context]");
    }
    if (data.kind == DatasetKind::SyntheticMarkov && data.vocab > model.vocab) {
        throw std::invalid_argument("dataset vocab exceeds model vocab");
    }
    if (schedule.total_steps != total_steps) {
        throw std::invalid_argument("schedule.total_steps must equal run total_steps");
    }
}

void sample_batch(const std::vector<int> &corpus, int batch, int seq_len, Rng &rng,
                  std::vector<std::vector<int>> &inputs, std::vector<std::vector<int>> &targets) {
    if (corpus.size() < static_cast<std::size_t>(seq_len) + 1) {
        throw std::invalid_argument("corpus shorter than one training window");
    }
    inputs.assign(static_cast<std::size_t>(batch), {});
    targets.assign(static_cast<std::size_t>(batch), {});
    const std::uint64_t span = corpus.size() - static_cast<std::size_t>(seq_len);
    for (int b = 0; b < batch; ++b) {
        const auto start = static_cast<std::size_t>(rng.uniform_int(span));
        auto &in = inputs[static_cast<std::size_t>(b)];
        auto &tg = targets[static_cast<std::size_t>(b)];
        in.assign(corpus.begin() + static_cast<long>(start),
                  corpus.begin() + static_cast<long>(start) + seq_len);
        tg.assign(corpus.begin() + static_cast<long>(start) + 1,
                  corpus.begin() + static_cast<long>(start) + seq_len + 1);
    }
}

namespace {

Tensor probe_tap(const Model &model, const std::vector<std::vector<int>> &inputs,
                 const std::vector<std::vector<int>> &targets, int layer, TapSite site) {
    std::vector<ActivationTap> taps;
    model.loss(inputs, targets, &taps);
    for (const auto &t : taps) {
        if (t.layer == layer && t.site == site) return t.x;
    }
    throw std::invalid_argument("probe tap not found at layer " + std::to_string(layer));
}

void dump_taps(const std::string &dir, const std::vector<ActivationTap> &taps) {
    std::filesystem::create_directories(dir);
    for (const auto &t : taps) {
        if (t.site == TapSite::MlpInput) continue;
        const std::string base =
            dir + "/layer-" + std::to_string(t.layer) + "-" + to_string(t.site);
        write_tensor(base + ".tens", t.x);
        for (std::size_t h = 0; h < t.attention.size(); ++h) {
            write_tensor(base + "-attn-" + std::to_string(h) + ".tens", t.attention[h]);
        }
    }
}

} // namespace

TrainResult train(const RunConfig &run) {
    namespace fs = std::filesystem;
    run.validate();
    fs::create_directories(run.out_dir);
    {
        std::ofstream mf(run.out_dir + "/manifest.json");
        if (!mf) throw std::runtime_error("cannot write manifest in " + run.out_dir);
        nlohmann::json manifest = run.to_json();
        manifest["format_version"] = 1;
        mf << manifest.dump(2) << "\n";
    }

    Rng model_rng(run.seed_model);
    Model model(run.model, model_rng);
    Rng data_rng(run.seed_data);
    const std::vector<int> corpus = load_corpus(run.data, data_rng);
    Rng batch_rng = data_rng.split(100);
    Rng eval_rng = data_rng.split(200);
    Rng probe_rng = data_rng.split(300);
    const int seq_len = run.sequence_length == 0 ? run.model.context : run.sequence_length;

    Optimizer opt(run.optimizer, model.params());

    std::ofstream metrics_out(run.out_dir + "/metrics.jsonl");
    std::ofstream loss_out(run.out_dir + "/loss.csv");
    if (!metrics_out || !loss_out) {
        throw std::runtime_error("cannot open log files in " + run.out_dir);
    }
    loss_out << "step,loss,lr\n";
    std::ofstream probe_out;
    std::vector<std::vector<int>> probe_in, probe_tg;
    Tensor probe_prev;
    TapSite probe_site = TapSite::AttnInput;
    if (run.probe_enabled) {
        probe_site = tap_site_from_string(run.probe_site);
        probe_out.open(run.out_dir + "/probe.jsonl");
        sample_batch(corpus, run.batch_size, seq_len, probe_rng, probe_in, probe_tg);
        probe_prev = probe_tap(model, probe_in, probe_tg, run.probe_layer, probe_site);
    }

    std::vector<std::vector<int>> eval_in, eval_tg;
    sample_batch(corpus, run.batch_size, seq_len, eval_rng, eval_in, eval_tg);
    const double initial_loss = model.loss(eval_in, eval_tg);

    TrainResult result;
    result.status = "ok";
    result.initial_loss = initial_loss;
    result.final_loss = initial_loss;
    result.run_dir = run.out_dir;

    const double divergence_bar = 10.0 * std::log(static_cast<double>(run.model.vocab));
    int high_loss_streak = 0;
    std::vector<ActivationTap> last_taps;
    long last_tap_step = -1;

    std::vector<std::vector<int>> inputs, targets;
    for (long s = 1; s <= run.total_steps; ++s) {
        sample_batch(corpus, run.batch_size, seq_len, batch_rng, inputs, targets);
        model.params().zero_grads();
        const bool tap_now =
            run.taps_enabled && (s % run.tap_interval == 0 || s == run.total_steps);
        std::vector<ActivationTap> taps;
        double loss = std::numeric_limits<double>::quiet_NaN();
        try {
            loss = model.loss_and_grad(inputs, targets, tap_now ? &taps : nullptr);
        } catch (const std::exception &e) {
            // a blown-up parameter state can poison the forward pass (overflowing
            // activations, NaN attention logits) before the loss itself goes
            // non-finite; record it as divergence with the message preserved
            result.divergence_detail = e.what();
        }
        const double lr = lr_at(run.schedule, s);
        loss_out << s << "," << loss << "," << lr << "\n";
        // keep the last finite loss so status.json stays valid JSON on blowup
        if (std::isfinite(loss)) result.final_loss = loss;
        result.steps_run = s;

        if (!std::isfinite(loss)) {
            result.status = "diverged";
            break;
        }
        high_loss_streak = loss > divergence_bar ? high_loss_streak + 1 : 0;
        if (high_loss_streak >= 50) {
            result.status = "diverged";
            break;
        }

        if (run.clip_norm > 0.0) clip_global_norm(model.params(), run.clip_norm);
        opt.step(model.params(), lr);

        if (tap_now) {
            for (const auto &t : taps) {
                if (t.site == TapSite::MlpInput) continue;
                MetricRecord rec =
                    compute_metrics(t.x, t.attention, s, t.layer, to_string(t.site));
                metrics_out << rec.to_json().dump() << "\n";
            }
            last_taps = std::move(taps);
            last_tap_step = s;
        }

        if (run.probe_enabled) {
            Tensor now = probe_tap(model, probe_in, probe_tg, run.probe_layer, probe_site);
            Tensor delta = now - probe_prev;
            MomentDecomposition dec = moment_update_decomposition(probe_prev, delta);
            nlohmann::json j{{"step", s},
                             {"u21", dec.u21},
                             {"u22", dec.u22},
                             {"u41", dec.u41},
                             {"u42", dec.u42},
                             {"u43", dec.u43},
                             {"u44", dec.u44},
                             {"m2_delta", dec.m2_delta},
                             {"m4_delta", dec.m4_delta},
                             {"m2_before", moment_m2(probe_prev)},
                             {"m4_before", moment_m4(probe_prev)},
                             {"m2_after", moment_m2(now)},
                             {"m4_after", moment_m4(now)}};
            probe_out << j.dump() << "\n";
            probe_prev = std::move(now);
        }

        if (run.checkpoint_interval > 0 && s % run.checkpoint_interval == 0 &&
            s != run.total_steps) {
            const std::string ckpt = run.out_dir + "/checkpoints/step-" + std::to_string(s);
            model.save_checkpoint(ckpt);
            opt.save(ckpt + "/optim");
        }
    }

    const std::string final_ckpt =
        run.out_dir + "/checkpoints/step-" + std::to_string(result.steps_run);
    model.save_checkpoint(final_ckpt);
    opt.save(final_ckpt + "/optim");

    if (run.dump_final_taps && !last_taps.empty()) {
        dump_taps(run.out_dir + "/taps/step-" + std::to_string(last_tap_step), last_taps);
    }

    {
        std::ofstream sf(run.out_dir + "/status.json");
        if (!sf) throw std::runtime_error("cannot write status in " + run.out_dir);
        nlohmann::json j{{"status", result.status},
                         {"initial_loss", result.initial_loss},
                         {"final_loss", result.final_loss},
                         {"steps_run", result.steps_run},
                         {"last_tap_step", last_tap_step}};
        if (!result.divergence_detail.empty()) j["divergence_detail"] = result.divergence_detail;
        sf << j.dump(2) << "\n";
    }
    return result;
}

} // namespace olab
