#pragma once

#include "olab/param_store.hpp"
#include "olab/tensor.hpp"

#include <map>
#include <string>

#include "json.hpp"

namespace olab {

enum class OptimizerKind { Sgdm, AdamW, AdaFactor, Shampoo, Soap };
enum class ScheduleKind { LinearWarmupLinearDecay, Cosine, Wsd };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string &s);
std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string &s);

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::LinearWarmupLinearDecay;
    double max_lr = 1e-3;
    double warmup_fraction = 0.05;
    double decay_fraction = 0.2; // wsd only
    long total_steps = 1000;

    nlohmann::json to_json() const;
    static ScheduleSpec from_json(const nlohmann::json &j);
};

double lr_at(const ScheduleSpec &schedule, long step);

/// Scales every gradient by max_norm/g when the global L2 norm g exceeds
/// max_norm. Returns the scale applied (1 otherwise).
double clip_global_norm(ParameterStore &ps, double max_norm);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::AdamW;
    double momentum = 0.9;  // sgdm
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    // kronecker-factored preconditioning
    double shampoo_beta = 0.95;      // ema coefficient for L, R
    double shampoo_exponent = -0.5;  // combined power; each side gets half
    int shampoo_update_freq = 1;     // steps between fractional-power refreshes
    int soap_precond_freq = 10;      // steps between eigenbasis refreshes
    std::size_t max_rotate_dim = 1024; // larger axes keep the identity basis
    bool soap_freeze_identity = false; // never rotate (diagnostic mode)

    nlohmann::json to_json() const;
    static OptimizerConfig from_json(const nlohmann::json &j);
};

class Optimizer {
  public:
    Optimizer(OptimizerConfig config, const ParameterStore &ps);

    const OptimizerConfig &config() const { return cfg_; }
    long step_count() const { return t_; }

    /// One update from the gradients currently held in `ps`.
    void step(ParameterStore &ps, double lr);

    void save(const std::string &dir) const;
    void load(const std::string &dir, const ParameterStore &ps);

  private:
    struct ParamState {
        Tensor m, v;              // first / diagonal second moment
        Tensor fac_row, fac_col;  // adafactor accumulators
        Tensor big_l, big_r;      // kronecker factors
        Tensor pow_l, pow_r;      // cached fractional powers (shampoo)
        Tensor q_l, q_r;          // cached eigenbases (soap)
        bool factored = false;    // uses the matrix-shaped path
        bool rotate_rows = true, rotate_cols = true;
    };

    void step_adamw_like(const std::string &path, ParamState &st, Tensor &w, const Tensor &g,
                         double lr);
    void step_adafactor(ParamState &st, Tensor &w, const Tensor &g, double lr);
    void step_shampoo(const std::string &path, ParamState &st, Tensor &w, const Tensor &g,
                      double lr);
    void step_soap(const std::string &path, ParamState &st, Tensor &w, const Tensor &g,
                   double lr);

    OptimizerConfig cfg_;
    long t_ = 0;
    std::map<std::string, ParamState> state_;
};

} // namespace olab
