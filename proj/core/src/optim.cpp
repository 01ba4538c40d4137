#include "olab/optim.hpp"

#include "olab/linalg.hpp"
#include "olab/ops.hpp"
#include "olab/tensor_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace olab {

namespace {

double bias_correction(double beta, long t) { return 1.0 - std::pow(beta, static_cast<double>(t)); }

void check_psd(const EigResult &eig, const std::string &path) {
    double mx = 1.0;
    for (std::size_t i = 0; i < eig.eigenvalues.size(); ++i) {
        mx = std::max(mx, std::fabs(eig.eigenvalues(i)));
    }
    for (std::size_t i = 0; i < eig.eigenvalues.size(); ++i) {
        if (eig.eigenvalues(i) < -1e-8 * mx) {
            throw std::runtime_error("non-PSD preconditioner accumulator for " + path);
        }
    }
}

} // namespace

std::string to_string(OptimizerKind k) {
    switch (k) {
    case OptimizerKind::Sgdm: return "sgdm";
    case OptimizerKind::AdamW: return "adamw";
    case OptimizerKind::AdaFactor: return "adafactor";
    case OptimizerKind::Shampoo: return "shampoo";
    case OptimizerKind::Soap: return "soap";
    }
    return "?";
}

OptimizerKind optimizer_kind_from_string(const std::string &s) {
    if (s == "sgdm") return OptimizerKind::Sgdm;
    if (s == "adamw") return OptimizerKind::AdamW;
    if (s == "adafactor") return OptimizerKind::AdaFactor;
    if (s == "shampoo") return OptimizerKind::Shampoo;
    if (s == "soap") return OptimizerKind::Soap;
    throw std::invalid_argument("unknown optimizer kind: '" + s + "'");
}

std::string to_string(ScheduleKind k) {
    switch (k) {
    case ScheduleKind::LinearWarmupLinearDecay: return "linear-warmup-linear-decay";
    case ScheduleKind::Cosine: return "cosine";
    case ScheduleKind::Wsd: return "wsd";
    }
    return "?";
}

ScheduleKind schedule_kind_from_string(const std::string &s) {
    if (s == "linear-warmup-linear-decay") return ScheduleKind::LinearWarmupLinearDecay;
    if (s == "cosine") return ScheduleKind::Cosine;
    if (s == "wsd") return ScheduleKind::Wsd;
    throw std::invalid_argument("unknown schedule kind: '" + s + "'");
}

nlohmann::json ScheduleSpec::to_json() const {
    return nlohmann::json{{"kind", to_string(kind)},
                          {"max_lr", max_lr},
                          {"warmup_fraction", warmup_fraction},
                          {"decay_fraction", decay_fraction},
                          {"total_steps", total_steps}};
}

ScheduleSpec ScheduleSpec::from_json(const nlohmann::json &j) {
    ScheduleSpec s;
    s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
    s.max_lr = j.at("max_lr").get<double>();
    s.warmup_fraction = j.at("warmup_fraction").get<double>();
    s.decay_fraction = j.at("decay_fraction").get<double>();
    s.total_steps = j.at("total_steps").get<long>();
    return s;
}

double lr_at(const ScheduleSpec &schedule, long step) {
    const long total = schedule.total_steps;
    if (step < 0 || step > total) {
        throw std::invalid_argument("schedule step out of range");
    }
    if (total == 0) return 0.0;
    if (schedule.warmup_fraction < 0.0 || schedule.warmup_fraction > 1.0 ||
        schedule.decay_fraction < 0.0 ||
        schedule.warmup_fraction + schedule.decay_fraction > 1.0) {
        throw std::invalid_argument("schedule fractions out of range");
    }
    const double eta = schedule.max_lr;
    const long ws = std::lround(schedule.warmup_fraction * static_cast<double>(total));
    if (step <= ws && ws > 0) {
        return eta * static_cast<double>(step) / static_cast<double>(ws);
    }
    switch (schedule.kind) {
    case ScheduleKind::LinearWarmupLinearDecay: {
        if (total == ws) return eta;
        return eta * static_cast<double>(total - step) / static_cast<double>(total - ws);
    }
    case ScheduleKind::Cosine: {
        if (total == ws) return eta;
        const double x = static_cast<double>(step - ws) / static_cast<double>(total - ws);
        return eta * 0.5 * (1.0 + std::cos(std::acos(-1.0) * x));
    }
    case ScheduleKind::Wsd: {
        const long ds = std::lround(schedule.decay_fraction * static_cast<double>(total));
        const long stable_end = total - ds;
        if (step <= stable_end || ds == 0) return eta;
        return eta * static_cast<double>(total - step) / static_cast<double>(ds);
    }
    }
    return eta;
}

double clip_global_norm(ParameterStore &ps, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("max_norm must be positive");
    double sq = 0.0;
    for (const auto &kv : ps.grads()) {
        const Tensor &g = kv.second;
        for (std::size_t i = 0; i < g.size(); ++i) sq += g(i) * g(i);
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return 1.0;
    const double scale = max_norm / norm;
    for (auto &kv : ps.grads()) kv.second *= scale;
    return scale;
}

nlohmann::json OptimizerConfig::to_json() const {
    return nlohmann::json{{"kind", to_string(kind)},
                          {"momentum", momentum},
                          {"beta1", beta1},
                          {"beta2", beta2},
                          {"epsilon", epsilon},
                          {"weight_decay", weight_decay},
                          {"shampoo_beta", shampoo_beta},
                          {"shampoo_exponent", shampoo_exponent},
                          {"shampoo_update_freq", shampoo_update_freq},
                          {"soap_precond_freq", soap_precond_freq},
                          {"max_rotate_dim", max_rotate_dim},
                          {"soap_freeze_identity", soap_freeze_identity}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json &j) {
    OptimizerConfig c;
    c.kind = optimizer_kind_from_string(j.at("kind").get<std::string>());
    c.momentum = j.at("momentum").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.shampoo_beta = j.at("shampoo_beta").get<double>();
    c.shampoo_exponent = j.at("shampoo_exponent").get<double>();
    c.shampoo_update_freq = j.at("shampoo_update_freq").get<int>();
    c.soap_precond_freq = j.at("soap_precond_freq").get<int>();
    c.max_rotate_dim = j.at("max_rotate_dim").get<std::size_t>();
    c.soap_freeze_identity = j.at("soap_freeze_identity").get<bool>();
    return c;
}

Optimizer::Optimizer(OptimizerConfig config, const ParameterStore &ps) : cfg_(std::move(config)) {
    if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
        throw std::invalid_argument("beta coefficients must lie in [0, 1)");
    }
    if (cfg_.epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
    for (const auto &path : ps.paths()) {
        const Tensor &w = ps.param(path);
        ParamState st;
        const bool matrix = w.rank() == 2;
        const bool wants_factors = cfg_.kind == OptimizerKind::AdaFactor ||
                                   cfg_.kind == OptimizerKind::Shampoo ||
                                   cfg_.kind == OptimizerKind::Soap;
        st.factored = matrix && wants_factors;
        if (cfg_.kind != OptimizerKind::Sgdm || cfg_.momentum != 0.0) {
            st.m = Tensor(w.shape());
            st.m.zero();
        }
        if (st.factored) {
            if (cfg_.kind == OptimizerKind::AdaFactor) {
                st.fac_row = Tensor(w.rows());
                st.fac_row.zero();
                st.fac_col = Tensor(w.cols());
                st.fac_col.zero();
            } else {
                st.rotate_rows = w.rows() <= cfg_.max_rotate_dim;
                st.rotate_cols = w.cols() <= cfg_.max_rotate_dim;
                if (st.rotate_rows) {
                    st.big_l = Tensor(w.rows(), w.rows());
                    st.big_l.zero();
                }
                if (st.rotate_cols) {
                    st.big_r = Tensor(w.cols(), w.cols());
                    st.big_r.zero();
                }
                if (cfg_.kind == OptimizerKind::Soap) {
                    st.v = Tensor(w.shape());
                    st.v.zero();
                }
            }
        }
        if (!st.factored && cfg_.kind != OptimizerKind::Sgdm) {
            st.v = Tensor(w.shape());
            st.v.zero();
        }
        state_.emplace(path, std::move(st));
    }
}

void Optimizer::step_adamw_like(const std::string &, ParamState &st, Tensor &w, const Tensor &g,
                                double lr) {
    const double bc1 = bias_correction(cfg_.beta1, t_);
    const double bc2 = bias_correction(cfg_.beta2, t_);
    for (std::size_t i = 0; i < w.size(); ++i) {
        st.m(i) = cfg_.beta1 * st.m(i) + (1.0 - cfg_.beta1) * g(i);
        st.v(i) = cfg_.beta2 * st.v(i) + (1.0 - cfg_.beta2) * g(i) * g(i);
        const double mhat = st.m(i) / bc1;
        const double vhat = st.v(i) / bc2;
        w(i) -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
}

void Optimizer::step_adafactor(ParamState &st, Tensor &w, const Tensor &g, double lr) {
    const std::size_t rows = w.rows(), cols = w.cols();
    const double bc1 = bias_correction(cfg_.beta1, t_);
    const double bc2 = bias_correction(cfg_.beta2, t_);
    std::vector<double> rsum(rows, 0.0), csum(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const double g2 = g(i, j) * g(i, j);
            rsum[i] += g2;
            csum[j] += g2;
        }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        st.fac_row(i) = cfg_.beta2 * st.fac_row(i) + (1.0 - cfg_.beta2) * rsum[i];
        total += st.fac_row(i);
    }
    for (std::size_t j = 0; j < cols; ++j) {
        st.fac_col(j) = cfg_.beta2 * st.fac_col(j) + (1.0 - cfg_.beta2) * csum[j];
    }
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            st.m(i, j) = cfg_.beta1 * st.m(i, j) + (1.0 - cfg_.beta1) * g(i, j);
            const double mhat = st.m(i, j) / bc1;
            const double vprime = total > 0.0 ? st.fac_row(i) * st.fac_col(j) / total : 0.0;
            const double vhat = vprime / bc2;
            w(i, j) -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }
}

void Optimizer::step_shampoo(const std::string &path, ParamState &st, Tensor &w, const Tensor &g,
                             double lr) {
    const double beta = cfg_.shampoo_beta;
    if (st.rotate_rows) {
        Tensor ggt = matmul_nt(g, g);
        for (std::size_t i = 0; i < st.big_l.size(); ++i)
            st.big_l(i) = beta * st.big_l(i) + (1.0 - beta) * ggt(i);
    }
    if (st.rotate_cols) {
        Tensor gtg = matmul_tn(g, g);
        for (std::size_t i = 0; i < st.big_r.size(); ++i)
            st.big_r(i) = beta * st.big_r(i) + (1.0 - beta) * gtg(i);
    }
    const double bc1 = bias_correction(cfg_.beta1, t_);
    for (std::size_t i = 0; i < st.m.size(); ++i)
        st.m(i) = cfg_.beta1 * st.m(i) + (1.0 - cfg_.beta1) * g(i);

    if ((t_ - 1) % cfg_.shampoo_update_freq == 0) {
        const double side_power = cfg_.shampoo_exponent / 2.0;
        if (st.rotate_rows) {
            EigResult eig = sym_eig(st.big_l);
            check_psd(eig, path);
            st.pow_l = sym_power_from_eig(eig, side_power, cfg_.epsilon);
        }
        if (st.rotate_cols) {
            EigResult eig = sym_eig(st.big_r);
            check_psd(eig, path);
            st.pow_r = sym_power_from_eig(eig, side_power, cfg_.epsilon);
        }
    }
    Tensor mhat = st.m;
    mhat *= 1.0 / bc1;
    Tensor upd = st.rotate_rows ? matmul(st.pow_l, mhat) : mhat;
    if (st.rotate_cols) upd = matmul(upd, st.pow_r);
    upd *= lr;
    w -= upd;
}

void Optimizer::step_soap(const std::string &path, ParamState &st, Tensor &w, const Tensor &g,
                          double lr) {
    const double beta = cfg_.shampoo_beta;
    if (!cfg_.soap_freeze_identity) {
        if (st.rotate_rows) {
            Tensor ggt = matmul_nt(g, g);
            for (std::size_t i = 0; i < st.big_l.size(); ++i)
                st.big_l(i) = beta * st.big_l(i) + (1.0 - beta) * ggt(i);
        }
        if (st.rotate_cols) {
            Tensor gtg = matmul_tn(g, g);
            for (std::size_t i = 0; i < st.big_r.size(); ++i)
                st.big_r(i) = beta * st.big_r(i) + (1.0 - beta) * gtg(i);
        }
        if ((t_ - 1) % cfg_.soap_precond_freq == 0) {
            if (st.rotate_rows) {
                EigResult eig = sym_eig(st.big_l);
                check_psd(eig, path);
                st.q_l = eig.eigenvectors;
            }
            if (st.rotate_cols) {
                EigResult eig = sym_eig(st.big_r);
                check_psd(eig, path);
                st.q_r = eig.eigenvectors;
            }
        }
    }
    const bool rot_l = !st.q_l.empty();
    const bool rot_r = !st.q_r.empty();

    // first moment lives in the original space; rotated at use
    for (std::size_t i = 0; i < st.m.size(); ++i)
        st.m(i) = cfg_.beta1 * st.m(i) + (1.0 - cfg_.beta1) * g(i);

    Tensor g_rot = rot_l ? matmul_tn(st.q_l, g) : g;
    if (rot_r) g_rot = matmul(g_rot, st.q_r);
    Tensor m_rot = rot_l ? matmul_tn(st.q_l, st.m) : st.m;
    if (rot_r) m_rot = matmul(m_rot, st.q_r);

    const double bc1 = bias_correction(cfg_.beta1, t_);
    const double bc2 = bias_correction(cfg_.beta2, t_);
    Tensor upd(w.shape());
    for (std::size_t i = 0; i < w.size(); ++i) {
        st.v(i) = cfg_.beta2 * st.v(i) + (1.0 - cfg_.beta2) * g_rot(i) * g_rot(i);
        const double mhat = m_rot(i) / bc1;
        const double vhat = st.v(i) / bc2;
        upd(i) = mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
    Tensor back = rot_l ? matmul(st.q_l, upd) : upd;
    if (rot_r) back = matmul_nt(back, st.q_r);
    back *= lr;
    w -= back;
}

void Optimizer::step(ParameterStore &ps, double lr) {
    ++t_;
    for (auto &kv : ps.params()) {
        const std::string &path = kv.first;
        Tensor &w = kv.second;
        const Tensor &g = ps.grad(path);
        ParamState &st = state_.at(path);

        if (cfg_.weight_decay != 0.0 && cfg_.kind != OptimizerKind::Sgdm) {
            w *= 1.0 - lr * cfg_.weight_decay;
        }

        switch (cfg_.kind) {
        case OptimizerKind::Sgdm: {
            if (cfg_.momentum != 0.0) {
                for (std::size_t i = 0; i < w.size(); ++i) {
                    st.m(i) = cfg_.momentum * st.m(i) + g(i);
                    w(i) -= lr * st.m(i);
                }
            } else {
                for (std::size_t i = 0; i < w.size(); ++i) w(i) -= lr * g(i);
            }
            break;
        }
        case OptimizerKind::AdamW: step_adamw_like(path, st, w, g, lr); break;
        case OptimizerKind::AdaFactor:
            if (st.factored) {
                step_adafactor(st, w, g, lr);
            } else {
                step_adamw_like(path, st, w, g, lr);
            }
            break;
        case OptimizerKind::Shampoo:
            if (st.factored) {
                step_shampoo(path, st, w, g, lr);
            } else {
                step_adamw_like(path, st, w, g, lr);
            }
            break;
        case OptimizerKind::Soap:
            if (st.factored) {
                step_soap(path, st, w, g, lr);
            } else {
                step_adamw_like(path, st, w, g, lr);
            }
            break;
        }
    }
}

void Optimizer::save(const std::string &dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json j;
    j["config"] = cfg_.to_json();
    j["t"] = t_;
    nlohmann::json params = nlohmann::json::object();
    for (const auto &kv : state_) {
        const ParamState &st = kv.second;
        nlohmann::json slots = nlohmann::json::array();
        auto dump = [&](const char *name, const Tensor &t) {
            if (t.empty()) return;
            slots.push_back(name);
            write_tensor(dir + "/" + kv.first + "." + name + ".tens", t);
        };
        dump("m", st.m);
        dump("v", st.v);
        dump("fac_row", st.fac_row);
        dump("fac_col", st.fac_col);
        dump("L", st.big_l);
        dump("R", st.big_r);
        dump("powL", st.pow_l);
        dump("powR", st.pow_r);
        dump("qL", st.q_l);
        dump("qR", st.q_r);
        params[kv.first] = slots;
    }
    j["params"] = params;
    std::ofstream os(dir + "/state.json");
    if (!os) throw std::runtime_error("cannot write optimizer state in " + dir);
    os << j.dump(2) << "\n";
}

void Optimizer::load(const std::string &dir, const ParameterStore &ps) {
    std::ifstream is(dir + "/state.json");
    if (!is) throw std::runtime_error("cannot read optimizer state in " + dir);
    nlohmann::json j = nlohmann::json::parse(is);
    cfg_ = OptimizerConfig::from_json(j.at("config"));
    *this = Optimizer(cfg_, ps);
    t_ = j.at("t").get<long>();
    for (auto &kv : state_) {
        const auto &slots = j.at("params").at(kv.first);
        for (const auto &s : slots) {
            const std::string name = s.get<std::string>();
            Tensor t = read_tensor(dir + "/" + kv.first + "." + name + ".tens");
            ParamState &st = kv.second;
            if (name == "m") st.m = std::move(t);
            else if (name == "v") st.v = std::move(t);
            else if (name == "fac_row") st.fac_row = std::move(t);
            else if (name == "fac_col") st.fac_col = std::move(t);
            else if (name == "L") st.big_l = std::move(t);
            else if (name == "R") st.big_r = std::move(t);
            else if (name == "powL") st.pow_l = std::move(t);
            else if (name == "powR") st.pow_r = std::move(t);
            else if (name == "qL") st.q_l = std::move(t);
            else if (name == "qR") st.q_r = std::move(t);
            else throw std::runtime_error("unknown optimizer state slot: " + name);
        }
    }
}

} // namespace olab
