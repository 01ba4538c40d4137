#include "olab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace olab {

std::string to_string(DatasetKind k) {
    return k == DatasetKind::FileBytes ? "file-bytes" : "synthetic-markov";
}

DatasetKind dataset_kind_from_string(const std::string &s) {
    if (s == "file-bytes") return DatasetKind::FileBytes;
    if (s == "synthetic-markov") return DatasetKind::SyntheticMarkov;
    throw std::invalid_argument("unknown dataset kind: '" + s + "'");
}

nlohmann::json DatasetSpec::to_json() const {
    return nlohmann::json{{"kind", to_string(kind)},       {"path", path},
                          {"states", states},              {"temperature", temperature},
                          {"vocab", vocab},                {"zipf", zipf},
                          {"length", length}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json &j) {
    DatasetSpec s;
    s.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
    s.path = j.at("path").get<std::string>();
    s.states = j.at("states").get<int>();
    s.temperature = j.at("temperature").get<double>();
    s.vocab = j.at("vocab").get<int>();
    s.zipf = j.at("zipf").get<double>();
    s.length = j.at("length").get<long>();
    return s;
}

std::vector<int> tokenize_bytes(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read corpus file: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
    if (bytes.empty()) throw std::runtime_error("empty corpus file: " + path);
    std::vector<int> tokens(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        tokens[i] = static_cast<int>(static_cast<unsigned char>(bytes[i]));
    }
    return tokens;
}

namespace {

std::size_t sample_categorical(const std::vector<double> &probs, Rng &rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return probs.size() - 1;
}

std::vector<double> softmax_logits(const std::vector<double> &logits, double temperature) {
    std::vector<double> p(logits.size());
    if (temperature <= 0.0) {
        const auto best =
            std::distance(logits.begin(), std::max_element(logits.begin(), logits.end()));
        std::fill(p.begin(), p.end(), 0.0);
        p[static_cast<std::size_t>(best)] = 1.0;
        return p;
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - mx) / temperature);
        z += p[i];
    }
    for (double &v : p) v /= z;
    return p;
}

} // namespace

std::vector<int> synth_corpus(const DatasetSpec &spec, Rng &rng, long length) {
    if (spec.vocab < 2) throw std::invalid_argument("synthetic corpus needs vocab >= 2");
    if (spec.states < 1) throw std::invalid_argument("synthetic corpus needs >= 1 state");
    if (length < 1) throw std::invalid_argument("corpus length must be positive");
    const auto s_count = static_cast<std::size_t>(spec.states);
    const auto v_count = static_cast<std::size_t>(spec.vocab);

    Rng perm_rng = rng.split(1);
    Rng walk_rng = rng.split(2);

    // per-state emission tables with a random rank permutation of the vocab
    std::vector<std::vector<double>> emit(s_count);
    for (std::size_t s = 0; s < s_count; ++s) {
        std::vector<std::size_t> rank(v_count);
        std::iota(rank.begin(), rank.end(), 0);
        for (std::size_t i = v_count - 1; i > 0; --i) {
            const std::size_t j = perm_rng.uniform_int(i + 1);
            std::swap(rank[i], rank[j]);
        }
        std::vector<double> logits(v_count);
        for (std::size_t v = 0; v < v_count; ++v) {
            logits[v] = -spec.zipf * std::log(1.0 + static_cast<double>(rank[v]));
        }
        emit[s] = softmax_logits(logits, spec.temperature);
    }
    // cyclic transition: logit 1 toward the next state, 0 elsewhere
    std::vector<std::vector<double>> trans(s_count);
    for (std::size_t s = 0; s < s_count; ++s) {
        std::vector<double> logits(s_count, 0.0);
        logits[(s + 1) % s_count] = 1.0;
        trans[s] = softmax_logits(logits, spec.temperature);
    }

    std::vector<int> out(static_cast<std::size_t>(length));
    std::size_t state = 0;
    for (long i = 0; i < length; ++i) {
        out[static_cast<std::size_t>(i)] = static_cast<int>(sample_categorical(emit[state], walk_rng));
        state = s_count == 1 ? 0 : sample_categorical(trans[state], walk_rng);
    }
    return out;
}

std::vector<int> load_corpus(const DatasetSpec &spec, Rng &rng) {
    if (spec.kind == DatasetKind::FileBytes) return tokenize_bytes(spec.path);
    return synth_corpus(spec, rng, spec.length);
}

} // namespace olab
