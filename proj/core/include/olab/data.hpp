#pragma once

#include "olab/rng.hpp"

#include <string>
#include <vector>

#include "json.hpp"

namespace olab {

enum class DatasetKind { FileBytes, SyntheticMarkov };

std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string &s);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::SyntheticMarkov;
    std::string path; // file-bytes
    int states = 8;
    double temperature = 0.4;
    int vocab = 64;
    double zipf = 1.0;
    long length = 65536; // synthetic stream length

    nlohmann::json to_json() const;
    static DatasetSpec from_json(const nlohmann::json &j);
};

/// Reads a file as raw bytes, one token per byte (vocab 256).
std::vector<int> tokenize_bytes(const std::string &path);

/// Hidden Markov stream: `states` states cycling with softmax temperature,
/// each emitting from its own Zipf-tilted distribution over `vocab` tokens.
/// temperature 0 gives the deterministic cycle limit.
std::vector<int> synth_corpus(const DatasetSpec &spec, Rng &rng, long length);

/// Materializes the spec (file or synthetic) into a token stream.
std::vector<int> load_corpus(const DatasetSpec &spec, Rng &rng);

} // namespace olab
