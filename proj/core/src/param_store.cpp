#include "olab/param_store.hpp"

#include <stdexcept>

namespace olab {

void ParameterStore::add(const std::string &path, Tensor value) {
    if (params_.count(path) != 0) {
        throw std::invalid_argument("duplicate parameter path: " + path);
    }
    Tensor g(value.shape());
    g.zero();
    grads_.emplace(path, std::move(g));
    params_.emplace(path, std::move(value));
}

Tensor &ParameterStore::param(const std::string &path) {
    auto it = params_.find(path);
    if (it == params_.end()) {
        throw std::invalid_argument("unknown parameter path: " + path);
    }
    return it->second;
}

const Tensor &ParameterStore::param(const std::string &path) const {
    auto it = params_.find(path);
    if (it == params_.end()) {
        throw std::invalid_argument("unknown parameter path: " + path);
    }
    return it->second;
}

Tensor &ParameterStore::grad(const std::string &path) {
    auto it = grads_.find(path);
    if (it == grads_.end()) {
        throw std::invalid_argument("unknown parameter path: " + path);
    }
    return it->second;
}

const Tensor &ParameterStore::grad(const std::string &path) const {
    auto it = grads_.find(path);
    if (it == grads_.end()) {
        throw std::invalid_argument("unknown parameter path: " + path);
    }
    return it->second;
}

void ParameterStore::zero_grads() {
    for (auto &kv : grads_) {
        kv.second.zero();
    }
}

std::vector<std::string> ParameterStore::paths() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto &kv : params_) {
        out.push_back(kv.first);
    }
    return out;
}

} // namespace olab
