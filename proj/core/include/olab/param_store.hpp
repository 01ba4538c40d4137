#pragma once

#include "olab/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace olab {

/// Named trainable arrays plus a matching gradient per parameter.
/// Paths are unique and iterate in sorted order (std::map), which makes
/// checkpoint manifests and gradient reductions stable across runs.
class ParameterStore {
  public:
    void add(const std::string &path, Tensor value);
    bool has(const std::string &path) const { return params_.count(path) != 0; }

    Tensor &param(const std::string &path);
    const Tensor &param(const std::string &path) const;
    Tensor &grad(const std::string &path);
    const Tensor &grad(const std::string &path) const;

    void zero_grads();
    std::vector<std::string> paths() const;
    std::size_t count() const { return params_.size(); }

    std::map<std::string, Tensor> &params() { return params_; }
    const std::map<std::string, Tensor> &params() const { return params_; }
    std::map<std::string, Tensor> &grads() { return grads_; }
    const std::map<std::string, Tensor> &grads() const { return grads_; }

  private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> grads_;
};

} // namespace olab
