#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mct/autograd.hpp"
#include "mct/rng.hpp"
#include "mct/tensor.hpp"

namespace mct {

// One trainable tensor: value + grad (in the Var) plus Adam moment buffers.
template <typename T>
struct ParamTensor {
  std::string name;
  VarPtr<T> var;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
};

// Insertion-ordered tree of named parameters and non-trainable buffers
// (batchnorm running statistics). Names are unique across both kinds.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  VarPtr<T> add_param(const std::string& name, Tensor<T> init) {
    check_new_name(name);
    auto p = std::make_unique<ParamTensor<T>>();
    p->name = name;
    p->var = make_leaf<T>(std::move(init), /*requires_grad=*/true);
    p->adam_m = Tensor<T>(p->var->value.shape());
    p->adam_v = Tensor<T>(p->var->value.shape());
    VarPtr<T> var = p->var;
    param_index_[name] = params_.size();
    params_.push_back(std::move(p));
    return var;
  }

  Tensor<T>& add_buffer(const std::string& name, Tensor<T> init) {
    check_new_name(name);
    auto b = std::make_unique<Buffer>();
    b->name = name;
    b->value = std::move(init);
    Tensor<T>& ref = b->value;
    buffer_index_[name] = buffers_.size();
    buffers_.push_back(std::move(b));
    return ref;
  }

  size_t param_count() const { return params_.size(); }
  size_t buffer_count() const { return buffers_.size(); }

  ParamTensor<T>& param(size_t i) { return *params_[i]; }
  const ParamTensor<T>& param(size_t i) const { return *params_[i]; }

  ParamTensor<T>* find_param(const std::string& name) {
    auto it = param_index_.find(name);
    return it == param_index_.end() ? nullptr : params_[it->second].get();
  }
  const ParamTensor<T>* find_param(const std::string& name) const {
    auto it = param_index_.find(name);
    return it == param_index_.end() ? nullptr : params_[it->second].get();
  }

  Tensor<T>* find_buffer(const std::string& name) {
    auto it = buffer_index_.find(name);
    return it == buffer_index_.end() ? nullptr : &buffers_[it->second]->value;
  }
  const Tensor<T>* find_buffer(const std::string& name) const {
    auto it = buffer_index_.find(name);
    return it == buffer_index_.end() ? nullptr : &buffers_[it->second]->value;
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    names.reserve(params_.size());
    for (const auto& p : params_) names.push_back(p->name);
    return names;
  }
  std::vector<std::string> buffer_names() const {
    std::vector<std::string> names;
    names.reserve(buffers_.size());
    for (const auto& b : buffers_) names.push_back(b->name);
    return names;
  }

  void zero_grad() {
    for (auto& p : params_) p->var->zero_grad();
  }

  int64_t total_param_elements() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->var->value.numel();
    return n;
  }

 private:
  struct Buffer {
    std::string name;
    Tensor<T> value;
  };

  void check_new_name(const std::string& name) const {
    if (param_index_.count(name) || buffer_index_.count(name)) {
      throw Error::config("duplicate parameter name: " + name);
    }
  }

  std::vector<std::unique_ptr<ParamTensor<T>>> params_;
  std::vector<std::unique_ptr<Buffer>> buffers_;
  std::unordered_map<std::string, size_t> param_index_;
  std::unordered_map<std::string, size_t> buffer_index_;
};

// Deterministic per-name initializer: the stream for a given (seed, name)
// pair never depends on registration order.
inline Rng init_rng(uint64_t seed, const std::string& name) {
  return Rng(hash_mix(seed, hash_str(name.c_str())));
}

template <typename T>
Tensor<T> normal_init(Shape shape, uint64_t seed, const std::string& name, double stddev) {
  Rng rng = init_rng(seed, name);
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<T>(rng.next_normal() * stddev);
  }
  return t;
}

}  // namespace mct
