#include "viewfuse/params.hpp"

#include <cmath>

#include "viewfuse/errors.hpp"

namespace vf::nn {

Tensor he_init(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  return he_init(shape, rng);
}

Tensor he_init(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  if (shape.size() <= 1) return t;  // bias: zeros
  // fan_in = product of all extents except the output (first) one.
  std::int64_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.gaussian(0.0, sigma);
  return t;
}

Var ParameterSet::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw StateError("duplicate parameter name: " + name);
  Var v = leaf(std::move(init));
  index_[name] = params_.size();
  params_.push_back({name, v});
  return v;
}

const Var& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown parameter: " + name);
  return params_[it->second].var;
}

void ParameterSet::zero_grad() {
  for (Parameter& p : params_) {
    p.var->grad = Tensor::zeros(p.var->value.shape);
  }
}

std::int64_t ParameterSet::total_elements() const {
  std::int64_t n = 0;
  for (const Parameter& p : params_) n += p.var->value.numel();
  return n;
}

std::vector<Tensor> ParameterSet::snapshot_values() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const Parameter& p : params_) out.push_back(p.var->value);
  return out;
}

void ParameterSet::restore_values(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw StateError("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape != params_[i].var->value.shape)
      throw StateError("snapshot shape mismatch for " + params_[i].name);
    params_[i].var->value = values[i];
  }
}

void Adam::reset() {
  step_ = 0;
  m_.clear();
  v_.clear();
}

void Adam::step(ParameterSet& params) {
  if (m_.empty()) {
    for (const Parameter& p : params.all()) {
      m_.push_back(Tensor::zeros(p.var->value.shape));
      v_.push_back(Tensor::zeros(p.var->value.shape));
    }
  }
  if (m_.size() != params.size()) throw StateError("Adam state does not match parameter set");

  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params.all()[i];
    if (p.var->grad.data.empty())
      throw StateError("missing gradient for parameter " + p.name);
    Tensor& val = p.var->value;
    const Tensor& g = p.var->grad;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (int k = 0; k < val.numel(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      val[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace vf::nn
