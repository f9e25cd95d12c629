#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "viewfuse/autodiff.hpp"
#include "viewfuse/rng.hpp"

namespace vf::nn {

// Zero-mean Gaussian with variance 2/fan_in; rank-1 shapes are treated as
// biases and come back zero. Fully determined by the seed.
Tensor he_init(const Shape& shape, std::uint64_t seed);
Tensor he_init(const Shape& shape, Rng& rng);

struct Parameter {
  std::string name;
  Var var;  // persistent leaf; grad accumulates until zero_grad
};

// Named trainable tensors in a fixed insertion order (checkpoints and the
// optimizer both rely on that order being stable).
class ParameterSet {
 public:
  Var add(const std::string& name, Tensor init);
  const Var& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  const std::vector<Parameter>& all() const { return params_; }

  void zero_grad();
  std::int64_t total_elements() const;

  // Deep value snapshot / restore, used for best-checkpoint selection.
  std::vector<Tensor> snapshot_values() const;
  void restore_values(const std::vector<Tensor>& values);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Standard bias-corrected update from the accumulated gradients.
  void step(ParameterSet& params);
  std::int64_t steps_taken() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  void reset();

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace vf::nn
