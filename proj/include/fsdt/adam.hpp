#ifndef FSDT_ADAM_HPP_
#define FSDT_ADAM_HPP_

#include <cstdint>
#include <vector>

#include "fsdt/autograd.hpp"

namespace fsdt {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed, ordered list of parameters.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update. `grads[i]` belongs to `params[i]`; a null gradient counts as
  /// zero. Frozen parameters are skipped entirely, moments included. The step
  /// counter advances once per call.
  void step(const std::vector<Parameter*>& params, const std::vector<const Tensor*>& grads);

  /// Zeroes the moments and the step counter.
  void reset();

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::uint64_t steps() const { return t_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace fsdt

#endif  // FSDT_ADAM_HPP_
