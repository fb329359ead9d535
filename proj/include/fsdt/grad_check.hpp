#ifndef FSDT_GRAD_CHECK_HPP_
#define FSDT_GRAD_CHECK_HPP_

#include <functional>
#include <string>
#include <vector>

#include "fsdt/autograd.hpp"

namespace fsdt {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]" of the worst scalar
  std::size_t checked = 0;
};

/// Builds the loss on a fresh graph from the current parameter values and
/// returns its scalar root.
using LossBuilder = std::function<Var(Graph&)>;

/// Compares reverse-mode gradients against central differences with step
/// `h` for every scalar of every listed parameter. The relative error of a
/// scalar is |a − n| / max(|a|, |n|, floor). Parameters are restored exactly.
GradCheckResult grad_check(const LossBuilder& loss, const std::vector<Parameter*>& params,
                           double h = 1e-5, double floor = 1e-6);

}  // namespace fsdt

#endif  // FSDT_GRAD_CHECK_HPP_
