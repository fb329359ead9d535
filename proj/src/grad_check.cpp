#include "fsdt/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace fsdt {

namespace {

double eval(const LossBuilder& loss) {
  Graph g;
  return g.value(loss(g)).item();
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, const std::vector<Parameter*>& params,
                           double h, double floor) {
  Graph g;
  g.backward(loss(g));
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) {
    const Tensor* gr = g.parameter_grad(*p);
    analytic.push_back(gr ? *gr : Tensor(p->value.shape()));
  }

  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double saved = p.value[j];
      p.value[j] = saved + h;
      const double up = eval(loss);
      p.value[j] = saved - h;
      const double down = eval(loss);
      p.value[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = p.name + "[" + std::to_string(j) + "]";
      }
    }
  }
  return result;
}

}  // namespace fsdt
