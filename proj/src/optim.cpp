#include "divcot/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace divcot {

void sgd_update(ParamSet& params, double lr, double momentum, double weight_decay) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = params.grad(i);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (!std::isfinite(g[k])) throw NonFiniteError("non-finite gradient in parameter " + params.name(i));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.value(i);
    Tensor& v = params.velocity(i);
    Tensor& g = params.grad(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum * v[k] + g[k] + weight_decay * p[k];
      p[k] -= lr * v[k];
      g[k] = 0.0;
    }
  }
  params.advance_step();
}

double poly_lr(double base, long long iter, long long total, double power) {
  if (total <= 0) throw std::invalid_argument("poly_lr: total must be positive");
  if (iter < 0 || iter > total)
    throw std::invalid_argument("poly_lr: iter " + std::to_string(iter) + " outside [0, " + std::to_string(total) + "]");
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), power);
}

}  // namespace divcot
