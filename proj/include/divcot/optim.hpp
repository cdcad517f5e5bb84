#pragma once

#include "divcot/params.hpp"

namespace divcot {

/// SGD with momentum and L2 decay: v = m*v + g + wd*p; p -= lr*v; grads zeroed.
void sgd_update(ParamSet& params, double lr, double momentum, double weight_decay);

/// base * (1 - iter/total)^power.
double poly_lr(double base, long long iter, long long total, double power);

}  // namespace divcot
