#ifndef ANSEL_OPTIMIZER_H_
#define ANSEL_OPTIMIZER_H_

#include <span>

#include "ansel/autograd.h"

namespace ansel {

// Adam hyperparameters. The moment and epsilon defaults are the usual
// published ones; only the learning rate is normally changed.
struct AdamConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// One bias-corrected Adam update per parameter, then zeroes the gradients
// and advances each parameter's step count.
void adam_step(std::span<Parameter* const> params, const AdamConfig& config);
void adam_step(const NamedParameters& params, const AdamConfig& config);

}  // namespace ansel

#endif  // ANSEL_OPTIMIZER_H_
