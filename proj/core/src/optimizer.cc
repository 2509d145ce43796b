#include "ansel/optimizer.h"

#include <cmath>
#include <string>
#include <vector>

#include "ansel/errors.h"

namespace ansel {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("Adam learning rate must be positive, got " +
                      std::to_string(learning_rate));
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

void adam_step(std::span<Parameter* const> params, const AdamConfig& config) {
  config.validate();
  for (Parameter* p : params) {
    p->step_count += 1;
    const double t = static_cast<double>(p->step_count);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    auto value = p->value.data();
    auto grad = p->gradient.data();
    auto m = p->adam_m.data();
    auto v = p->adam_v.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
    p->value.check_finite("adam_step");
    p->zero_grad();
  }
}

void adam_step(const NamedParameters& params, const AdamConfig& config) {
  std::vector<Parameter*> raw;
  raw.reserve(params.size());
  for (const auto& [name, p] : params) raw.push_back(p);
  adam_step(raw, config);
}

}  // namespace ansel
