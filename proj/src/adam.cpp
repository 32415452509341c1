#include "sesf/adam.hpp"

#include <cmath>

namespace sesf {

AdamState::AdamState(double lr, std::vector<std::pair<int, double>> schedule)
    : learning_rate(lr), decay_schedule(std::move(schedule)) {
  validate();
}

void AdamState::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("adam: learning_rate must be positive");
  if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
    throw ConfigError("adam: betas must lie in (0,1)");
  }
}

double AdamState::effective_lr() const {
  double lr = learning_rate;
  for (const auto& [decay_epoch, multiplier] : decay_schedule) {
    if (epoch >= decay_epoch) lr *= multiplier;
  }
  return lr;
}

void adam_step(AdamState& state, std::vector<NamedTensor>& params) {
  state.validate();
  if (state.first_moment.empty()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i].assign(params[i].second.size(), 0.0);
      state.second_moment[i].assign(params[i].second.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractViolation("adam: parameter list changed size under a live state");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double lr = state.effective_lr();
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, param] = params[i];
    if (!param.has_grad()) {
      throw ContractViolation("adam: parameter '" + name + "' has no gradient");
    }
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != param.size()) {
      throw ContractViolation("adam: moment buffers for '" + name + "' lost congruence");
    }
    const auto g = param.grad();
    auto vals = param.values_mut();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      vals[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

void clip_grad_norm(std::vector<NamedTensor>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (auto& [name, param] : params) {
    for (double g : param.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double factor = max_norm / norm;
  for (auto& [name, param] : params) {
    for (double& g : param.grad_mut()) g *= factor;
  }
}

}  // namespace sesf
