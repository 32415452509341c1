#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sesf/tensor.hpp"

namespace sesf {

using NamedTensor = std::pair<std::string, Tensor>;

// ADAM with a stepped learning-rate decay schedule: the effective rate is the
// base rate times the multiplier of every schedule entry whose epoch has been
// reached.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double learning_rate = 0.1;
  std::vector<std::pair<int, double>> decay_schedule;  // (epoch, multiplier)

  long step_count = 0;
  int epoch = 1;  // 1-based, set by the trainer

  AdamState() = default;
  AdamState(double lr, std::vector<std::pair<int, double>> schedule);

  double effective_lr() const;
  void validate() const;

  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// One ADAM update over `params`; gradients must be populated. Moment buffers
// are created lazily on the first call and stay congruent with the
// parameters afterwards.
void adam_step(AdamState& state, std::vector<NamedTensor>& params);

// Scales all gradients so their global L2 norm is at most `max_norm`.
// No-op when max_norm <= 0.
void clip_grad_norm(std::vector<NamedTensor>& params, double max_norm);

}  // namespace sesf
