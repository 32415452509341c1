#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sesf/data.hpp"
#include "sesf/model.hpp"

namespace sesf {

// Mean per-joint position error at one forecast frame, millimeters.
// pred/truth are [K,V,3] frame buffers.
double mpjpe_at_frame(std::span<const double> pred, std::span<const double> truth,
                      std::size_t forecast_frames, std::size_t joints, std::size_t frame);

// Average of the per-frame MPJPEs over the whole predicted sequence.
double sequence_loss_value(std::span<const double> pred, std::span<const double> truth,
                           std::size_t forecast_frames, std::size_t joints);

// Differentiable counterpart on batched model tensors [B,3,V,K].
Tensor sequence_loss(const Tensor& pred, const Tensor& truth);

// Every forecast frame repeats the last observed frame. input is [T,V,3].
std::vector<double> zero_velocity_forecast(std::span<const double> input,
                                           std::size_t input_frames, std::size_t joints,
                                           std::size_t forecast_frames);

// A forecaster maps a window to a [K,V,3] mm prediction.
using Forecaster = std::function<std::vector<double>(const WindowedExample&)>;
Forecaster model_forecaster(SesGcnModel& model);
Forecaster zero_velocity_forecaster();
Forecaster oracle_forecaster();  // returns the ground-truth target

struct LatencyStats {
  double mean_s = 0.0;
  double p95_s = 0.0;
  std::size_t trials = 0;
};

// Order statistics over raw samples; exposed for testing.
LatencyStats latency_stats(std::vector<double> samples_s);

// Wall-clock per single-sequence forward pass, warmups excluded.
LatencyStats benchmark_inference(SesGcnModel& model, std::size_t n_warmup, std::size_t n_trials);

struct EvalReport {
  std::vector<std::size_t> horizons;  // forecast-frame counts, e.g. {10, 25}
  struct ActionRow {
    std::string action;
    std::size_t windows = 0;
    std::vector<double> mpjpe_mm;          // per horizon
    std::vector<double> zero_velocity_mm;  // per horizon
  };
  std::vector<ActionRow> per_action;
  std::vector<double> overall_mpjpe_mm;
  std::vector<double> overall_zero_velocity_mm;
  std::vector<std::vector<double>> per_joint_mm;  // [horizon][joint]
  std::size_t total_windows = 0;
  ParameterBreakdown params;
  LatencyStats latency;
};

// Aggregates mpjpe_at_frame per action and overall (example-weighted),
// including the zero-velocity baseline columns. Deterministic.
EvalReport evaluate(const Forecaster& forecaster, std::span<const WindowedExample> windows,
                    std::span<const std::size_t> horizons);

std::string report_to_text(const EvalReport& report);
std::string per_joint_csv(const EvalReport& report, std::span<const std::string> joint_names);

}  // namespace sesf
