#include "sesf/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

namespace sesf {

double mpjpe_at_frame(std::span<const double> pred, std::span<const double> truth,
                      std::size_t forecast_frames, std::size_t joints, std::size_t frame) {
  if (pred.size() != truth.size() || pred.size() != forecast_frames * joints * 3) {
    throw ContractViolation("mpjpe_at_frame: buffers do not match [K,V,3]");
  }
  if (frame >= forecast_frames) {
    throw ContractViolation("mpjpe_at_frame: frame " + std::to_string(frame) + " out of " +
                            std::to_string(forecast_frames));
  }
  const std::size_t base = frame * joints * 3;
  double acc = 0.0;
  for (std::size_t v = 0; v < joints; ++v) {
    double sq = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = pred[base + v * 3 + c] - truth[base + v * 3 + c];
      sq += d * d;
    }
    acc += std::sqrt(sq);
  }
  return acc / static_cast<double>(joints);
}

double sequence_loss_value(std::span<const double> pred, std::span<const double> truth,
                           std::size_t forecast_frames, std::size_t joints) {
  double acc = 0.0;
  for (std::size_t k = 0; k < forecast_frames; ++k) {
    acc += mpjpe_at_frame(pred, truth, forecast_frames, joints, k);
  }
  return acc / static_cast<double>(forecast_frames);
}

Tensor sequence_loss(const Tensor& pred, const Tensor& truth) {
  return euclid_seq_loss(pred, truth);
}

std::vector<double> zero_velocity_forecast(std::span<const double> input,
                                           std::size_t input_frames, std::size_t joints,
                                           std::size_t forecast_frames) {
  if (input_frames == 0 || input.size() != input_frames * joints * 3) {
    throw ContractViolation("zero_velocity_forecast: input does not match [T,V,3]");
  }
  const std::size_t per_frame = joints * 3;
  std::vector<double> out(forecast_frames * per_frame);
  const double* last = input.data() + (input_frames - 1) * per_frame;
  for (std::size_t k = 0; k < forecast_frames; ++k) {
    std::copy(last, last + per_frame, out.begin() + static_cast<std::ptrdiff_t>(k * per_frame));
  }
  return out;
}

Forecaster model_forecaster(SesGcnModel& model) {
  return [&model](const WindowedExample& ex) {
    Tensor input = frames_to_tensor(ex.input, ex.input_frames, ex.joints);
    return tensor_to_frames(model.forward_single(input));
  };
}

Forecaster zero_velocity_forecaster() {
  return [](const WindowedExample& ex) {
    return zero_velocity_forecast(ex.input, ex.input_frames, ex.joints, ex.target_frames);
  };
}

Forecaster oracle_forecaster() {
  return [](const WindowedExample& ex) { return ex.target; };
}

LatencyStats latency_stats(std::vector<double> samples_s) {
  if (samples_s.empty()) throw ContractViolation("latency_stats: no samples");
  LatencyStats stats;
  stats.trials = samples_s.size();
  double acc = 0.0;
  for (double s : samples_s) acc += s;
  stats.mean_s = acc / static_cast<double>(samples_s.size());
  std::sort(samples_s.begin(), samples_s.end());
  const std::size_t idx = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(samples_s.size())));
  stats.p95_s = samples_s[std::min(samples_s.size() - 1, idx == 0 ? 0 : idx - 1)];
  return stats;
}

LatencyStats benchmark_inference(SesGcnModel& model, std::size_t n_warmup, std::size_t n_trials) {
  if (n_trials < 10) throw ContractViolation("benchmark_inference: need at least 10 trials");
  const auto& cfg = model.config();
  Rng rng(42);
  Tensor input = Tensor::uniform({3, cfg.joints, cfg.observed}, 500.0, rng);
  volatile double sink = 0.0;
  for (std::size_t i = 0; i < n_warmup; ++i) {
    sink = model.forward_single(input).values()[0];
  }
  std::vector<double> samples(n_trials);
  for (std::size_t i = 0; i < n_trials; ++i) {
    const auto start = std::chrono::steady_clock::now();
    sink = model.forward_single(input).values()[0];
    const auto stop = std::chrono::steady_clock::now();
    samples[i] = std::chrono::duration<double>(stop - start).count();
  }
  (void)sink;
  return latency_stats(std::move(samples));
}

EvalReport evaluate(const Forecaster& forecaster, std::span<const WindowedExample> windows,
                    std::span<const std::size_t> horizons) {
  if (windows.empty()) throw ContractViolation("evaluate: empty window set");
  const std::size_t joints = windows.front().joints;
  EvalReport report;
  report.horizons.assign(horizons.begin(), horizons.end());
  for (std::size_t h : horizons) {
    if (h == 0 || h > windows.front().target_frames) {
      throw ContractViolation("evaluate: horizon " + std::to_string(h) +
                              " outside forecast length " +
                              std::to_string(windows.front().target_frames));
    }
  }
  const std::size_t H = horizons.size();
  std::map<std::string, EvalReport::ActionRow> actions;
  std::vector<double> overall(H, 0.0), overall_zv(H, 0.0);
  std::vector<std::vector<double>> per_joint(H, std::vector<double>(joints, 0.0));

  for (const WindowedExample& ex : windows) {
    const std::vector<double> pred = forecaster(ex);
    const std::vector<double> zv =
        zero_velocity_forecast(ex.input, ex.input_frames, ex.joints, ex.target_frames);
    auto& row = actions[ex.action_label];
    if (row.mpjpe_mm.empty()) {
      row.action = ex.action_label;
      row.mpjpe_mm.assign(H, 0.0);
      row.zero_velocity_mm.assign(H, 0.0);
    }
    row.windows += 1;
    for (std::size_t hi = 0; hi < H; ++hi) {
      const std::size_t frame = horizons[hi] - 1;  // "10 frames" means index 9
      const double err = mpjpe_at_frame(pred, ex.target, ex.target_frames, joints, frame);
      const double err_zv = mpjpe_at_frame(zv, ex.target, ex.target_frames, joints, frame);
      row.mpjpe_mm[hi] += err;
      row.zero_velocity_mm[hi] += err_zv;
      overall[hi] += err;
      overall_zv[hi] += err_zv;
      const std::size_t base = frame * joints * 3;
      for (std::size_t v = 0; v < joints; ++v) {
        double sq = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = pred[base + v * 3 + c] - ex.target[base + v * 3 + c];
          sq += d * d;
        }
        per_joint[hi][v] += std::sqrt(sq);
      }
    }
  }

  report.total_windows = windows.size();
  const double inv_n = 1.0 / static_cast<double>(windows.size());
  for (auto& [name, row] : actions) {
    const double inv_w = 1.0 / static_cast<double>(row.windows);
    for (std::size_t hi = 0; hi < H; ++hi) {
      row.mpjpe_mm[hi] *= inv_w;
      row.zero_velocity_mm[hi] *= inv_w;
    }
    report.per_action.push_back(row);
  }
  report.overall_mpjpe_mm.assign(H, 0.0);
  report.overall_zero_velocity_mm.assign(H, 0.0);
  for (std::size_t hi = 0; hi < H; ++hi) {
    report.overall_mpjpe_mm[hi] = overall[hi] * inv_n;
    report.overall_zero_velocity_mm[hi] = overall_zv[hi] * inv_n;
    for (double& v : per_joint[hi]) v *= inv_n;
  }
  report.per_joint_mm = std::move(per_joint);
  return report;
}

std::string report_to_text(const EvalReport& report) {
  std::ostringstream os;
  os << "windows: " << report.total_windows << "\n";
  os << "action            n";
  for (std::size_t h : report.horizons) os << "   mpjpe@" << h << "   zerovel@" << h;
  os << "\n";
  auto row_out = [&os, &report](const std::string& name, std::size_t n,
                                const std::vector<double>& mpjpe,
                                const std::vector<double>& zv) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-16s %4zu", name.c_str(), n);
    os << buf;
    for (std::size_t hi = 0; hi < report.horizons.size(); ++hi) {
      std::snprintf(buf, sizeof(buf), " %9.3f %11.3f", mpjpe[hi], zv[hi]);
      os << buf;
    }
    os << "\n";
  };
  for (const auto& row : report.per_action) {
    row_out(row.action, row.windows, row.mpjpe_mm, row.zero_velocity_mm);
  }
  row_out("overall", report.total_windows, report.overall_mpjpe_mm,
          report.overall_zero_velocity_mm);
  os << "parameters: adjacency=" << report.params.adjacency << " weights=" << report.params.weights
     << " masks_spared=" << report.params.masks_spared << " total=" << report.params.total()
     << "\n";
  if (report.latency.trials > 0) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "latency: mean=%.6fs p95=%.6fs trials=%zu\n",
                  report.latency.mean_s, report.latency.p95_s, report.latency.trials);
    os << buf;
  }
  return os.str();
}

std::string per_joint_csv(const EvalReport& report, std::span<const std::string> joint_names) {
  std::ostringstream os;
  os << "joint,mean_error_mm,horizon_frames\n";
  for (std::size_t hi = 0; hi < report.horizons.size(); ++hi) {
    for (std::size_t v = 0; v < report.per_joint_mm[hi].size(); ++v) {
      const std::string name =
          v < joint_names.size() ? joint_names[v] : "j" + std::to_string(v);
      os << name << ',' << report.per_joint_mm[hi][v] << ',' << report.horizons[hi] << "\n";
    }
  }
  return os.str();
}

}  // namespace sesf
