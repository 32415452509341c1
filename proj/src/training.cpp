#include "sesf/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "sesf/checkpoint.hpp"
#include "sesf/metrics.hpp"

namespace sesf {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("train: base_lr must be positive");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= decay_epochs[i - 1]) {
      throw ConfigError("train: decay_epochs must be strictly increasing");
    }
  }
  if (grad_clip_norm < 0.0) throw ConfigError("train: grad_clip_norm must be >= 0");
}

namespace {

struct Batch {
  Tensor input;   // [B,3,V,T]
  Tensor target;  // [B,3,V,K]
  std::size_t size = 0;
};

Batch make_batch(std::span<const WindowedExample> windows, std::span<const std::size_t> indices) {
  const WindowedExample& first = windows[indices.front()];
  const std::size_t B = indices.size();
  const std::size_t V = first.joints, T = first.input_frames, K = first.target_frames;
  std::vector<double> in(B * 3 * V * T);
  std::vector<double> tgt(B * 3 * V * K);
  for (std::size_t b = 0; b < B; ++b) {
    const WindowedExample& ex = windows[indices[b]];
    if (ex.joints != V || ex.input_frames != T || ex.target_frames != K) {
      throw ContractViolation("train: windows disagree on [T,V,K]");
    }
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t v = 0; v < V; ++v) {
        for (std::size_t c = 0; c < 3; ++c) {
          in[((b * 3 + c) * V + v) * T + t] = ex.input[(t * V + v) * 3 + c];
        }
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t v = 0; v < V; ++v) {
        for (std::size_t c = 0; c < 3; ++c) {
          tgt[((b * 3 + c) * V + v) * K + k] = ex.target[(k * V + v) * 3 + c];
        }
      }
    }
  }
  Batch batch;
  batch.input = Tensor::from_values({B, 3, V, T}, std::move(in));
  batch.target = Tensor::from_values({B, 3, V, K}, std::move(tgt));
  batch.size = B;
  return batch;
}

std::vector<std::vector<double>> snapshot_values(std::vector<NamedTensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (auto& [name, t] : params) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

void restore_values(std::vector<NamedTensor>& params,
                    const std::vector<std::vector<double>>& snapshot) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].second.values_mut();
    std::copy(snapshot[i].begin(), snapshot[i].end(), dst.begin());
  }
}

}  // namespace

double validation_loss(SesGcnModel& model, std::span<const WindowedExample> windows,
                       std::size_t batch_size) {
  if (windows.empty()) throw ContractViolation("validation_loss: empty window set");
  NoGradGuard no_grad;
  double acc = 0.0;
  std::vector<std::size_t> indices(windows.size());
  std::iota(indices.begin(), indices.end(), 0);
  for (std::size_t at = 0; at < indices.size(); at += batch_size) {
    const std::size_t n = std::min(batch_size, indices.size() - at);
    Batch batch = make_batch(windows, std::span<const std::size_t>(indices).subspan(at, n));
    Tensor pred = model.forward(batch.input, /*training=*/false);
    acc += euclid_seq_loss(pred, batch.target).item() * static_cast<double>(n);
  }
  return acc / static_cast<double>(windows.size());
}

TrainResult train(SesGcnModel& model, std::span<const WindowedExample> train_windows,
                  std::span<const WindowedExample> val_windows, const TrainConfig& config) {
  config.validate();
  if (train_windows.empty() || val_windows.empty()) {
    throw ContractViolation("train: train and validation window sets must be non-empty");
  }
  const std::size_t batch_size = std::min(config.batch_size, train_windows.size());

  AdamState adam;
  adam.learning_rate = config.base_lr;
  for (int e : config.decay_epochs) adam.decay_schedule.emplace_back(e, config.decay_factor);
  adam.validate();

  auto params = model.named_parameters();
  auto buffers = model.named_buffers();
  Rng shuffle_rng(config.seed ^ 0x5e5f7a15b1e55eedULL);

  TrainResult result;
  result.best_val_loss_mm = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params, best_buffers;
  std::vector<std::vector<double>> last_good_params = snapshot_values(params);
  std::vector<std::vector<double>> last_good_buffers = snapshot_values(buffers);

  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), 0);

  const bool write_ckpts = !config.checkpoint_dir.empty();
  if (write_ckpts) std::filesystem::create_directories(config.checkpoint_dir);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    adam.epoch = static_cast<int>(epoch);
    shuffle_rng.shuffle(order);
    double train_acc = 0.0;
    bool bad = false;
    try {
      for (std::size_t at = 0; at < order.size(); at += batch_size) {
        const std::size_t n = std::min(batch_size, order.size() - at);
        Batch batch = make_batch(train_windows, std::span<const std::size_t>(order).subspan(at, n));
        Tensor pred = model.forward(batch.input, /*training=*/true);
        Tensor loss = euclid_seq_loss(pred, batch.target);
        for (auto& [name, p] : params) p.zero_grad();
        backward(loss);
        clip_grad_norm(params, config.grad_clip_norm);
        adam_step(adam, params);
        train_acc += loss.item() * static_cast<double>(n);
      }
    } catch (const NumericFault&) {
      bad = true;
    }
    if (bad) {
      restore_values(params, last_good_params);
      restore_values(buffers, last_good_buffers);
      result.diverged = true;
      result.diverged_epoch = epoch;
      break;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss_mm = train_acc / static_cast<double>(train_windows.size());
    stats.val_loss_mm = validation_loss(model, val_windows, batch_size);
    stats.lr = adam.effective_lr();
    result.history.push_back(stats);
    last_good_params = snapshot_values(params);
    last_good_buffers = snapshot_values(buffers);
    if (stats.val_loss_mm < result.best_val_loss_mm) {
      result.best_val_loss_mm = stats.val_loss_mm;
      result.best_epoch = epoch;
      best_params = last_good_params;
      best_buffers = last_good_buffers;
    }
  }

  if (write_ckpts) {
    result.final_checkpoint = config.checkpoint_dir / "final.ckpt";
    model.save(result.final_checkpoint);
    if (!best_params.empty()) {
      restore_values(params, best_params);
      restore_values(buffers, best_buffers);
      result.best_checkpoint = config.checkpoint_dir / "best.ckpt";
      model.save(result.best_checkpoint);
      // Leave the model holding the final weights.
      restore_values(params, last_good_params);
      restore_values(buffers, last_good_buffers);
    }
    std::ofstream hist(config.checkpoint_dir / "history.csv", std::ios::trunc);
    hist << history_csv(result);
  }
  return result;
}

std::string history_csv(const TrainResult& result) {
  std::ostringstream os;
  os << "epoch,train_loss_mm,val_loss_mm,lr\n";
  for (const EpochStats& s : result.history) {
    os << s.epoch << ',' << s.train_loss_mm << ',' << s.val_loss_mm << ',' << s.lr << "\n";
  }
  return os.str();
}

}  // namespace sesf
