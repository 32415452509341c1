#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "sesf/data.hpp"
#include "sesf/model.hpp"

namespace sesf {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 256;  // auto-clamped to the dataset size
  double base_lr = 0.1;
  std::vector<int> decay_epochs = {5, 20, 30, 37};
  double decay_factor = 0.1;
  std::uint64_t seed = 0;
  double grad_clip_norm = 10.0;  // 0 disables clipping (strict-paper mode)
  std::filesystem::path checkpoint_dir;  // empty: keep checkpoints in memory only

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss_mm = 0.0;
  double val_loss_mm = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double best_val_loss_mm = 0.0;
  std::size_t best_epoch = 0;
  bool diverged = false;
  std::size_t diverged_epoch = 0;  // first bad epoch when diverged
  std::filesystem::path final_checkpoint;  // empty when checkpoint_dir unset
  std::filesystem::path best_checkpoint;
};

// Mini-batch ADAM on the sequence loss with deterministic shuffling. The
// model is left holding the final weights; the best-validation weights are
// written to best.ckpt when a checkpoint directory is configured. On
// divergence (non-finite loss) training stops; the model is rolled back to
// the last epoch that completed, and the result points at it.
TrainResult train(SesGcnModel& model, std::span<const WindowedExample> train_windows,
                  std::span<const WindowedExample> val_windows, const TrainConfig& config);

// Example-weighted validation loss (millimeters), evaluation mode; never
// mutates the model parameters.
double validation_loss(SesGcnModel& model, std::span<const WindowedExample> windows,
                       std::size_t batch_size);

std::string history_csv(const TrainResult& result);

}  // namespace sesf
