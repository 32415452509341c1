#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sesf/model.hpp"
#include "sesf/training.hpp"

namespace sesf {

struct SparsifyConfig {
  // Fixed threshold on |tanh(A)|; ignored when target_sparsity is set.
  double epsilon = 0.1;
  // When present, the threshold is auto-calibrated to the given quantile of
  // |tanh(A)| so that this fraction of entries is pruned.
  std::optional<double> target_sparsity = 0.30;
  // Calibrate per adjacency factor (default) or over all factors pooled.
  bool per_matrix = true;

  void validate() const;
};

// M[i] = 1 iff |tanh(A[i])| >= epsilon, per entry, per layer. The teacher
// must be an unmasked depth-wise model. `teacher_id` stamps provenance.
std::vector<MaskPair> derive_masks(const SesGcnModel& teacher, const SparsifyConfig& config,
                                   const std::string& teacher_id = "");

// Fresh masked model, independently initialized; masked adjacency entries
// are constants at zero.
SesGcnModel build_student(ModelConfig config, std::vector<MaskPair> masks, std::uint64_t seed);

double mask_zero_fraction(const Tensor& mask);

// Masks serialize as JSON with run-length-encoded bit arrays.
void save_masks(const std::filesystem::path& path, std::span<const MaskPair> masks,
                const SparsifyConfig& config);
std::vector<MaskPair> load_masks(const std::filesystem::path& path);

struct SplitWindows {
  std::vector<WindowedExample> train;
  std::vector<WindowedExample> validation;
};

struct PipelineResult {
  TrainResult teacher;
  TrainResult student;
  std::vector<MaskPair> masks;
  ParameterBreakdown teacher_params;
  ParameterBreakdown student_params;
  std::vector<double> layer_sparsity_spatial;   // achieved zero fraction per layer
  std::vector<double> layer_sparsity_temporal;
  std::vector<std::string> warnings;
  std::filesystem::path teacher_checkpoint;
  std::filesystem::path student_checkpoint;
  std::filesystem::path mask_file;
};

// Teacher-student sparsification: train an unmasked depth-wise teacher,
// threshold its adjacency factors into binary masks, then train a masked
// student from scratch (fresh seed; only the masks transfer). Outputs land
// in `out_dir`.
PipelineResult teacher_student_train(const SplitWindows& dataset, ModelConfig model_config,
                                     const TrainConfig& train_config,
                                     const SparsifyConfig& sparsify_config,
                                     const std::filesystem::path& out_dir);

std::string pipeline_report_json(const PipelineResult& result);

}  // namespace sesf
