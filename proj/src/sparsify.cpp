#include "sesf/sparsify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sesf/checkpoint.hpp"

namespace sesf {

using json = nlohmann::json;

void SparsifyConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw ConfigError("sparsify: epsilon must lie in (0,1)");
  }
  if (target_sparsity && (*target_sparsity < 0.0 || *target_sparsity >= 1.0)) {
    throw ConfigError("sparsify: target_sparsity must lie in [0,1)");
  }
}

namespace {

// Threshold such that the target fraction of values falls strictly below it;
// entries exactly at the threshold are kept.
double quantile_threshold(std::vector<double> values, double target) {
  std::sort(values.begin(), values.end());
  std::size_t idx = static_cast<std::size_t>(target * static_cast<double>(values.size()));
  idx = std::min(idx, values.size() - 1);
  return values[idx];
}

std::vector<double> abs_tanh(const Tensor& t) {
  std::vector<double> out(t.size());
  const auto v = t.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(std::tanh(v[i]));
  return out;
}

Tensor make_mask(const Tensor& adjacency, const std::vector<double>& magnitude, double epsilon) {
  std::vector<double> bits(magnitude.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = magnitude[i] >= epsilon ? 1.0 : 0.0;
  return Tensor::from_values(adjacency.shape(), std::move(bits));
}

}  // namespace

std::vector<MaskPair> derive_masks(const SesGcnModel& teacher, const SparsifyConfig& config,
                                   const std::string& teacher_id) {
  config.validate();
  if (teacher.config().variant != Variant::kStsDw) {
    throw ContractViolation(std::string("derive_masks: teacher must be an unmasked sts_dw model, "
                                        "got variant ") +
                            variant_name(teacher.config().variant));
  }
  const auto& layers = teacher.layers();

  double global_epsilon = config.epsilon;
  if (config.target_sparsity && !config.per_matrix) {
    std::vector<double> pooled;
    for (const GcnLayer& layer : layers) {
      for (double v : abs_tanh(layer.adj_spatial)) pooled.push_back(v);
      for (double v : abs_tanh(layer.adj_temporal)) pooled.push_back(v);
    }
    global_epsilon = quantile_threshold(std::move(pooled), *config.target_sparsity);
  }

  std::vector<MaskPair> masks;
  masks.reserve(layers.size());
  for (const GcnLayer& layer : layers) {
    const auto mag_s = abs_tanh(layer.adj_spatial);
    const auto mag_t = abs_tanh(layer.adj_temporal);
    MaskPair pair;
    if (config.target_sparsity && config.per_matrix) {
      pair.epsilon_spatial = quantile_threshold(mag_s, *config.target_sparsity);
      pair.epsilon_temporal = quantile_threshold(mag_t, *config.target_sparsity);
    } else if (config.target_sparsity) {
      pair.epsilon_spatial = pair.epsilon_temporal = global_epsilon;
    } else {
      pair.epsilon_spatial = pair.epsilon_temporal = config.epsilon;
    }
    pair.spatial = make_mask(layer.adj_spatial, mag_s, pair.epsilon_spatial);
    pair.temporal = make_mask(layer.adj_temporal, mag_t, pair.epsilon_temporal);
    pair.teacher_id = teacher_id;
    masks.push_back(std::move(pair));
  }
  return masks;
}

SesGcnModel build_student(ModelConfig config, std::vector<MaskPair> masks, std::uint64_t seed) {
  config.variant = Variant::kSes;
  return SesGcnModel(std::move(config), std::move(masks), seed);
}

double mask_zero_fraction(const Tensor& mask) {
  std::size_t zeros = 0;
  for (double v : mask.values()) {
    if (v == 0.0) zeros += 1;
  }
  return static_cast<double>(zeros) / static_cast<double>(mask.size());
}

namespace {

json rle_encode(const Tensor& mask) {
  json runs = json::array();
  const auto v = mask.values();
  double current = v.empty() ? 0.0 : v[0];
  std::size_t run = 0;
  json out;
  out["first"] = static_cast<int>(current);
  for (double bit : v) {
    if (bit == current) {
      run += 1;
    } else {
      runs.push_back(run);
      current = bit;
      run = 1;
    }
  }
  runs.push_back(run);
  out["runs"] = std::move(runs);
  return out;
}

Tensor rle_decode(const json& encoded, const Shape& shape) {
  std::vector<double> bits;
  bits.reserve(shape_size(shape));
  double current = encoded.at("first").get<int>() != 0 ? 1.0 : 0.0;
  for (const auto& run : encoded.at("runs")) {
    const std::size_t n = run.get<std::size_t>();
    bits.insert(bits.end(), n, current);
    current = current == 0.0 ? 1.0 : 0.0;
  }
  if (bits.size() != shape_size(shape)) {
    throw ParseError("mask file: run lengths do not fill the stated shape");
  }
  return Tensor::from_values(shape, std::move(bits));
}

}  // namespace

void save_masks(const std::filesystem::path& path, std::span<const MaskPair> masks,
                const SparsifyConfig& config) {
  json doc;
  doc["format"] = 1;
  doc["per_matrix"] = config.per_matrix;
  if (config.target_sparsity) doc["target_sparsity"] = *config.target_sparsity;
  doc["layers"] = json::array();
  for (const MaskPair& pair : masks) {
    json layer;
    layer["shape_s"] = pair.spatial.shape();
    layer["rle_s"] = rle_encode(pair.spatial);
    layer["epsilon_s"] = pair.epsilon_spatial;
    layer["shape_t"] = pair.temporal.shape();
    layer["rle_t"] = rle_encode(pair.temporal);
    layer["epsilon_t"] = pair.epsilon_temporal;
    layer["teacher"] = pair.teacher_id;
    doc["layers"].push_back(std::move(layer));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot write mask file " + path.string());
  out << doc.dump(2) << "\n";
}

std::vector<MaskPair> load_masks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open mask file " + path.string());
  json doc = json::parse(in);
  std::vector<MaskPair> masks;
  for (const auto& layer : doc.at("layers")) {
    MaskPair pair;
    pair.spatial = rle_decode(layer.at("rle_s"), layer.at("shape_s").get<Shape>());
    pair.temporal = rle_decode(layer.at("rle_t"), layer.at("shape_t").get<Shape>());
    pair.epsilon_spatial = layer.at("epsilon_s").get<double>();
    pair.epsilon_temporal = layer.at("epsilon_t").get<double>();
    pair.teacher_id = layer.at("teacher").get<std::string>();
    masks.push_back(std::move(pair));
  }
  return masks;
}

PipelineResult teacher_student_train(const SplitWindows& dataset, ModelConfig model_config,
                                     const TrainConfig& train_config,
                                     const SparsifyConfig& sparsify_config,
                                     const std::filesystem::path& out_dir) {
  sparsify_config.validate();
  if (dataset.train.empty() || dataset.validation.empty()) {
    throw ContractViolation("teacher_student_train: dataset needs train and validation windows");
  }
  std::filesystem::create_directories(out_dir);
  PipelineResult result;

  ModelConfig teacher_config = model_config;
  teacher_config.variant = Variant::kStsDw;
  SesGcnModel teacher(teacher_config, train_config.seed);

  TrainConfig teacher_train = train_config;
  teacher_train.checkpoint_dir = out_dir / "teacher";
  result.teacher = train(teacher, dataset.train, dataset.validation, teacher_train);
  result.teacher_checkpoint = result.teacher.best_checkpoint.empty()
                                  ? result.teacher.final_checkpoint
                                  : result.teacher.best_checkpoint;
  result.teacher_params = teacher.count_parameters();

  // Derive masks from the best teacher weights.
  SesGcnModel best_teacher = SesGcnModel::load(result.teacher_checkpoint);
  const std::string teacher_id = file_hash(result.teacher_checkpoint);
  result.masks = derive_masks(best_teacher, sparsify_config, teacher_id);
  result.mask_file = out_dir / "masks.json";
  save_masks(result.mask_file, result.masks, sparsify_config);
  for (const MaskPair& pair : result.masks) {
    result.layer_sparsity_spatial.push_back(mask_zero_fraction(pair.spatial));
    result.layer_sparsity_temporal.push_back(mask_zero_fraction(pair.temporal));
  }

  // The student is trained from scratch: fresh seed, only the masks carry over.
  const std::uint64_t student_seed = train_config.seed * 0x9e3779b97f4a7c15ULL + 1;
  SesGcnModel student = build_student(model_config, result.masks, student_seed);
  TrainConfig student_train = train_config;
  student_train.seed = student_seed;
  student_train.checkpoint_dir = out_dir / "student";
  result.student = train(student, dataset.train, dataset.validation, student_train);
  result.student_checkpoint = result.student.best_checkpoint.empty()
                                  ? result.student.final_checkpoint
                                  : result.student.best_checkpoint;
  result.student_params = student.count_parameters();

  auto non_decreasing = [](const TrainResult& r) {
    for (std::size_t i = 1; i < r.history.size(); ++i) {
      if (r.history[i].val_loss_mm < r.history[0].val_loss_mm) return false;
    }
    return !r.history.empty();
  };
  if (non_decreasing(result.teacher)) {
    result.warnings.push_back("teacher validation loss never improved");
  }
  if (non_decreasing(result.student)) {
    result.warnings.push_back("student validation loss never improved");
  }

  std::ofstream report(out_dir / "report.json", std::ios::trunc);
  report << pipeline_report_json(result) << "\n";
  return result;
}

std::string pipeline_report_json(const PipelineResult& result) {
  json doc;
  auto curve = [](const TrainResult& r) {
    json out = json::array();
    for (const EpochStats& s : r.history) {
      out.push_back({{"epoch", s.epoch},
                     {"train_loss_mm", s.train_loss_mm},
                     {"val_loss_mm", s.val_loss_mm},
                     {"lr", s.lr}});
    }
    return out;
  };
  doc["teacher"] = {{"history", curve(result.teacher)},
                    {"best_val_loss_mm", result.teacher.best_val_loss_mm},
                    {"best_epoch", result.teacher.best_epoch},
                    {"diverged", result.teacher.diverged},
                    {"params",
                     {{"adjacency", result.teacher_params.adjacency},
                      {"weights", result.teacher_params.weights},
                      {"total", result.teacher_params.total()}}}};
  doc["student"] = {{"history", curve(result.student)},
                    {"best_val_loss_mm", result.student.best_val_loss_mm},
                    {"best_epoch", result.student.best_epoch},
                    {"diverged", result.student.diverged},
                    {"params",
                     {{"adjacency", result.student_params.adjacency},
                      {"weights", result.student_params.weights},
                      {"masks_spared", result.student_params.masks_spared},
                      {"total", result.student_params.total()}}}};
  doc["layer_sparsity_spatial"] = result.layer_sparsity_spatial;
  doc["layer_sparsity_temporal"] = result.layer_sparsity_temporal;
  doc["warnings"] = result.warnings;
  return doc.dump(2);
}

}  // namespace sesf
