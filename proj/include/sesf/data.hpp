#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sesf/error.hpp"
#include "sesf/tensor.hpp"

namespace sesf {

struct SkeletonTopology {
  std::vector<std::string> joint_names;
  std::vector<std::pair<std::size_t, std::size_t>> bones;  // (parent, child)
  std::vector<double> limb_radius_m;                       // per bone

  std::size_t joint_count() const { return joint_names.size(); }
  // Rejects anything that is not a single connected tree with positive radii.
  void validate() const;

  static SkeletonTopology default_human15();
};

// Ordered 3D joint positions over frames, millimeters, fixed world frame.
struct MotionSequence {
  std::string id;
  std::string subject_id;
  std::string action_label;
  double fps = 25.0;
  std::size_t joints = 0;
  std::vector<double> frames;  // [T_total, V, 3] row-major
  std::vector<std::size_t> collision_frames;

  std::size_t frame_count() const { return joints == 0 ? 0 : frames.size() / (joints * 3); }
  double at(std::size_t t, std::size_t v, std::size_t axis) const {
    return frames[(t * joints + v) * 3 + axis];
  }
  std::span<const double> frame(std::size_t t) const {
    return std::span<const double>(frames).subspan(t * joints * 3, joints * 3);
  }
  void validate() const;
};

struct WindowedExample {
  std::string sequence_id;
  std::string subject_id;
  std::string action_label;
  std::size_t start_frame = 0;
  std::size_t joints = 0;
  std::size_t input_frames = 0;   // T
  std::size_t target_frames = 0;  // K
  std::vector<double> input;      // [T,V,3] mm
  std::vector<double> target;     // [K,V,3] mm
};

struct DatasetSplit {
  std::vector<std::string> train_subjects;
  std::vector<std::string> validation_subjects;
  std::vector<std::string> test_subjects;
  std::uint64_t seed = 0;
};

struct Corpus {
  SkeletonTopology topology;
  std::vector<MotionSequence> sequences;
};

// Directory format: topology.json plus one .seq file per sequence.
Corpus load_corpus(const std::filesystem::path& dir);
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);

// Sliding windows of T input + K target frames at the given stride. With
// exclude_collisions set, windows overlapping a labeled collision frame or
// the one-second guard interval after it are dropped.
std::vector<WindowedExample> window_sequences(std::span<const MotionSequence> sequences,
                                              std::size_t input_frames, std::size_t target_frames,
                                              std::size_t stride, bool exclude_collisions);

// Subject-level split; fractions must sum to 1 and no subject may appear in
// two classes.
DatasetSplit make_split(const Corpus& corpus, std::array<double, 3> fractions,
                        std::uint64_t seed);
std::vector<MotionSequence> sequences_for(const Corpus& corpus,
                                          std::span<const std::string> subjects);

// A smooth transient "reach": the steered bone swings toward a world-space
// target and back over the event window.
struct ReachSpec {
  std::size_t sequence_index = 0;
  std::size_t bone_index = 0;
  std::array<double, 3> target_mm{};
  std::size_t start_frame = 0;
  std::size_t duration_frames = 0;
};

struct MotionParams {
  std::size_t subjects = 1;
  double amplitude_min_rad = 0.05;
  double amplitude_max_rad = 0.45;
  double frequency_min_hz = 0.2;
  double frequency_max_hz = 1.2;
  double drift_speed_mm_s = 120.0;
  double sway_amplitude_mm = 40.0;
  double sway_frequency_hz = 0.5;
  std::vector<ReachSpec> reaches;

  void validate() const;
};

// Deterministic kinematic motion: forward kinematics over the bone tree with
// per-bone oscillating joint angles, so bone lengths are constant by
// construction.
std::vector<MotionSequence> synth_generate(const SkeletonTopology& topology,
                                           std::size_t n_sequences, std::size_t length,
                                           double fps, const MotionParams& params,
                                           std::uint64_t seed);

// Rest-pose bone offsets (meters) used by the generator; anatomical for the
// default 15-joint skeleton, derived deterministically otherwise.
std::vector<std::array<double, 3>> rest_offsets_m(const SkeletonTopology& topology);

// Conservative per-frame displacement bound (mm) implied by the params; the
// generator never moves a joint faster than this.
double max_step_bound_mm(const SkeletonTopology& topology, const MotionParams& params,
                         double fps);

// Layout conversions between [T,V,3] frame arrays and [3,V,T] model tensors.
Tensor frames_to_tensor(std::span<const double> frames, std::size_t n_frames, std::size_t joints);
std::vector<double> tensor_to_frames(const Tensor& t);

}  // namespace sesf
