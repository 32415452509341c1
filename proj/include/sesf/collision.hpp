#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sesf/data.hpp"
#include "sesf/metrics.hpp"

namespace sesf {

using Point3 = std::array<double, 3>;

// A line segment swept by a sphere; degenerate (a == b) capsules are spheres.
struct Capsule {
  Point3 a{};
  Point3 b{};
  double radius = 0.0;
};

enum class ClearanceMode { kAxisDistance, kSurfaceDistance };
ClearanceMode clearance_mode_from_name(const std::string& name);
const char* clearance_mode_name(ClearanceMode mode);

struct CollisionConfig {
  double threshold_m = 0.13;
  ClearanceMode mode = ClearanceMode::kSurfaceDistance;
  void validate() const;
};

// Minimum Euclidean distance between two closed segments; exact for
// degenerate (point) segments.
double segment_distance(const Point3& p1, const Point3& q1, const Point3& p2, const Point3& q2);

// Axis mode returns the segment distance; surface mode subtracts both radii
// (negative when interpenetrating).
double capsule_clearance(const Capsule& c1, const Capsule& c2, ClearanceMode mode);

// Scripted cobot motion: one or more link chains sampled per frame, meters.
struct CobotTrajectory {
  double fps = 25.0;
  // chain_radii_m[c][l] is the capsule radius of segment l of chain c.
  std::vector<std::vector<double>> chain_radii_m;
  // frames[f][c][p]: position of point p of chain c at frame f.
  std::vector<std::vector<std::vector<Point3>>> frames;

  std::size_t frame_count() const { return frames.size(); }
  void validate() const;
};

struct ChainScript {
  std::vector<double> radii_m;                              // per segment
  std::vector<std::pair<double, std::vector<Point3>>> waypoints;  // (time s, points)
};

// Piecewise-linear interpolation of link chains sampled at `fps`; the frame
// count is duration * fps + 1 (inclusive endpoints).
CobotTrajectory script_cobot(std::span<const ChainScript> chains, double fps);

CobotTrajectory load_cobot_script(const std::filesystem::path& path);
void save_cobot_script(const std::filesystem::path& path, std::span<const ChainScript> chains,
                       double fps);

// Human limb capsules for one pose frame ([V*3] mm buffer).
std::vector<Capsule> pose_capsules(std::span<const double> pose_mm,
                                   const SkeletonTopology& topology);

struct DetectionResult {
  bool flag = false;
  double min_clearance_m = 0.0;
  std::size_t frame = 0;       // forecast-relative frame of the minimum
  std::size_t limb_bone = 0;   // topology bone index
  std::size_t cobot_chain = 0;
  std::size_t cobot_link = 0;
};

// forecast is a [K,V,3] millimeter buffer; the cobot window starts at
// `cobot_start_frame` and must cover K frames.
DetectionResult detect_collision(std::span<const double> forecast_mm, std::size_t forecast_frames,
                                 const SkeletonTopology& topology, const CobotTrajectory& cobot,
                                 std::size_t cobot_start_frame, const CollisionConfig& config);

// Labels every frame whose minimum human/cobot clearance is below the
// threshold; detector and labels share one geometric definition.
void label_collisions(MotionSequence& sequence, const SkeletonTopology& topology,
                      const CobotTrajectory& cobot, const CollisionConfig& config);

struct WindowLogRow {
  std::string sequence_id;
  std::size_t start_frame = 0;
  bool predicted = false;
  bool truth = false;
  double min_clearance_m = 0.0;
  std::size_t witness_frame = 0;
  std::size_t witness_limb = 0;
  std::size_t witness_link = 0;
};

struct CollisionScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t true_negatives = 0;
  std::vector<WindowLogRow> log;
};

// Windows each sequence (T+K at the given stride, collisions retained),
// forecasts the human, and scores window-level collision detection against
// the labeled ground truth.
CollisionScore evaluate_collisions(const Forecaster& forecaster,
                                   std::span<const MotionSequence> sequences,
                                   const SkeletonTopology& topology,
                                   const std::map<std::string, CobotTrajectory>& cobots,
                                   const CollisionConfig& config, std::size_t input_frames,
                                   std::size_t forecast_frames, std::size_t stride);

std::string collision_log_csv(const CollisionScore& score);

}  // namespace sesf
