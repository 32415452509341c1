#include "sesf/collision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sesf {

using json = nlohmann::json;

namespace {

Point3 sub(const Point3& a, const Point3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Point3& a, const Point3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Point3& a) { return std::sqrt(dot(a, a)); }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

ClearanceMode clearance_mode_from_name(const std::string& name) {
  if (name == "axis") return ClearanceMode::kAxisDistance;
  if (name == "surface") return ClearanceMode::kSurfaceDistance;
  throw ConfigError("unknown clearance mode '" + name + "' (want axis|surface)");
}

const char* clearance_mode_name(ClearanceMode mode) {
  return mode == ClearanceMode::kAxisDistance ? "axis" : "surface";
}

void CollisionConfig::validate() const {
  if (!(threshold_m > 0.0)) throw ConfigError("collision: threshold must be positive");
}

double segment_distance(const Point3& p1, const Point3& q1, const Point3& p2, const Point3& q2) {
  // Closest points between closed segments (Ericson, Real-Time Collision
  // Detection, 5.1.9).
  const Point3 d1 = sub(q1, p1);
  const Point3 d2 = sub(q2, p2);
  const Point3 r = sub(p1, p2);
  const double a = dot(d1, d1);
  const double e = dot(d2, d2);
  const double f = dot(d2, r);
  constexpr double kEps = 1e-30;
  double s = 0.0, t = 0.0;
  if (a <= kEps && e <= kEps) {
    s = t = 0.0;
  } else if (a <= kEps) {
    t = clamp01(f / e);
  } else {
    const double c = dot(d1, r);
    if (e <= kEps) {
      s = clamp01(-c / a);
    } else {
      const double b = dot(d1, d2);
      const double denom = a * e - b * b;
      s = denom > 0.0 ? clamp01((b * f - c * e) / denom) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = clamp01(-c / a);
      } else if (t > 1.0) {
        t = 1.0;
        s = clamp01((b - c) / a);
      }
    }
  }
  const Point3 c1{p1[0] + d1[0] * s, p1[1] + d1[1] * s, p1[2] + d1[2] * s};
  const Point3 c2{p2[0] + d2[0] * t, p2[1] + d2[1] * t, p2[2] + d2[2] * t};
  return norm(sub(c1, c2));
}

double capsule_clearance(const Capsule& c1, const Capsule& c2, ClearanceMode mode) {
  const double axis = segment_distance(c1.a, c1.b, c2.a, c2.b);
  return mode == ClearanceMode::kAxisDistance ? axis : axis - (c1.radius + c2.radius);
}

void CobotTrajectory::validate() const {
  if (!(fps > 0.0)) throw ConfigError("cobot: fps must be positive");
  if (frames.empty()) throw ConfigError("cobot: no frames");
  const std::size_t n_chains = chain_radii_m.size();
  for (const auto& frame : frames) {
    if (frame.size() != n_chains) throw ConfigError("cobot: chain count varies across frames");
    for (std::size_t c = 0; c < n_chains; ++c) {
      if (frame[c].size() != chain_radii_m[c].size() + 1) {
        throw ConfigError("cobot: chain " + std::to_string(c) + " needs " +
                          std::to_string(chain_radii_m[c].size() + 1) + " points");
      }
    }
  }
  for (const auto& radii : chain_radii_m) {
    if (radii.empty()) throw ConfigError("cobot: empty chain");
    for (double r : radii) {
      if (!(r > 0.0)) throw ConfigError("cobot: link radii must be positive");
    }
  }
}

CobotTrajectory script_cobot(std::span<const ChainScript> chains, double fps) {
  if (!(fps > 0.0)) throw ConfigError("script_cobot: fps must be positive");
  if (chains.empty()) throw ConfigError("script_cobot: no chains");
  double duration = 0.0;
  for (const ChainScript& chain : chains) {
    if (chain.waypoints.size() < 2) {
      throw ConfigError("script_cobot: each chain needs at least two waypoints");
    }
    const std::size_t points = chain.waypoints.front().second.size();
    if (points < 2) throw ConfigError("script_cobot: chains need at least two points");
    if (chain.radii_m.size() != points - 1) {
      throw ConfigError("script_cobot: need one radius per link segment");
    }
    for (std::size_t w = 0; w < chain.waypoints.size(); ++w) {
      if (chain.waypoints[w].second.size() != points) {
        throw ConfigError("script_cobot: waypoint " + std::to_string(w) +
                          " changes the point count");
      }
      if (w > 0 && chain.waypoints[w].first <= chain.waypoints[w - 1].first) {
        throw ConfigError("script_cobot: waypoint times must increase");
      }
    }
    duration = std::max(duration, chain.waypoints.back().first);
  }
  const std::size_t n_frames = static_cast<std::size_t>(std::llround(duration * fps)) + 1;
  CobotTrajectory traj;
  traj.fps = fps;
  for (const ChainScript& chain : chains) traj.chain_radii_m.push_back(chain.radii_m);
  traj.frames.resize(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double t = static_cast<double>(f) / fps;
    auto& frame = traj.frames[f];
    frame.reserve(chains.size());
    for (const ChainScript& chain : chains) {
      const auto& wps = chain.waypoints;
      std::size_t hi = 0;
      while (hi + 1 < wps.size() && wps[hi + 1].first < t) ++hi;
      const std::size_t lo = hi;
      hi = std::min(hi + 1, wps.size() - 1);
      const double t0 = wps[lo].first, t1 = wps[hi].first;
      const double u = (hi == lo || t >= t1) ? 1.0 : clamp01((t - t0) / (t1 - t0));
      std::vector<Point3> points(wps[lo].second.size());
      for (std::size_t p = 0; p < points.size(); ++p) {
        for (int c = 0; c < 3; ++c) {
          points[p][static_cast<std::size_t>(c)] =
              (1.0 - u) * wps[lo].second[p][static_cast<std::size_t>(c)] +
              u * wps[hi].second[p][static_cast<std::size_t>(c)];
        }
      }
      frame.push_back(std::move(points));
    }
  }
  traj.validate();
  return traj;
}

void save_cobot_script(const std::filesystem::path& path, std::span<const ChainScript> chains,
                       double fps) {
  json doc;
  doc["fps"] = fps;
  doc["chains"] = json::array();
  for (const ChainScript& chain : chains) {
    json jc;
    jc["radii_m"] = chain.radii_m;
    jc["waypoints"] = json::array();
    for (const auto& [t, points] : chain.waypoints) {
      json jw;
      jw["t"] = t;
      jw["points"] = json::array();
      for (const Point3& p : points) jw["points"].push_back({p[0], p[1], p[2]});
      jc["waypoints"].push_back(std::move(jw));
    }
    doc["chains"].push_back(std::move(jc));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot write cobot script " + path.string());
  out << doc.dump(2) << "\n";
}

CobotTrajectory load_cobot_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open cobot script " + path.string());
  json doc = json::parse(in);
  std::vector<ChainScript> chains;
  for (const auto& jc : doc.at("chains")) {
    ChainScript chain;
    chain.radii_m = jc.at("radii_m").get<std::vector<double>>();
    for (const auto& jw : jc.at("waypoints")) {
      std::vector<Point3> points;
      for (const auto& jp : jw.at("points")) {
        points.push_back({jp.at(0).get<double>(), jp.at(1).get<double>(), jp.at(2).get<double>()});
      }
      chain.waypoints.emplace_back(jw.at("t").get<double>(), std::move(points));
    }
    chains.push_back(std::move(chain));
  }
  return script_cobot(chains, doc.at("fps").get<double>());
}

std::vector<Capsule> pose_capsules(std::span<const double> pose_mm,
                                   const SkeletonTopology& topology) {
  const std::size_t V = topology.joint_count();
  if (pose_mm.size() != V * 3) {
    throw ContractViolation("pose_capsules: pose buffer does not match V*3");
  }
  std::vector<Capsule> out;
  out.reserve(topology.bones.size());
  for (std::size_t b = 0; b < topology.bones.size(); ++b) {
    const auto& [p, c] = topology.bones[b];
    Capsule cap;
    for (std::size_t axis = 0; axis < 3; ++axis) {
      cap.a[axis] = pose_mm[p * 3 + axis] * 1e-3;  // mm -> m
      cap.b[axis] = pose_mm[c * 3 + axis] * 1e-3;
    }
    cap.radius = topology.limb_radius_m[b];
    out.push_back(cap);
  }
  return out;
}

namespace {

struct FrameClearance {
  double min_clearance = std::numeric_limits<double>::infinity();
  std::size_t limb = 0, chain = 0, link = 0;
};

FrameClearance frame_clearance(std::span<const double> pose_mm, const SkeletonTopology& topology,
                               const CobotTrajectory& cobot, std::size_t cobot_frame,
                               ClearanceMode mode) {
  FrameClearance best;
  const auto limbs = pose_capsules(pose_mm, topology);
  const auto& frame = cobot.frames[cobot_frame];
  for (std::size_t li = 0; li < limbs.size(); ++li) {
    for (std::size_t ci = 0; ci < frame.size(); ++ci) {
      const auto& points = frame[ci];
      for (std::size_t seg = 0; seg + 1 < points.size(); ++seg) {
        Capsule link{points[seg], points[seg + 1], cobot.chain_radii_m[ci][seg]};
        const double clearance = capsule_clearance(limbs[li], link, mode);
        if (clearance < best.min_clearance) {
          best.min_clearance = clearance;
          best.limb = li;
          best.chain = ci;
          best.link = seg;
        }
      }
    }
  }
  return best;
}

}  // namespace

DetectionResult detect_collision(std::span<const double> forecast_mm, std::size_t forecast_frames,
                                 const SkeletonTopology& topology, const CobotTrajectory& cobot,
                                 std::size_t cobot_start_frame, const CollisionConfig& config) {
  config.validate();
  const std::size_t V = topology.joint_count();
  if (forecast_mm.size() != forecast_frames * V * 3) {
    throw ContractViolation("detect_collision: forecast buffer does not match [K,V,3]");
  }
  if (cobot_start_frame + forecast_frames > cobot.frame_count()) {
    throw ContractViolation("detect_collision: cobot window [" +
                            std::to_string(cobot_start_frame) + ", +" +
                            std::to_string(forecast_frames) + ") exceeds trajectory length " +
                            std::to_string(cobot.frame_count()));
  }
  DetectionResult result;
  result.min_clearance_m = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < forecast_frames; ++k) {
    const auto fc = frame_clearance(forecast_mm.subspan(k * V * 3, V * 3), topology, cobot,
                                    cobot_start_frame + k, config.mode);
    if (fc.min_clearance < result.min_clearance_m) {
      result.min_clearance_m = fc.min_clearance;
      result.frame = k;
      result.limb_bone = fc.limb;
      result.cobot_chain = fc.chain;
      result.cobot_link = fc.link;
    }
  }
  result.flag = result.min_clearance_m < config.threshold_m;
  return result;
}

void label_collisions(MotionSequence& sequence, const SkeletonTopology& topology,
                      const CobotTrajectory& cobot, const CollisionConfig& config) {
  config.validate();
  if (cobot.frame_count() < sequence.frame_count()) {
    throw ContractViolation("label_collisions: cobot trajectory shorter than the sequence");
  }
  sequence.collision_frames.clear();
  for (std::size_t f = 0; f < sequence.frame_count(); ++f) {
    const auto fc = frame_clearance(sequence.frame(f), topology, cobot, f, config.mode);
    if (fc.min_clearance < config.threshold_m) sequence.collision_frames.push_back(f);
  }
}

CollisionScore evaluate_collisions(const Forecaster& forecaster,
                                   std::span<const MotionSequence> sequences,
                                   const SkeletonTopology& topology,
                                   const std::map<std::string, CobotTrajectory>& cobots,
                                   const CollisionConfig& config, std::size_t input_frames,
                                   std::size_t forecast_frames, std::size_t stride) {
  config.validate();
  CollisionScore score;
  for (const MotionSequence& seq : sequences) {
    const auto it = cobots.find(seq.id);
    if (it == cobots.end()) {
      throw ConfigError("evaluate_collisions: no cobot trajectory for sequence '" + seq.id + "'");
    }
    const CobotTrajectory& cobot = it->second;
    const auto windows = window_sequences(std::span<const MotionSequence>(&seq, 1), input_frames,
                                          forecast_frames, stride, /*exclude_collisions=*/false);
    for (const WindowedExample& ex : windows) {
      const std::size_t forecast_start = ex.start_frame + input_frames;
      bool truth = false;
      for (std::size_t cf : seq.collision_frames) {
        if (cf >= forecast_start && cf < forecast_start + forecast_frames) {
          truth = true;
          break;
        }
      }
      const std::vector<double> pred = forecaster(ex);
      const DetectionResult det = detect_collision(pred, forecast_frames, topology, cobot,
                                                   forecast_start, config);
      WindowLogRow row;
      row.sequence_id = seq.id;
      row.start_frame = ex.start_frame;
      row.predicted = det.flag;
      row.truth = truth;
      row.min_clearance_m = det.min_clearance_m;
      row.witness_frame = det.frame;
      row.witness_limb = det.limb_bone;
      row.witness_link = det.cobot_link;
      score.log.push_back(std::move(row));
      if (det.flag && truth) score.true_positives += 1;
      if (det.flag && !truth) score.false_positives += 1;
      if (!det.flag && truth) score.false_negatives += 1;
      if (!det.flag && !truth) score.true_negatives += 1;
    }
  }
  const std::size_t predicted_pos = score.true_positives + score.false_positives;
  const std::size_t actual_pos = score.true_positives + score.false_negatives;
  score.precision = predicted_pos == 0
                        ? 0.0
                        : static_cast<double>(score.true_positives) /
                              static_cast<double>(predicted_pos);
  score.recall = actual_pos == 0 ? 0.0
                                 : static_cast<double>(score.true_positives) /
                                       static_cast<double>(actual_pos);
  score.f1 = (score.precision + score.recall) == 0.0
                 ? 0.0
                 : 2.0 * score.precision * score.recall / (score.precision + score.recall);
  return score;
}

std::string collision_log_csv(const CollisionScore& score) {
  std::ostringstream os;
  os << "sequence,start_frame,predicted,truth,min_clearance_m,witness_frame,witness_limb,"
        "witness_link\n";
  for (const WindowLogRow& row : score.log) {
    os << row.sequence_id << ',' << row.start_frame << ',' << (row.predicted ? 1 : 0) << ','
       << (row.truth ? 1 : 0) << ',' << row.min_clearance_m << ',' << row.witness_frame << ','
       << row.witness_limb << ',' << row.witness_link << "\n";
  }
  return os.str();
}

}  // namespace sesf
