#include "sesf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sesf {

using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(std::string_view token, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError(where + ": bad numeric value '" + std::string(token) + "'");
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// 3x3 row-major rotation helpers.
using Mat3 = std::array<double, 9>;
using Vec3 = std::array<double, 3>;

Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
    }
  }
  return out;
}

Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  return {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
          t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
          t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

Vec3 vec_sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double vec_dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double vec_norm(const Vec3& a) { return std::sqrt(vec_dot(a, a)); }
Vec3 vec_cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 random_unit(Rng& rng) {
  while (true) {
    Vec3 v{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const double n = vec_norm(v);
    if (n > 0.1 && n <= 1.0) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

// Bones ordered so every parent precedes its children; root returned too.
std::pair<std::size_t, std::vector<std::size_t>> bone_traversal(const SkeletonTopology& topo) {
  const std::size_t V = topo.joint_count();
  std::vector<bool> is_child(V, false);
  for (const auto& [p, c] : topo.bones) is_child[c] = true;
  std::size_t root = V;
  for (std::size_t v = 0; v < V; ++v) {
    if (!is_child[v]) {
      root = v;
      break;
    }
  }
  std::vector<std::size_t> order;
  std::vector<bool> placed(V, false);
  placed[root] = true;
  bool progress = true;
  while (order.size() < topo.bones.size() && progress) {
    progress = false;
    for (std::size_t b = 0; b < topo.bones.size(); ++b) {
      if (!placed[topo.bones[b].second] && placed[topo.bones[b].first]) {
        placed[topo.bones[b].second] = true;
        order.push_back(b);
        progress = true;
      }
    }
  }
  return {root, order};
}

}  // namespace

void SkeletonTopology::validate() const {
  const std::size_t V = joint_count();
  if (V == 0) throw ConfigError("topology: no joints");
  if (bones.size() != V - 1) {
    throw ConfigError("topology: a tree over " + std::to_string(V) + " joints needs " +
                      std::to_string(V - 1) + " bones, got " + std::to_string(bones.size()));
  }
  if (limb_radius_m.size() != bones.size()) {
    throw ConfigError("topology: need one limb radius per bone");
  }
  for (double r : limb_radius_m) {
    if (!(r > 0.0)) throw ConfigError("topology: limb radii must be positive");
  }
  std::vector<std::size_t> child_count(V, 0);
  for (const auto& [p, c] : bones) {
    if (p >= V || c >= V) throw ConfigError("topology: bone joint index out of range");
    child_count[c] += 1;
  }
  std::size_t roots = 0;
  for (std::size_t v = 0; v < V; ++v) {
    if (child_count[v] == 0) roots += 1;
    if (child_count[v] > 1) throw ConfigError("topology: joint has two parents (cycle)");
  }
  if (roots != 1) throw ConfigError("topology: bones do not form a single connected tree");
  const auto [root, order] = bone_traversal(*this);
  if (order.size() != bones.size()) {
    throw ConfigError("topology: bones are not connected to the root");
  }
}

SkeletonTopology SkeletonTopology::default_human15() {
  SkeletonTopology topo;
  topo.joint_names = {"pelvis",     "neck",       "head",    "l_shoulder", "l_elbow",
                      "l_wrist",    "r_shoulder", "r_elbow", "r_wrist",    "l_hip",
                      "l_knee",     "l_ankle",    "r_hip",   "r_knee",     "r_ankle"};
  topo.bones = {{0, 1}, {1, 2}, {1, 3}, {3, 4}, {4, 5}, {1, 6}, {6, 7},
                {7, 8}, {0, 9}, {9, 10}, {10, 11}, {0, 12}, {12, 13}, {13, 14}};
  // Radii in meters, rounded from a coarse anthropometric table.
  topo.limb_radius_m = {0.10, 0.06, 0.05, 0.05, 0.045, 0.05, 0.05,
                        0.045, 0.07, 0.07, 0.055, 0.07, 0.07, 0.055};
  topo.validate();
  return topo;
}

void MotionSequence::validate() const {
  if (joints == 0 || frames.empty()) throw ParseError("sequence " + id + ": empty");
  if (frames.size() % (joints * 3) != 0) {
    throw ParseError("sequence " + id + ": frame buffer not a multiple of 3*V");
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!std::isfinite(frames[i])) {
      throw ParseError("sequence " + id + ": non-finite coordinate at record " +
                       std::to_string(i / (joints * 3)) + ", value index " +
                       std::to_string(i % (joints * 3)));
    }
  }
  for (std::size_t f : collision_frames) {
    if (f >= frame_count()) {
      throw ParseError("sequence " + id + ": collision frame " + std::to_string(f) +
                       " out of range");
    }
  }
  if (!(fps > 0.0)) throw ParseError("sequence " + id + ": fps must be positive");
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  corpus.topology.validate();
  std::filesystem::create_directories(dir);
  json topo;
  topo["joint_names"] = corpus.topology.joint_names;
  topo["bones"] = json::array();
  for (const auto& [p, c] : corpus.topology.bones) topo["bones"].push_back({p, c});
  topo["limb_radius_m"] = corpus.topology.limb_radius_m;
  {
    std::ofstream out(dir / "topology.json", std::ios::trunc);
    if (!out) throw ParseError("cannot write " + (dir / "topology.json").string());
    out << topo.dump(2) << "\n";
  }
  for (const MotionSequence& seq : corpus.sequences) {
    seq.validate();
    std::ofstream out(dir / (seq.id + ".seq"), std::ios::trunc);
    if (!out) throw ParseError("cannot write sequence " + seq.id);
    out << "SEQ v1 fps=" << fmt_double(seq.fps) << " subject=" << seq.subject_id
        << " action=" << seq.action_label << " V=" << seq.joints << "\n";
    if (!seq.collision_frames.empty()) {
      out << "collisions=";
      for (std::size_t i = 0; i < seq.collision_frames.size(); ++i) {
        if (i) out << ",";
        out << seq.collision_frames[i];
      }
      out << "\n";
    }
    const std::size_t per_line = seq.joints * 3;
    for (std::size_t t = 0; t < seq.frame_count(); ++t) {
      for (std::size_t i = 0; i < per_line; ++i) {
        if (i) out << ' ';
        out << fmt_double(seq.frames[t * per_line + i]);
      }
      out << "\n";
    }
  }
}

Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ParseError("corpus: " + dir.string() + " is not a directory");
  }
  Corpus corpus;
  {
    std::ifstream in(dir / "topology.json");
    if (!in) throw ParseError("corpus: missing " + (dir / "topology.json").string());
    json topo = json::parse(in);
    corpus.topology.joint_names = topo.at("joint_names").get<std::vector<std::string>>();
    for (const auto& bone : topo.at("bones")) {
      corpus.topology.bones.emplace_back(bone.at(0).get<std::size_t>(),
                                         bone.at(1).get<std::size_t>());
    }
    corpus.topology.limb_radius_m = topo.at("limb_radius_m").get<std::vector<double>>();
    corpus.topology.validate();
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".seq") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ParseError("corpus: no .seq files in " + dir.string());

  const std::size_t V = corpus.topology.joint_count();
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw ParseError("corpus: cannot open " + file.string());
    MotionSequence seq;
    seq.id = file.stem().string();
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ParseError(file.string() + ": empty file");
    ++line_no;
    auto tokens = split_ws(line);
    if (tokens.size() != 6 || tokens[0] != "SEQ" || tokens[1] != "v1") {
      throw ParseError(file.string() + ":1: bad header '" + line + "'");
    }
    auto field = [&file](std::string_view token, std::string_view key) {
      if (!token.starts_with(key)) {
        throw ParseError(file.string() + ":1: expected '" + std::string(key) + "', got '" +
                         std::string(token) + "'");
      }
      return token.substr(key.size());
    };
    seq.fps = parse_double(field(tokens[2], "fps="), file.string() + ":1");
    seq.subject_id = std::string(field(tokens[3], "subject="));
    seq.action_label = std::string(field(tokens[4], "action="));
    const auto v_declared =
        static_cast<std::size_t>(parse_double(field(tokens[5], "V="), file.string() + ":1"));
    if (v_declared != V) {
      throw ParseError(file.string() + ":1: V=" + std::to_string(v_declared) +
                       " does not match topology joint count " + std::to_string(V));
    }
    seq.joints = V;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      if (line.starts_with("collisions=")) {
        std::string_view list = std::string_view(line).substr(11);
        while (!list.empty()) {
          const std::size_t comma = list.find(',');
          std::string_view tok = list.substr(0, comma);
          seq.collision_frames.push_back(static_cast<std::size_t>(
              parse_double(tok, file.string() + ":" + std::to_string(line_no))));
          if (comma == std::string_view::npos) break;
          list.remove_prefix(comma + 1);
        }
        continue;
      }
      auto vals = split_ws(line);
      if (vals.size() != V * 3) {
        throw ParseError(file.string() + ":" + std::to_string(line_no) + ": expected " +
                         std::to_string(V * 3) + " values, got " + std::to_string(vals.size()));
      }
      for (auto tok : vals) {
        seq.frames.push_back(parse_double(tok, file.string() + ":" + std::to_string(line_no)));
      }
    }
    seq.validate();
    if (!corpus.sequences.empty() && seq.fps != corpus.sequences.front().fps) {
      throw ParseError(file.string() + ": fps " + fmt_double(seq.fps) +
                       " differs from corpus fps " + fmt_double(corpus.sequences.front().fps));
    }
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

std::vector<WindowedExample> window_sequences(std::span<const MotionSequence> sequences,
                                              std::size_t input_frames, std::size_t target_frames,
                                              std::size_t stride, bool exclude_collisions) {
  if (stride == 0) throw ConfigError("windowing: stride must be positive");
  std::vector<WindowedExample> out;
  const std::size_t window = input_frames + target_frames;
  for (const MotionSequence& seq : sequences) {
    if (seq.frame_count() < window) continue;
    const std::size_t guard = static_cast<std::size_t>(std::lround(seq.fps));
    for (std::size_t start = 0; start + window <= seq.frame_count(); start += stride) {
      if (exclude_collisions) {
        bool blocked = false;
        for (std::size_t cf : seq.collision_frames) {
          // Guard interval: the collision frame plus one second afterwards.
          if (start < cf + guard + 1 && cf < start + window) {
            blocked = true;
            break;
          }
        }
        if (blocked) continue;
      }
      WindowedExample ex;
      ex.sequence_id = seq.id;
      ex.subject_id = seq.subject_id;
      ex.action_label = seq.action_label;
      ex.start_frame = start;
      ex.joints = seq.joints;
      ex.input_frames = input_frames;
      ex.target_frames = target_frames;
      const std::size_t per_frame = seq.joints * 3;
      ex.input.assign(seq.frames.begin() + static_cast<std::ptrdiff_t>(start * per_frame),
                      seq.frames.begin() +
                          static_cast<std::ptrdiff_t>((start + input_frames) * per_frame));
      ex.target.assign(
          seq.frames.begin() + static_cast<std::ptrdiff_t>((start + input_frames) * per_frame),
          seq.frames.begin() + static_cast<std::ptrdiff_t>((start + window) * per_frame));
      out.push_back(std::move(ex));
    }
  }
  return out;
}

DatasetSplit make_split(const Corpus& corpus, std::array<double, 3> fractions,
                        std::uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
  std::vector<std::string> subjects;
  for (const MotionSequence& seq : corpus.sequences) {
    if (std::find(subjects.begin(), subjects.end(), seq.subject_id) == subjects.end()) {
      subjects.push_back(seq.subject_id);
    }
  }
  std::sort(subjects.begin(), subjects.end());
  std::size_t positive_classes = 0;
  for (double f : fractions) {
    if (f > 0.0) positive_classes += 1;
  }
  if (subjects.size() < positive_classes) {
    throw ConfigError("split: " + std::to_string(subjects.size()) +
                      " subjects cannot fill " + std::to_string(positive_classes) + " classes");
  }
  Rng rng(seed);
  rng.shuffle(subjects);

  const std::size_t n = subjects.size();
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(exact);
    remainders[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (remainders[i] > remainders[best]) best = i;
    }
    counts[best] += 1;
    remainders[best] = -1.0;
    assigned += 1;
  }
  // Every class with a positive fraction must own at least one subject.
  for (std::size_t i = 0; i < 3; ++i) {
    if (fractions[i] > 0.0 && counts[i] == 0) {
      std::size_t donor = 0;
      for (std::size_t j = 1; j < 3; ++j) {
        if (counts[j] > counts[donor]) donor = j;
      }
      counts[donor] -= 1;
      counts[i] += 1;
    }
  }
  DatasetSplit split;
  split.seed = seed;
  std::size_t at = 0;
  split.train_subjects.assign(subjects.begin() + at, subjects.begin() + at + counts[0]);
  at += counts[0];
  split.validation_subjects.assign(subjects.begin() + at, subjects.begin() + at + counts[1]);
  at += counts[1];
  split.test_subjects.assign(subjects.begin() + at, subjects.begin() + at + counts[2]);
  return split;
}

std::vector<MotionSequence> sequences_for(const Corpus& corpus,
                                          std::span<const std::string> subjects) {
  std::vector<MotionSequence> out;
  for (const MotionSequence& seq : corpus.sequences) {
    if (std::find(subjects.begin(), subjects.end(), seq.subject_id) != subjects.end()) {
      out.push_back(seq);
    }
  }
  return out;
}

void MotionParams::validate() const {
  if (subjects == 0) throw ConfigError("motion params: need at least one subject");
  if (amplitude_min_rad < 0.0 || amplitude_max_rad < amplitude_min_rad) {
    throw ConfigError("motion params: bad amplitude range");
  }
  if (frequency_min_hz < 0.0 || frequency_max_hz < frequency_min_hz) {
    throw ConfigError("motion params: bad frequency range");
  }
  if (drift_speed_mm_s < 0.0 || sway_amplitude_mm < 0.0 || sway_frequency_hz < 0.0) {
    throw ConfigError("motion params: drift/sway must be non-negative");
  }
  for (const ReachSpec& reach : reaches) {
    if (reach.duration_frames == 0) throw ConfigError("motion params: reach duration is zero");
  }
}

std::vector<std::array<double, 3>> rest_offsets_m(const SkeletonTopology& topology) {
  // Anatomical offsets for the default skeleton; z is up, x forward.
  static const std::vector<Vec3> kHuman15 = {
      {0.0, 0.0, 0.50},    // pelvis->neck
      {0.0, 0.0, 0.15},    // neck->head
      {0.0, 0.18, 0.0},    // neck->l_shoulder
      {0.0, 0.28, -0.04},  // l_shoulder->l_elbow
      {0.04, 0.25, 0.0},   // l_elbow->l_wrist
      {0.0, -0.18, 0.0},   // neck->r_shoulder
      {0.0, -0.28, -0.04}, // r_shoulder->r_elbow
      {0.04, -0.25, 0.0},  // r_elbow->r_wrist
      {0.0, 0.11, -0.02},  // pelvis->l_hip
      {0.0, 0.0, -0.42},   // l_hip->l_knee
      {0.02, 0.0, -0.42},  // l_knee->l_ankle
      {0.0, -0.11, -0.02}, // pelvis->r_hip
      {0.0, 0.0, -0.42},   // r_hip->r_knee
      {0.02, 0.0, -0.42},  // r_knee->r_ankle
  };
  const auto& def = SkeletonTopology::default_human15();
  if (topology.bones == def.bones && topology.joint_count() == def.joint_count()) {
    return std::vector<std::array<double, 3>>(kHuman15.begin(), kHuman15.end());
  }
  // Unknown skeleton: deterministic synthetic limb directions.
  Rng rng(0x5e5f0ffULL + topology.joint_count());
  std::vector<std::array<double, 3>> out;
  out.reserve(topology.bones.size());
  for (std::size_t b = 0; b < topology.bones.size(); ++b) {
    const Vec3 dir = random_unit(rng);
    const double len = rng.uniform(0.15, 0.45);
    out.push_back({dir[0] * len, dir[1] * len, dir[2] * len});
  }
  return out;
}

double max_step_bound_mm(const SkeletonTopology& topology, const MotionParams& params,
                         double fps) {
  const auto offsets = rest_offsets_m(topology);
  // Subtree reach of each bone: its own length plus everything below it.
  std::vector<double> subtree_mm(topology.bones.size(), 0.0);
  const auto [root, order] = bone_traversal(topology);
  (void)root;
  std::vector<double> joint_subtree(topology.joint_count(), 0.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::size_t b = *it;
    const auto& [p, c] = topology.bones[b];
    const double len = vec_norm(offsets[b]) * 1000.0;
    subtree_mm[b] = len + joint_subtree[c];
    joint_subtree[p] += subtree_mm[b];
  }
  const double dt = 1.0 / fps;
  const double max_body_scale = 1.08;  // matches the generator's subject scaling
  const double omega = params.amplitude_max_rad * 2.0 * kPi * params.frequency_max_hz;
  double bound = params.drift_speed_mm_s * dt;
  bound += std::sqrt(3.0) * params.sway_amplitude_mm * 2.0 * kPi * params.sway_frequency_hz * dt;
  for (double reach : subtree_mm) bound += max_body_scale * reach * omega * dt;
  for (const ReachSpec& reach : params.reaches) {
    if (reach.bone_index < subtree_mm.size()) {
      bound += max_body_scale * subtree_mm[reach.bone_index] * kPi * kPi /
               static_cast<double>(reach.duration_frames);
    }
  }
  return bound;
}

std::vector<MotionSequence> synth_generate(const SkeletonTopology& topology,
                                           std::size_t n_sequences, std::size_t length,
                                           double fps, const MotionParams& params,
                                           std::uint64_t seed) {
  topology.validate();
  params.validate();
  if (length == 0) throw ConfigError("synth: sequence length must be positive");
  if (!(fps > 0.0)) throw ConfigError("synth: fps must be positive");
  const auto offsets = rest_offsets_m(topology);
  const auto [root, order] = bone_traversal(topology);
  const std::size_t V = topology.joint_count();
  const std::size_t n_bones = topology.bones.size();
  static const char* kActions[] = {"wave", "walk", "reach", "mix"};

  Rng master(seed);
  std::vector<MotionSequence> out;
  out.reserve(n_sequences);
  for (std::size_t s = 0; s < n_sequences; ++s) {
    Rng rng = master.fork(s);
    const std::size_t subject = s % params.subjects;
    Rng subject_rng(seed ^ (0xabcd1234ULL + subject));
    const double body_scale = subject_rng.uniform(0.92, 1.08);

    MotionSequence seq;
    char id[32];
    std::snprintf(id, sizeof(id), "s%02zu_%03zu", subject, s);
    seq.id = id;
    char sid[8];
    std::snprintf(sid, sizeof(sid), "s%02zu", subject);
    seq.subject_id = sid;
    seq.action_label = kActions[s % 4];
    seq.fps = fps;
    seq.joints = V;
    seq.frames.resize(length * V * 3);

    // Per-bone oscillation draws.
    std::vector<Vec3> axes(n_bones);
    std::vector<double> amps(n_bones), freqs(n_bones), phases(n_bones);
    for (std::size_t b = 0; b < n_bones; ++b) {
      axes[b] = random_unit(rng);
      amps[b] = rng.uniform(params.amplitude_min_rad, params.amplitude_max_rad);
      freqs[b] = rng.uniform(params.frequency_min_hz, params.frequency_max_hz);
      phases[b] = rng.uniform(0.0, 2.0 * kPi);
    }
    const Vec3 base{rng.uniform(-300.0, 300.0), rng.uniform(-300.0, 300.0),
                    rng.uniform(900.0, 1100.0)};
    const double drift_heading = rng.uniform(0.0, 2.0 * kPi);
    const Vec3 drift_dir{std::cos(drift_heading), std::sin(drift_heading), 0.0};
    const Vec3 sway_phase{rng.uniform(0.0, 2.0 * kPi), rng.uniform(0.0, 2.0 * kPi),
                          rng.uniform(0.0, 2.0 * kPi)};

    std::vector<Vec3> joint_pos(V);
    std::vector<Mat3> joint_rot(V);
    for (std::size_t f = 0; f < length; ++f) {
      const double t = static_cast<double>(f) / fps;
      const double sway_w = 2.0 * kPi * params.sway_frequency_hz;
      joint_pos[root] = {
          base[0] + params.drift_speed_mm_s * t * drift_dir[0] +
              params.sway_amplitude_mm * std::sin(sway_w * t + sway_phase[0]),
          base[1] + params.drift_speed_mm_s * t * drift_dir[1] +
              params.sway_amplitude_mm * std::sin(sway_w * t + sway_phase[1]),
          base[2] + params.sway_amplitude_mm * std::sin(sway_w * t + sway_phase[2])};
      joint_rot[root] = mat3_identity();
      for (std::size_t b : order) {
        const auto& [parent, child] = topology.bones[b];
        const double theta = amps[b] * std::sin(2.0 * kPi * freqs[b] * t + phases[b]);
        Mat3 rot = mat3_mul(joint_rot[parent], axis_angle(axes[b], theta));
        // Scripted reach: swing this bone (and its subtree) toward a target.
        for (const ReachSpec& reach : params.reaches) {
          if (reach.sequence_index != s || reach.bone_index != b) continue;
          if (f < reach.start_frame || f >= reach.start_frame + reach.duration_frames) continue;
          const double u = static_cast<double>(f - reach.start_frame) /
                           static_cast<double>(reach.duration_frames);
          const double blend = std::sin(kPi * u) * std::sin(kPi * u);
          Vec3 current = mat3_apply(rot, offsets[b]);
          const double cn = vec_norm(current);
          Vec3 desired = vec_sub(reach.target_mm, joint_pos[parent]);
          const double dn = vec_norm(desired);
          if (cn > 1e-12 && dn > 1e-12) {
            current = {current[0] / cn, current[1] / cn, current[2] / cn};
            desired = {desired[0] / dn, desired[1] / dn, desired[2] / dn};
            Vec3 axis = vec_cross(current, desired);
            const double axis_len = vec_norm(axis);
            if (axis_len > 1e-9) {
              axis = {axis[0] / axis_len, axis[1] / axis_len, axis[2] / axis_len};
              const double angle = std::atan2(axis_len, vec_dot(current, desired));
              rot = mat3_mul(axis_angle(axis, blend * angle), rot);
            }
          }
        }
        joint_rot[child] = rot;
        const Vec3 limb = mat3_apply(rot, offsets[b]);
        joint_pos[child] = {joint_pos[parent][0] + limb[0] * 1000.0 * body_scale,
                            joint_pos[parent][1] + limb[1] * 1000.0 * body_scale,
                            joint_pos[parent][2] + limb[2] * 1000.0 * body_scale};
      }
      for (std::size_t v = 0; v < V; ++v) {
        seq.frames[(f * V + v) * 3 + 0] = joint_pos[v][0];
        seq.frames[(f * V + v) * 3 + 1] = joint_pos[v][1];
        seq.frames[(f * V + v) * 3 + 2] = joint_pos[v][2];
      }
    }
    seq.validate();
    out.push_back(std::move(seq));
  }
  return out;
}

Tensor frames_to_tensor(std::span<const double> frames, std::size_t n_frames,
                        std::size_t joints) {
  if (frames.size() != n_frames * joints * 3) {
    throw ContractViolation("frames_to_tensor: buffer size does not match [T,V,3]");
  }
  std::vector<double> values(3 * joints * n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) {
    for (std::size_t v = 0; v < joints; ++v) {
      for (std::size_t c = 0; c < 3; ++c) {
        values[(c * joints + v) * n_frames + t] = frames[(t * joints + v) * 3 + c];
      }
    }
  }
  return Tensor::from_values({3, joints, n_frames}, std::move(values));
}

std::vector<double> tensor_to_frames(const Tensor& t) {
  if (t.rank() != 3 || t.shape()[0] != 3) {
    throw ContractViolation("tensor_to_frames: expected [3,V,T], got " + shape_str(t.shape()));
  }
  const std::size_t V = t.shape()[1], T = t.shape()[2];
  const auto vals = t.values();
  std::vector<double> frames(T * V * 3);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t f = 0; f < T; ++f) {
        frames[(f * V + v) * 3 + c] = vals[(c * V + v) * T + f];
      }
    }
  }
  return frames;
}

}  // namespace sesf
