#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dshadow/error.hpp"
#include "dshadow/face.hpp"
#include "dshadow/image.hpp"
#include "dshadow/random.hpp"

namespace dshadow {

using json = nlohmann::json;

struct FaceAnnotation {
  FaceBox box;
  std::optional<std::string> identity_label;
  std::optional<FaceEmbedding> embedding;
  std::optional<double> true_risk;

  friend bool operator==(const FaceAnnotation&, const FaceAnnotation&) = default;
};

struct FrameRecord {
  std::string stream_id;
  std::uint64_t frame_index = 0;
  std::int64_t timestamp_ms = 0;
  Image image;  // empty for embedding-only frames
  std::vector<FaceAnnotation> annotations;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct ManifestEntry {
  std::uint64_t frame_index = 0;
  std::optional<std::int64_t> timestamp_ms;  // auto-filled from fps when absent
  std::optional<std::string> image_path;     // relative paths resolve against the manifest directory
  std::vector<FaceAnnotation> annotations;
};

struct StreamManifest {
  std::string stream_id = "stream";
  double fps = 30.0;
  std::int64_t start_ms = 0;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;
};

// Timestamp for a frame when the manifest leaves it implicit. Rounding the
// absolute offset (not the per-frame step) keeps drift below 1 ms.
inline std::int64_t auto_timestamp(std::int64_t start_ms, std::uint64_t frame_index, double fps) {
  return start_ms + std::llround(static_cast<double>(frame_index) * 1000.0 / fps);
}

inline std::int64_t entry_timestamp(const StreamManifest& m, const ManifestEntry& e) {
  return e.timestamp_ms ? *e.timestamp_ms : auto_timestamp(m.start_ms, e.frame_index, m.fps);
}

// ---- JSON mapping ----------------------------------------------------------

inline json to_json(const FaceAnnotation& a) {
  json j;
  j["box"] = {{"x", a.box.x}, {"y", a.box.y}, {"w", a.box.w}, {"h", a.box.h}, {"confidence", a.box.confidence}};
  if (a.identity_label) j["identity_label"] = *a.identity_label;
  if (a.embedding) j["embedding"] = a.embedding->vector;
  if (a.true_risk) j["true_risk"] = *a.true_risk;
  return j;
}

inline FaceAnnotation annotation_from_json(const json& j) {
  FaceAnnotation a;
  if (j.contains("box")) {
    const auto& b = j.at("box");
    a.box.x = b.at("x").get<int>();
    a.box.y = b.at("y").get<int>();
    a.box.w = b.at("w").get<int>();
    a.box.h = b.at("h").get<int>();
    a.box.confidence = b.value("confidence", 1.0);
  }
  validate(a.box);
  if (j.contains("identity_label") && !j.at("identity_label").is_null())
    a.identity_label = j.at("identity_label").get<std::string>();
  if (j.contains("embedding") && !j.at("embedding").is_null()) {
    FaceEmbedding e;
    e.vector = j.at("embedding").get<std::vector<double>>();
    e.normalized = std::abs(l2_norm(e.vector) - 1.0) <= 1e-9;
    a.embedding = std::move(e);
  }
  if (j.contains("true_risk") && !j.at("true_risk").is_null()) {
    const double r = j.at("true_risk").get<double>();
    require(r >= 0.0 && r <= 1.0, ErrorKind::range, "true_risk outside [0,1]");
    a.true_risk = r;
  }
  return a;
}

inline json to_json(const ManifestEntry& e) {
  json j;
  j["frame_index"] = e.frame_index;
  if (e.timestamp_ms) j["timestamp_ms"] = *e.timestamp_ms;
  if (e.image_path) j["image_path"] = *e.image_path;
  if (!e.annotations.empty()) {
    j["annotations"] = json::array();
    for (const auto& a : e.annotations) j["annotations"].push_back(to_json(a));
  }
  return j;
}

inline void validate(const StreamManifest& m) {
  require(m.fps > 0.0 && std::isfinite(m.fps), ErrorKind::config, "fps must be positive");
  std::optional<std::uint64_t> prev_index;
  std::optional<std::int64_t> prev_ts;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    if (prev_index && e.frame_index <= *prev_index)
      fail(ErrorKind::parse, "entry " + std::to_string(i) + ": frame_index not strictly increasing");
    const auto ts = entry_timestamp(m, e);
    if (prev_ts && ts < *prev_ts)
      fail(ErrorKind::parse, "entry " + std::to_string(i) + ": timestamp_ms decreases");
    prev_index = e.frame_index;
    prev_ts = ts;
  }
}

// Manifest files are JSONL. An optional first line without frame_index
// carries stream metadata: {"stream_id": ..., "fps": ..., "start_ms": ...}.
inline StreamManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {},
                                     std::string default_stream_id = "stream") {
  StreamManifest m;
  m.stream_id = std::move(default_stream_id);
  m.base_dir = base_dir;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      require(j.is_object(), ErrorKind::parse, "line is not a JSON object");
      if (!j.contains("frame_index")) {
        require(m.entries.empty(), ErrorKind::parse, "metadata line must precede entries");
        m.stream_id = j.value("stream_id", m.stream_id);
        m.fps = j.value("fps", m.fps);
        m.start_ms = j.value("start_ms", m.start_ms);
        continue;
      }
      ManifestEntry e;
      e.frame_index = j.at("frame_index").get<std::uint64_t>();
      if (j.contains("timestamp_ms") && !j.at("timestamp_ms").is_null())
        e.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
      if (j.contains("image_path") && !j.at("image_path").is_null())
        e.image_path = j.at("image_path").get<std::string>();
      if (j.contains("annotations"))
        for (const auto& a : j.at("annotations")) e.annotations.push_back(annotation_from_json(a));
      m.entries.push_back(std::move(e));
    } catch (const Error& err) {
      fail(ErrorKind::parse, "manifest line " + std::to_string(line_no) + ": " + err.what());
    } catch (const json::exception& err) {
      fail(ErrorKind::parse, "manifest line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  validate(m);
  return m;
}

inline StreamManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), path.stem().string());
}

inline void save_manifest(const StreamManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write manifest " + path.string());
  out << json{{"stream_id", m.stream_id}, {"fps", m.fps}, {"start_ms", m.start_ms}}.dump() << '\n';
  for (const auto& e : m.entries) out << to_json(e).dump() << '\n';
}

// ---- iteration -------------------------------------------------------------

// Single-consumer reader over a validated manifest. Images are decoded lazily.
class FrameStream {
 public:
  explicit FrameStream(StreamManifest manifest) : manifest_(std::move(manifest)) {
    validate(manifest_);
    for (std::size_t i = 0; i < manifest_.entries.size(); ++i) {
      const auto& e = manifest_.entries[i];
      if (e.image_path && !std::filesystem::exists(resolve(*e.image_path)))
        fail(ErrorKind::stream, "entry " + std::to_string(i) + " (frame " + std::to_string(e.frame_index) +
                                    "): image file missing: " + resolve(*e.image_path).string());
    }
  }

  const StreamManifest& manifest() const { return manifest_; }
  std::size_t size() const { return manifest_.entries.size(); }
  std::size_t position() const { return pos_; }

  std::optional<FrameRecord> next() {
    if (pos_ >= manifest_.entries.size()) return std::nullopt;
    const auto& e = manifest_.entries[pos_++];
    FrameRecord f;
    f.stream_id = manifest_.stream_id;
    f.frame_index = e.frame_index;
    f.timestamp_ms = entry_timestamp(manifest_, e);
    f.annotations = e.annotations;
    if (e.image_path) {
      try {
        f.image = load_image(resolve(*e.image_path));
      } catch (const Error& err) {
        fail(ErrorKind::stream, "frame " + std::to_string(e.frame_index) + ": " + err.what());
      }
      for (const auto& a : f.annotations)
        if (a.box.x + a.box.w > f.image.width || a.box.y + a.box.h > f.image.height)
          fail(ErrorKind::stream, "frame " + std::to_string(e.frame_index) + ": face box outside image bounds");
    }
    return f;
  }

  void rewind() { pos_ = 0; }

 private:
  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() || manifest_.base_dir.empty() ? path : manifest_.base_dir / path;
  }

  StreamManifest manifest_;
  std::size_t pos_ = 0;
};

inline FrameStream open_stream(StreamManifest manifest) { return FrameStream(std::move(manifest)); }

// ---- synthetic streams -----------------------------------------------------

struct RiskProcess {
  enum class Kind { constant, beta, step };
  Kind kind = Kind::constant;
  double value = 0.5;         // constant
  double a = 2.0, b = 5.0;    // beta
  double before = 0.2;        // step
  double after = 0.7;
  std::int64_t change_ms = 0;
  double noise_sd = 0.0;      // additive Normal noise for constant/step, clamped to [0,1]

  static RiskProcess constant_at(double v) { return {Kind::constant, v}; }
  static RiskProcess beta_iid(double a, double b) {
    RiskProcess p;
    p.kind = Kind::beta;
    p.a = a;
    p.b = b;
    return p;
  }
  static RiskProcess step_at(double before, double after, std::int64_t change_ms, double noise_sd = 0.0) {
    RiskProcess p;
    p.kind = Kind::step;
    p.before = before;
    p.after = after;
    p.change_ms = change_ms;
    p.noise_sd = noise_sd;
    return p;
  }

  // Population moments for i.i.d. processes (used by the stability oracle).
  double mean() const {
    switch (kind) {
      case Kind::constant: return value;
      case Kind::beta: return a / (a + b);
      case Kind::step: return before;
    }
    return 0.0;
  }
  double variance() const {
    if (kind == Kind::beta) return a * b / ((a + b) * (a + b) * (a + b + 1.0));
    return noise_sd * noise_sd;
  }

  double draw(Rng& rng, std::int64_t t_ms) const {
    double v = 0.0;
    switch (kind) {
      case Kind::constant: v = value; break;
      case Kind::beta: return sample_beta(rng, a, b);
      case Kind::step: v = t_ms < change_ms ? before : after; break;
    }
    if (noise_sd > 0.0) v += sample_normal(rng, 0.0, noise_sd);
    return std::clamp(v, 0.0, 1.0);
  }
};

inline void validate(const RiskProcess& p) {
  switch (p.kind) {
    case RiskProcess::Kind::constant:
      require(p.value >= 0.0 && p.value <= 1.0, ErrorKind::config, "constant risk outside [0,1]");
      break;
    case RiskProcess::Kind::beta:
      require(p.a > 0.0 && p.b > 0.0, ErrorKind::config, "beta parameters must be positive");
      break;
    case RiskProcess::Kind::step:
      require(p.before >= 0.0 && p.before <= 1.0 && p.after >= 0.0 && p.after <= 1.0, ErrorKind::config,
              "step risk levels outside [0,1]");
      break;
  }
  require(p.noise_sd >= 0.0, ErrorKind::config, "noise_sd must be non-negative");
}

struct SynthSubject {
  std::string label;
  RiskProcess process;
};

struct SynthSpec {
  std::vector<SynthSubject> subjects;
  double duration_s = 10.0;
  double fps = 30.0;
  std::uint64_t seed = 0;
  std::size_t dimension = 16;
  double embedding_jitter = 0.02;  // per-frame Gaussian jitter before renormalizing
  std::string stream_id = "synthetic";
  std::int64_t start_ms = 0;
};

// Identity vector the synthetic camera "sees" for a subject. Registries built
// for simulations enrol exactly this vector.
inline FaceEmbedding synth_base_embedding(std::uint64_t seed, const std::string& label, std::size_t dimension) {
  Rng rng(derive_seed(seed, "face:" + label));
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dimension);
  for (double& x : v) x = n(rng);
  return normalize(std::move(v));
}

inline StreamManifest synth_stream(const SynthSpec& spec) {
  require(!spec.subjects.empty(), ErrorKind::config, "synthetic stream needs at least one subject");
  require(spec.duration_s > 0.0, ErrorKind::config, "duration_s must be positive");
  require(spec.fps > 0.0, ErrorKind::config, "fps must be positive");
  require(spec.dimension >= 1, ErrorKind::config, "embedding dimension must be >= 1");
  for (const auto& s : spec.subjects) {
    require(!s.label.empty(), ErrorKind::config, "subject label must be non-empty");
    validate(s.process);
  }

  StreamManifest m;
  m.stream_id = spec.stream_id;
  m.fps = spec.fps;
  m.start_ms = spec.start_ms;
  const auto frames = static_cast<std::uint64_t>(std::llround(spec.duration_s * spec.fps));

  struct SubjectState {
    FaceEmbedding base;
    Rng risk_rng;
    Rng jitter_rng;
  };
  std::vector<SubjectState> state;
  for (const auto& s : spec.subjects)
    state.push_back({synth_base_embedding(spec.seed, s.label, spec.dimension),
                     Rng(derive_seed(spec.seed, "risk:" + s.label)), Rng(derive_seed(spec.seed, "jitter:" + s.label))});

  m.entries.reserve(frames);
  for (std::uint64_t i = 0; i < frames; ++i) {
    ManifestEntry e;
    e.frame_index = i;
    e.timestamp_ms = auto_timestamp(spec.start_ms, i, spec.fps);
    for (std::size_t k = 0; k < spec.subjects.size(); ++k) {
      auto& st = state[k];
      FaceAnnotation a;
      a.box = FaceBox{static_cast<int>(16 + 96 * k), 16, 64, 64, 1.0};
      a.identity_label = spec.subjects[k].label;
      a.true_risk = spec.subjects[k].process.draw(st.risk_rng, *e.timestamp_ms);
      if (spec.embedding_jitter > 0.0) {
        std::normal_distribution<double> n(0.0, spec.embedding_jitter);
        std::vector<double> v = st.base.vector;
        for (double& x : v) x += n(st.jitter_rng);
        a.embedding = normalize(std::move(v));
      } else {
        a.embedding = st.base;
      }
      e.annotations.push_back(std::move(a));
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace dshadow
