#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dshadow/error.hpp"
#include "dshadow/face.hpp"
#include "dshadow/image.hpp"
#include "dshadow/random.hpp"
#include "dshadow/stream.hpp"

namespace dshadow {

// A detected face: its box plus whatever the detector could supply
// (pixel crop, ready-made embedding, or both).
struct DetectedFace {
  FaceBox box;
  std::optional<Image> crop;
  std::optional<FaceEmbedding> embedding;
  std::optional<std::string> identity_label;  // ground truth carried through by the stub
  std::optional<double> true_risk;
};

// ---- detection -------------------------------------------------------------

class DetectorHandle {
 public:
  using Plugin = std::function<std::vector<DetectedFace>(const FrameRecord&)>;

  // Reads faces straight from the frame's annotations.
  static DetectorHandle annotation_stub() { return DetectorHandle{}; }
  static DetectorHandle plugin(Plugin fn) {
    DetectorHandle h;
    h.plugin_ = std::move(fn);
    return h;
  }

  bool is_stub() const { return !plugin_; }
  const Plugin& plugin_fn() const { return plugin_; }

 private:
  Plugin plugin_;
};

inline std::vector<DetectedFace> detect_faces(const FrameRecord& frame, const DetectorHandle& detector) {
  if (!detector.is_stub()) {
    try {
      return detector.plugin_fn()(frame);
    } catch (const std::exception& e) {
      fail(ErrorKind::detection, "frame " + std::to_string(frame.frame_index) + ": " + e.what());
    }
  }
  std::vector<DetectedFace> faces;
  faces.reserve(frame.annotations.size());
  for (const auto& a : frame.annotations) {
    DetectedFace f;
    f.box = a.box;
    if (!frame.image.empty()) f.crop = crop(frame.image, a.box.x, a.box.y, a.box.w, a.box.h);
    f.embedding = a.embedding;
    f.identity_label = a.identity_label;
    f.true_risk = a.true_risk;
    faces.push_back(std::move(f));
  }
  return faces;
}

// ---- embedding -------------------------------------------------------------

class EmbedderHandle {
 public:
  enum class Kind { passthrough, hash_projection, plugin };
  using Plugin = std::function<FaceEmbedding(const DetectedFace&)>;

  static EmbedderHandle passthrough(std::size_t dimension) { return EmbedderHandle(Kind::passthrough, dimension); }
  static EmbedderHandle hash_projection(std::size_t dimension, std::uint64_t seed = 0x5eed) {
    EmbedderHandle h(Kind::hash_projection, dimension);
    h.seed_ = seed;
    return h;
  }
  static EmbedderHandle plugin(std::size_t dimension, Plugin fn) {
    EmbedderHandle h(Kind::plugin, dimension);
    h.plugin_ = std::move(fn);
    return h;
  }

  Kind kind() const { return kind_; }
  std::size_t dimension() const { return dimension_; }
  std::uint64_t seed() const { return seed_; }
  const Plugin& plugin_fn() const { return plugin_; }

 private:
  EmbedderHandle(Kind k, std::size_t d) : kind_(k), dimension_(d) {}

  Kind kind_;
  std::size_t dimension_;
  std::uint64_t seed_ = 0;
  Plugin plugin_;
};

namespace detail {

// Fixed pseudo-random projection weight in [-1, 1) for (pixel component, output dim).
inline double projection_weight(std::uint64_t seed, std::uint64_t component, std::uint64_t out_dim) {
  const std::uint64_t h = mix64(seed ^ mix64(component * 0x100000001b3ULL + out_dim));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

inline FaceEmbedding unit_or_normalize(FaceEmbedding e) {
  if (std::abs(l2_norm(e.vector) - 1.0) <= 1e-12) {
    e.normalized = true;
    return e;
  }
  return normalize(std::move(e.vector));
}

}  // namespace detail

inline FaceEmbedding hash_project(const Image& crop, std::size_t dimension, std::uint64_t seed) {
  require(!crop.empty(), ErrorKind::config, "hash projection needs a non-empty pixel crop");
  std::vector<double> out(dimension, 0.0);
  for (std::size_t k = 0; k < crop.pixels.size(); ++k) {
    const double x = static_cast<double>(crop.pixels[k]) / 255.0 - 0.5;
    if (x == 0.0) continue;
    for (std::size_t j = 0; j < dimension; ++j) out[j] += x * detail::projection_weight(seed, k, j);
  }
  return normalize(std::move(out));
}

inline FaceEmbedding embed(const DetectedFace& face, const EmbedderHandle& embedder) {
  FaceEmbedding e;
  switch (embedder.kind()) {
    case EmbedderHandle::Kind::passthrough:
      require(face.embedding.has_value(), ErrorKind::config, "passthrough embedder needs an annotated embedding");
      require(!face.embedding->vector.empty(), ErrorKind::config, "empty embedding");
      e = *face.embedding;
      break;
    case EmbedderHandle::Kind::hash_projection:
      require(face.crop.has_value(), ErrorKind::config, "hash projection embedder needs a pixel crop");
      return hash_project(*face.crop, embedder.dimension(), embedder.seed());
    case EmbedderHandle::Kind::plugin:
      e = embedder.plugin_fn()(face);
      break;
  }
  require(e.dimension() == embedder.dimension(), ErrorKind::dimension,
          "embedding has dimension " + std::to_string(e.dimension()) + ", expected " +
              std::to_string(embedder.dimension()));
  return detail::unit_or_normalize(std::move(e));
}

// ---- registry --------------------------------------------------------------

struct RegistryEntry {
  std::string label;
  std::vector<FaceEmbedding> templates;

  friend bool operator==(const RegistryEntry&, const RegistryEntry&) = default;
};

struct MatchResult {
  std::string label;
  double distance = 0.0;
  bool accepted = false;
};

// Labeled identity database. Entries keep insertion order; matching does not
// depend on it.
class FaceRegistry {
 public:
  explicit FaceRegistry(std::size_t dimension = 0) : dimension_(dimension) {}

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<RegistryEntry>& entries() const { return entries_; }

  bool contains(const std::string& label) const { return find(label) != nullptr; }

  const RegistryEntry* find(const std::string& label) const {
    for (const auto& e : entries_)
      if (e.label == label) return &e;
    return nullptr;
  }

  void add(const FaceEmbedding& probe, const std::string& label) {
    require(!label.empty(), ErrorKind::config, "registry label must be non-empty");
    require(!probe.vector.empty(), ErrorKind::dimension, "empty embedding");
    if (dimension_ == 0) dimension_ = probe.dimension();
    require(probe.dimension() == dimension_, ErrorKind::dimension,
            "embedding has dimension " + std::to_string(probe.dimension()) + ", registry expects " +
                std::to_string(dimension_));
    for (auto& e : entries_)
      if (e.label == label) {
        e.templates.push_back(probe);
        return;
      }
    entries_.push_back({label, {probe}});
  }

  friend bool operator==(const FaceRegistry&, const FaceRegistry&) = default;

 private:
  std::size_t dimension_;
  std::vector<RegistryEntry> entries_;
};

// Nearest registered identity by L2 distance (min over each label's
// templates). Ties go to the lexicographically smallest label. Returns
// nullopt only for an empty registry; rejection by the threshold is reported
// through MatchResult::accepted.
inline std::optional<MatchResult> match_identity(const FaceEmbedding& probe, const FaceRegistry& registry,
                                                 double threshold) {
  require(threshold >= 0.0, ErrorKind::config, "match threshold must be non-negative");
  if (registry.empty()) return std::nullopt;
  require(probe.dimension() == registry.dimension(), ErrorKind::dimension,
          "probe dimension " + std::to_string(probe.dimension()) + " != registry dimension " +
              std::to_string(registry.dimension()));
  const RegistryEntry* best = nullptr;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& e : registry.entries()) {
    for (const auto& t : e.templates) {
      const double d = l2_distance(probe.vector, t.vector);
      if (d < best_d || (d == best_d && best != nullptr && e.label < best->label)) {
        best_d = d;
        best = &e;
      }
    }
  }
  return MatchResult{best->label, best_d, best_d <= threshold};
}

inline FaceRegistry register_face(const FaceEmbedding& probe, const std::string& label, FaceRegistry registry) {
  registry.add(probe, label);
  return registry;
}

inline nlohmann::json to_json(const FaceRegistry& r) {
  nlohmann::json j;
  j["dimension"] = r.dimension();
  j["entries"] = nlohmann::json::array();
  for (const auto& e : r.entries()) {
    nlohmann::json templates = nlohmann::json::array();
    for (const auto& t : e.templates) templates.push_back(t.vector);
    j["entries"].push_back({{"label", e.label}, {"templates", templates}});
  }
  return j;
}

inline FaceRegistry registry_from_json(const nlohmann::json& j) {
  try {
    FaceRegistry r(j.at("dimension").get<std::size_t>());
    for (const auto& e : j.at("entries")) {
      const auto label = e.at("label").get<std::string>();
      for (const auto& t : e.at("templates")) {
        FaceEmbedding emb{t.get<std::vector<double>>(), false};
        emb.normalized = std::abs(l2_norm(emb.vector) - 1.0) <= 1e-9;
        r.add(emb, label);
      }
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("registry document: ") + e.what());
  }
}

inline FaceRegistry load_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open registry " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, "registry " + path.string() + ": " + e.what());
  }
  return registry_from_json(j);
}

inline void save_registry(const FaceRegistry& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write registry " + path.string());
  out << to_json(r).dump(2) << '\n';
}

// Copy-on-write holder: readers take immutable snapshots, writers are
// serialized and publish a new version.
class SharedRegistry {
 public:
  explicit SharedRegistry(FaceRegistry initial = FaceRegistry{})
      : current_(std::make_shared<const FaceRegistry>(std::move(initial))) {}

  std::shared_ptr<const FaceRegistry> snapshot() const {
    std::lock_guard lock(mu_);
    return current_;
  }

  void register_face(const FaceEmbedding& probe, const std::string& label) {
    std::lock_guard writer(write_mu_);
    auto next = std::make_shared<FaceRegistry>(*snapshot());
    next->add(probe, label);
    std::lock_guard lock(mu_);
    current_ = std::move(next);
  }

  std::optional<MatchResult> match(const FaceEmbedding& probe, double threshold) const {
    return match_identity(probe, *snapshot(), threshold);
  }

 private:
  mutable std::mutex mu_;
  std::mutex write_mu_;
  std::shared_ptr<const FaceRegistry> current_;
};

}  // namespace dshadow
