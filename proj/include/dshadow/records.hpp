#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "dshadow/analytics.hpp"
#include "dshadow/error.hpp"
#include "dshadow/identity.hpp"

namespace dshadow {

enum class Sex { female, male, other };

inline const char* to_string(Sex s) {
  switch (s) {
    case Sex::female: return "female";
    case Sex::male: return "male";
    case Sex::other: return "other";
  }
  return "other";
}

inline Sex sex_from_string(const std::string& s) {
  if (s == "female" || s == "F" || s == "f") return Sex::female;
  if (s == "male" || s == "M" || s == "m") return Sex::male;
  if (s == "other") return Sex::other;
  fail(ErrorKind::parse, "unknown sex value '" + s + "'");
}

struct HistoryNote {
  std::int64_t timestamp_ms = 0;
  std::string note;

  friend bool operator==(const HistoryNote&, const HistoryNote&) = default;
};

struct HealthRecord {
  std::string subject_id;
  std::optional<int> age_years;
  std::optional<Sex> sex;
  std::string chief_complaint;
  std::vector<HistoryNote> history;

  friend bool operator==(const HealthRecord&, const HealthRecord&) = default;
};

struct SubjectProfile {
  std::string subject_id;
  std::string registry_label;
  HealthRecord health_record;
  std::int64_t created_ms = 0;

  friend bool operator==(const SubjectProfile&, const SubjectProfile&) = default;
};

inline constexpr int kProfileVersion = 1;

inline void validate(const SubjectProfile& p) {
  require(!p.subject_id.empty(), ErrorKind::config, "profile subject_id must be non-empty");
  require(!p.registry_label.empty(), ErrorKind::config, "profile registry_label must be non-empty");
  require(p.health_record.subject_id.empty() || p.health_record.subject_id == p.subject_id, ErrorKind::config,
          "health record subject_id does not match profile");
  if (p.health_record.age_years)
    require(*p.health_record.age_years >= 18 && *p.health_record.age_years <= 120, ErrorKind::range,
            "age_years outside [18,120]");
  const auto& h = p.health_record.history;
  require(std::is_sorted(h.begin(), h.end(), [](const auto& a, const auto& b) { return a.timestamp_ms < b.timestamp_ms; }),
          ErrorKind::config, "history must be sorted by timestamp");
}

inline nlohmann::json to_json(const SubjectProfile& p) {
  nlohmann::json hr;
  hr["subject_id"] = p.subject_id;
  hr["age_years"] = p.health_record.age_years ? nlohmann::json(*p.health_record.age_years) : nlohmann::json(nullptr);
  hr["sex"] = p.health_record.sex ? nlohmann::json(to_string(*p.health_record.sex)) : nlohmann::json(nullptr);
  hr["chief_complaint"] = p.health_record.chief_complaint;
  hr["history"] = nlohmann::json::array();
  for (const auto& n : p.health_record.history) hr["history"].push_back({{"timestamp_ms", n.timestamp_ms}, {"note", n.note}});
  return {{"version", kProfileVersion},
          {"subject_id", p.subject_id},
          {"registry_label", p.registry_label},
          {"created_ms", p.created_ms},
          {"health_record", hr}};
}

inline SubjectProfile profile_from_json(const nlohmann::json& j) {
  try {
    const int version = j.value("version", kProfileVersion);
    require(version == kProfileVersion, ErrorKind::parse, "unsupported profile version " + std::to_string(version));
    SubjectProfile p;
    p.subject_id = j.at("subject_id").get<std::string>();
    p.registry_label = j.at("registry_label").get<std::string>();
    p.created_ms = j.value("created_ms", std::int64_t{0});
    const auto& hr = j.at("health_record");
    p.health_record.subject_id = p.subject_id;
    if (hr.contains("age_years") && !hr.at("age_years").is_null()) p.health_record.age_years = hr.at("age_years").get<int>();
    if (hr.contains("sex") && !hr.at("sex").is_null()) p.health_record.sex = sex_from_string(hr.at("sex").get<std::string>());
    p.health_record.chief_complaint = hr.value("chief_complaint", std::string{});
    if (hr.contains("history"))
      for (const auto& n : hr.at("history"))
        p.health_record.history.push_back({n.at("timestamp_ms").get<std::int64_t>(), n.at("note").get<std::string>()});
    validate(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("profile document: ") + e.what());
  }
}

// Filename-safe form of a subject id: [A-Za-z0-9_-] pass through, everything
// else (including '.') becomes %XX.
inline std::string path_safe(const std::string& id) {
  std::string out;
  for (unsigned char c : id) {
    if (std::isalnum(c) || c == '_' || c == '-') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

// Profiles stored one JSON document per subject under root/profiles.
class RecordsDb {
 public:
  explicit RecordsDb(std::filesystem::path root = {}) : root_(std::move(root)) {
    if (root_.empty()) return;
    std::filesystem::create_directories(profile_dir());
    for (const auto& entry : std::filesystem::directory_iterator(profile_dir())) {
      if (entry.path().extension() != ".json") continue;
      std::ifstream in(entry.path());
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::parse, entry.path().string() + ": " + e.what());
      }
      auto p = profile_from_json(j);
      profiles_[p.subject_id] = std::move(p);
    }
  }

  const std::filesystem::path& root() const { return root_; }

  // Last write wins. When a registry is given, the linked label must exist in it.
  void upsert(SubjectProfile profile, const FaceRegistry* registry = nullptr) {
    if (profile.health_record.subject_id.empty()) profile.health_record.subject_id = profile.subject_id;
    validate(profile);
    if (registry)
      require(registry->contains(profile.registry_label), ErrorKind::not_found,
              "registry has no identity '" + profile.registry_label + "'");
    std::unique_lock lock(mu_);
    if (!root_.empty()) write_document(profile);
    profiles_[profile.subject_id] = std::move(profile);
  }

  std::optional<SubjectProfile> fetch(const std::string& subject_id) const {
    std::shared_lock lock(mu_);
    auto it = profiles_.find(subject_id);
    if (it == profiles_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<SubjectProfile> by_registry_label(const std::string& label) const {
    std::shared_lock lock(mu_);
    for (const auto& [_, p] : profiles_)
      if (p.registry_label == label) return p;
    return std::nullopt;
  }

  std::vector<SubjectProfile> profiles() const {
    std::shared_lock lock(mu_);
    std::vector<SubjectProfile> out;
    for (const auto& [_, p] : profiles_) out.push_back(p);
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return profiles_.size();
  }

  std::filesystem::path document_path(const std::string& subject_id) const {
    return profile_dir() / (path_safe(subject_id) + ".json");
  }

 private:
  std::filesystem::path profile_dir() const { return root_ / "profiles"; }

  void write_document(const SubjectProfile& p) const {
    const auto target = document_path(p.subject_id);
    auto tmp = target;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) fail(ErrorKind::io, "cannot write " + tmp.string());
      out << to_json(p).dump(2) << '\n';
    }
    std::filesystem::rename(tmp, target);
  }

  std::filesystem::path root_;
  mutable std::shared_mutex mu_;
  std::map<std::string, SubjectProfile> profiles_;
};

inline void upsert_profile(RecordsDb& db, const SubjectProfile& profile, const FaceRegistry* registry = nullptr) {
  db.upsert(profile, registry);
}

// Everything the report generator consumes for one subject at one instant.
struct ContextInputs {
  SubjectProfile profile;
  std::int64_t now_ms = 0;
  std::int64_t window_ms = 0;
  std::vector<RiskSample> previous_samples;  // [now - 2T, now - T)
  std::vector<RiskSample> current_samples;   // [now - T, now)
  WindowStats previous;
  WindowStats current;
  ChangeVerdict verdict;

  bool previous_empty() const { return previous.empty(); }
  bool current_empty() const { return current.empty(); }
};

// Read-only: assembles the two adjacent windows ending at now_ms.
inline ContextInputs fetch_context(const RecordsDb& db, const RiskStore& store, const std::string& subject_id,
                                   std::int64_t now_ms, std::int64_t window_ms, const ChangeTestOptions& opt = {}) {
  require(window_ms > 0, ErrorKind::config, "window length must be positive");
  auto profile = db.fetch(subject_id);
  if (!profile) fail(ErrorKind::not_found, "unknown subject '" + subject_id + "'");
  ContextInputs ctx;
  ctx.profile = *profile;
  ctx.now_ms = now_ms;
  ctx.window_ms = window_ms;
  ctx.previous_samples = store.range(subject_id, now_ms - 2 * window_ms, now_ms - window_ms);
  ctx.current_samples = store.range(subject_id, now_ms - window_ms, now_ms);
  ctx.previous = window_stats(ctx.previous_samples, opt.bins, now_ms - 2 * window_ms, now_ms - window_ms);
  ctx.current = window_stats(ctx.current_samples, opt.bins, now_ms - window_ms, now_ms);
  ctx.verdict = change_test(ctx.previous_samples, ctx.current_samples, opt);
  return ctx;
}

}  // namespace dshadow
