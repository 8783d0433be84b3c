#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "dshadow/pipeline.hpp"

namespace dshadow {

struct StageTiming {
  Stage stage = Stage::detect;
  std::size_t count = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double max_ms = 0.0;
  double total_ms = 0.0;
};

struct ProfileResult {
  std::vector<StageTiming> stages;  // fixed order: detect, embed, match, score, persist, analyze
  std::size_t frames = 0;           // frames run, warm-up included
  std::size_t warmup = 0;
  double wall_ms = 0.0;             // measured frames only
  double frames_per_second() const {
    const auto n = frames > warmup ? frames - warmup : 0;
    return wall_ms > 0.0 ? 1000.0 * static_cast<double>(n) / wall_ms : 0.0;
  }
  const StageTiming& at(Stage s) const { return stages[static_cast<std::size_t>(s)]; }
};

// Nearest-rank percentile of a sorted sample.
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

inline StageTiming summarize(Stage s, std::vector<double> ms) {
  StageTiming t;
  t.stage = s;
  t.count = ms.size();
  if (ms.empty()) return t;
  std::sort(ms.begin(), ms.end());
  for (double v : ms) t.total_ms += v;
  t.mean_ms = t.total_ms / static_cast<double>(ms.size());
  t.p50_ms = percentile_sorted(ms, 0.50);
  t.p95_ms = percentile_sorted(ms, 0.95);
  t.max_ms = ms.back();
  return t;
}

// Runs `repeats` frames, cycling the manifest (timestamps shifted each pass),
// and times every stage. The first `warmup` frames are not recorded.
inline ProfileResult profile(const PipelineConfig& config, const StreamManifest& manifest, const FaceRegistry& registry,
                             std::size_t repeats, std::size_t warmup = 5, const RecordsDb* records = nullptr) {
  require(repeats >= 10, ErrorKind::config, "profile needs repeats >= 10");
  require(!manifest.entries.empty(), ErrorKind::config, "profile needs a non-empty manifest");
  PipelineEngine engine(config, registry, manifest.stream_id, manifest.start_ms, records, nullptr);
  const std::int64_t span = detail::stream_end_ms(manifest) - manifest.start_ms;

  std::vector<std::vector<double>> per_stage(std::size(kStages));
  ProfileResult result;
  result.frames = repeats;
  result.warmup = std::min(warmup, repeats);
  FrameStream stream(manifest);
  std::size_t cycle = 0;
  std::chrono::steady_clock::time_point measured_start;
  std::int64_t last_ts = manifest.start_ms;
  for (std::size_t i = 0; i < repeats; ++i) {
    if (i == result.warmup) measured_start = std::chrono::steady_clock::now();
    auto frame = stream.next();
    if (!frame) {
      stream.rewind();
      ++cycle;
      frame = stream.next();
    }
    frame->timestamp_ms += static_cast<std::int64_t>(cycle) * span;
    last_ts = frame->timestamp_ms;
    auto out = engine.evaluate(*frame, true);
    engine.commit(out);
    if (i >= result.warmup)
      for (std::size_t s = 0; s < per_stage.size(); ++s) per_stage[s].push_back(out.clock.ms[s]);
  }
  result.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - measured_start).count();
  engine.finish(last_ts);
  for (std::size_t s = 0; s < per_stage.size(); ++s) result.stages.push_back(summarize(kStages[s], std::move(per_stage[s])));
  return result;
}

inline nlohmann::json to_json(const ProfileResult& r) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& t : r.stages)
    stages.push_back({{"stage", to_string(t.stage)}, {"count", t.count}, {"mean_ms", t.mean_ms}, {"p50_ms", t.p50_ms},
                      {"p95_ms", t.p95_ms}, {"max_ms", t.max_ms}, {"total_ms", t.total_ms}});
  return {{"frames", r.frames}, {"warmup", r.warmup}, {"wall_ms", r.wall_ms},
          {"frames_per_second", r.frames_per_second()}, {"stages", stages}};
}

inline void write_profile(const ProfileResult& r, const std::filesystem::path& output_root) {
  std::filesystem::create_directories(output_root);
  std::ofstream out(output_root / "profile.json", std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write profile.json");
  out << to_json(r).dump(2) << '\n';
}

}  // namespace dshadow
