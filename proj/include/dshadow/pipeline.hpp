#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dshadow/agent.hpp"
#include "dshadow/analytics.hpp"
#include "dshadow/error.hpp"
#include "dshadow/identity.hpp"
#include "dshadow/records.hpp"
#include "dshadow/scoring.hpp"
#include "dshadow/stream.hpp"

namespace dshadow {

// ---- configuration ---------------------------------------------------------

struct ScorerSpec {
  std::string kind = "oracle_noise";  // oracle_noise | logistic | file
  double sigma = 0.05;
  std::vector<double> weights;
  double bias = 0.0;
  std::filesystem::path path;
};

struct PipelineConfig {
  std::filesystem::path manifest;
  std::filesystem::path registry;
  std::filesystem::path records_root;  // optional
  std::filesystem::path output_root = "out";
  ScorerSpec scorer;
  std::string embedder = "passthrough";  // passthrough | hash_projection
  std::int64_t window_ms = 60000;
  std::size_t bins = 50;
  double alpha = 0.01;
  std::size_t min_count = 8;
  double tau = 0.9;
  LevelThresholds thresholds;
  std::optional<LlmEndpoint> llm;
  std::size_t stride = 1;
  std::uint64_t seed = 0;
  bool reports = true;
  bool pipelined = false;
  bool append_output = false;  // keep existing samples/verdicts instead of truncating
};

inline constexpr const char* kLlmTokenEnv = "DSHADOW_LLM_TOKEN";

inline ChangeTestOptions change_options(const PipelineConfig& c) {
  ChangeTestOptions o;
  o.alpha = c.alpha;
  o.bins = c.bins;
  o.min_count = c.min_count;
  return o;
}

// Numeric ranges only; paths are checked by validate_paths.
inline void validate(const PipelineConfig& c) {
  require(c.window_ms > 0, ErrorKind::config, "window_ms must be positive");
  require(c.bins >= 2, ErrorKind::config, "bins must be >= 2");
  require(c.alpha > 0.0 && c.alpha < 1.0, ErrorKind::config, "alpha must be in (0,1)");
  require(c.tau >= 0.0, ErrorKind::config, "tau must be >= 0");
  require(c.stride >= 1, ErrorKind::config, "stride must be >= 1");
  validate(c.thresholds);
  require(c.embedder == "passthrough" || c.embedder == "hash_projection", ErrorKind::config,
          "embedder must be passthrough or hash_projection");
  const auto& k = c.scorer.kind;
  require(k == "oracle_noise" || k == "logistic" || k == "file", ErrorKind::config,
          "scorer kind must be oracle_noise, logistic or file");
  if (k == "oracle_noise") require(c.scorer.sigma >= 0.0, ErrorKind::config, "scorer sigma must be >= 0");
  if (k == "logistic") require(!c.scorer.weights.empty(), ErrorKind::config, "logistic scorer needs weights");
  if (c.llm) validate(*c.llm);
}

inline void validate_paths(const PipelineConfig& c) {
  const auto must_exist = [](const std::filesystem::path& p, const char* what) {
    require(!p.empty(), ErrorKind::config, std::string(what) + " path is required");
    require(std::filesystem::exists(p), ErrorKind::config, std::string(what) + " not found: " + p.string());
  };
  must_exist(c.manifest, "manifest");
  must_exist(c.registry, "registry");
  if (c.scorer.kind == "file") must_exist(c.scorer.path, "score file");
  if (!c.records_root.empty()) must_exist(c.records_root, "records root");
}

// Relative paths are resolved against base_dir (the config file's directory).
inline PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  const auto path = [&](const char* key, const std::filesystem::path& fallback = {}) -> std::filesystem::path {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    std::filesystem::path p = j.at(key).get<std::string>();
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  try {
    PipelineConfig c;
    c.manifest = path("manifest");
    c.registry = path("registry");
    c.records_root = path("records_root");
    c.output_root = path("output_root", c.output_root);
    if (j.contains("scorer")) {
      const auto& s = j.at("scorer");
      c.scorer.kind = s.value("kind", c.scorer.kind);
      c.scorer.sigma = s.value("sigma", c.scorer.sigma);
      c.scorer.weights = s.value("weights", std::vector<double>{});
      c.scorer.bias = s.value("bias", 0.0);
      if (s.contains("path")) {
        std::filesystem::path p = s.at("path").get<std::string>();
        c.scorer.path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      }
    }
    c.embedder = j.value("embedder", c.embedder);
    c.window_ms = j.value("window_ms", c.window_ms);
    c.bins = j.value("bins", c.bins);
    c.alpha = j.value("alpha", c.alpha);
    c.min_count = j.value("min_count", c.min_count);
    c.tau = j.value("tau", c.tau);
    c.thresholds.low = j.value("theta_low", c.thresholds.low);
    c.thresholds.high = j.value("theta_high", c.thresholds.high);
    c.stride = j.value("stride", c.stride);
    c.seed = j.value("seed", c.seed);
    c.reports = j.value("reports", c.reports);
    c.pipelined = j.value("pipelined", c.pipelined);
    c.append_output = j.value("append_output", c.append_output);
    if (j.contains("llm") && !j.at("llm").is_null()) {
      const auto& l = j.at("llm");
      LlmEndpoint e;
      e.base_url = l.at("base_url").get<std::string>();
      e.model_name = l.value("model", std::string("default"));
      e.timeout_ms = l.value("timeout_ms", e.timeout_ms);
      e.max_retries = l.value("max_retries", e.max_retries);
      e.backoff_base_ms = l.value("backoff_base_ms", e.backoff_base_ms);
      if (const char* tok = std::getenv(kLlmTokenEnv); tok && *tok) e.api_token = tok;
      c.llm = e;
    }
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::config, std::string("pipeline config: ") + ex.what());
  }
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::parse, path.string() + ": " + ex.what());
  }
  return config_from_json(j, path.parent_path());
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j = {{"manifest", c.manifest.string()},
                      {"registry", c.registry.string()},
                      {"output_root", c.output_root.string()},
                      {"embedder", c.embedder},
                      {"window_ms", c.window_ms},
                      {"bins", c.bins},
                      {"alpha", c.alpha},
                      {"min_count", c.min_count},
                      {"tau", c.tau},
                      {"theta_low", c.thresholds.low},
                      {"theta_high", c.thresholds.high},
                      {"stride", c.stride},
                      {"seed", c.seed},
                      {"reports", c.reports},
                      {"pipelined", c.pipelined}};
  if (!c.records_root.empty()) j["records_root"] = c.records_root.string();
  j["scorer"] = {{"kind", c.scorer.kind}, {"sigma", c.scorer.sigma}, {"weights", c.scorer.weights}, {"bias", c.scorer.bias}};
  if (!c.scorer.path.empty()) j["scorer"]["path"] = c.scorer.path.string();
  if (c.llm) j["llm"] = {{"base_url", c.llm->base_url}, {"model", c.llm->model_name}, {"timeout_ms", c.llm->timeout_ms},
                         {"max_retries", c.llm->max_retries}};
  return j;
}

inline ScorerHandle make_scorer_handle(const ScorerSpec& s, std::uint64_t seed) {
  if (s.kind == "logistic") return ScorerHandle::logistic(s.weights, s.bias);
  if (s.kind == "file") return ScorerHandle::file_lookup(s.path);
  return ScorerHandle::oracle_noise(s.sigma, seed);
}

// ---- run results -----------------------------------------------------------

struct VerdictRecord {
  std::string subject_id;
  std::int64_t window_start_ms = 0;
  std::int64_t window_end_ms = 0;
  WindowStats current;
  ChangeVerdict verdict;
};

inline nlohmann::json to_json(const VerdictRecord& v) {
  return {{"subject_id", v.subject_id},
          {"window_start_ms", v.window_start_ms},
          {"window_end_ms", v.window_end_ms},
          {"count", v.current.count},
          {"mean", v.current.mean},
          {"verdict", to_json(v.verdict)}};
}

struct RunSummary {
  std::size_t frames_total = 0;
  std::size_t frames_processed = 0;
  std::size_t frames_skipped = 0;  // stride
  std::size_t frame_errors = 0;
  std::size_t faces_detected = 0;
  std::size_t faces_matched = 0;
  std::size_t faces_rejected = 0;
  std::size_t samples_stored = 0;
  std::size_t verdicts_emitted = 0;
  std::size_t reports_written = 0;
  std::vector<VerdictRecord> verdicts;
  std::vector<std::string> errors;
};

inline nlohmann::json to_json(const RunSummary& s) {
  nlohmann::json v = nlohmann::json::array();
  for (const auto& r : s.verdicts) v.push_back(to_json(r));
  return {{"frames_total", s.frames_total},     {"frames_processed", s.frames_processed},
          {"frames_skipped", s.frames_skipped}, {"frame_errors", s.frame_errors},
          {"faces_detected", s.faces_detected}, {"faces_matched", s.faces_matched},
          {"faces_rejected", s.faces_rejected}, {"samples_stored", s.samples_stored},
          {"verdicts_emitted", s.verdicts_emitted}, {"reports_written", s.reports_written},
          {"verdicts", v},                      {"errors", s.errors}};
}

// ---- stage timing ----------------------------------------------------------

enum class Stage { detect, embed, match, score, persist, analyze };
inline constexpr Stage kStages[] = {Stage::detect, Stage::embed, Stage::match, Stage::score, Stage::persist, Stage::analyze};

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::detect: return "detect";
    case Stage::embed: return "embed";
    case Stage::match: return "match";
    case Stage::score: return "score";
    case Stage::persist: return "persist";
    case Stage::analyze: return "analyze";
  }
  return "?";
}

// Per-frame wall-clock accumulator; one slot per stage.
struct FrameClock {
  std::array<double, 6> ms{};
  bool enabled = false;

  template <class F>
  decltype(auto) time(Stage s, F&& fn) {
    if (!enabled) return fn();
    const auto t0 = std::chrono::steady_clock::now();
    struct Stop {
      FrameClock* c;
      Stage s;
      std::chrono::steady_clock::time_point t0;
      ~Stop() {
        c->ms[static_cast<std::size_t>(s)] +=
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
    } stop{this, s, t0};
    return fn();
  }
};

// ---- engine ----------------------------------------------------------------

// Result of the per-frame stages before anything is persisted.
struct FrameOutcome {
  std::uint64_t frame_index = 0;
  std::int64_t timestamp_ms = 0;
  std::size_t detected = 0;
  std::size_t rejected = 0;
  std::vector<RiskSample> samples;  // one per accepted label, label order
  std::optional<std::string> error;
  bool skipped = false;  // dropped by the sampling stride
  FrameClock clock;
};

class PipelineEngine {
 public:
  PipelineEngine(PipelineConfig config, FaceRegistry registry, std::string stream_id, std::int64_t start_ms,
                 const RecordsDb* records = nullptr, std::ostream* log = &std::cerr)
      : cfg_(std::move(config)),
        registry_(std::move(registry)),
        records_(records),
        log_(log),
        detector_(DetectorHandle::annotation_stub()),
        embedder_(cfg_.embedder == "hash_projection" ? EmbedderHandle::hash_projection(registry_.dimension(), cfg_.seed)
                                                     : EmbedderHandle::passthrough(registry_.dimension())),
        scorer_(make_scorer_handle(cfg_.scorer, derive_seed(cfg_.seed, "scorer:" + stream_id))),
        stream_id_(std::move(stream_id)),
        window_start_(start_ms) {
    validate(cfg_);
    std::filesystem::create_directories(cfg_.output_root);
    if (!cfg_.append_output) {
      std::filesystem::remove(samples_path());
      std::filesystem::remove(verdicts_path());
    }
    store_ = std::make_unique<RiskStore>(samples_path());
    verdict_out_.open(verdicts_path(), std::ios::app);
    if (!verdict_out_) fail(ErrorKind::io, "cannot write " + verdicts_path().string());
  }

  std::filesystem::path samples_path() const { return cfg_.output_root / "samples.jsonl"; }
  std::filesystem::path verdicts_path() const { return cfg_.output_root / "verdicts.jsonl"; }
  std::filesystem::path reports_dir() const { return cfg_.output_root / "reports"; }
  const RiskStore& store() const { return *store_; }
  const RunSummary& summary() const { return summary_; }
  RunSummary& summary() { return summary_; }

  // detect -> embed -> match -> score. Pure with respect to persisted state,
  // so a failing frame leaves nothing behind.
  FrameOutcome evaluate(const FrameRecord& frame, bool timed = false) {
    FrameOutcome out;
    out.frame_index = frame.frame_index;
    out.timestamp_ms = frame.timestamp_ms;
    out.clock.enabled = timed;
    try {
      const auto faces = out.clock.time(Stage::detect, [&] { return detect_faces(frame, detector_); });
      out.detected = faces.size();
      struct Best {
        double distance;
        std::size_t face;
      };
      std::map<std::string, Best> accepted;
      for (std::size_t i = 0; i < faces.size(); ++i) {
        const auto e = out.clock.time(Stage::embed, [&] { return embed(faces[i], embedder_); });
        const auto m = out.clock.time(Stage::match, [&] { return match_identity(e, registry_, cfg_.tau); });
        if (!m || !m->accepted) {
          ++out.rejected;
          continue;
        }
        auto it = accepted.find(m->label);
        if (it == accepted.end() || m->distance < it->second.distance) accepted[m->label] = {m->distance, i};
      }
      for (const auto& [label, best] : accepted) {
        const auto& f = faces[best.face];
        const auto e = embed(f, embedder_);
        ScoringInput in{&e, f.true_risk, frame.stream_id, frame.frame_index, label};
        const auto s = out.clock.time(Stage::score, [&] { return scorer_.score(in); });
        out.samples.push_back({label, frame.timestamp_ms, s.value});
      }
    } catch (const std::exception& ex) {
      out.error = ex.what();
      out.samples.clear();
    }
    return out;
  }

  // Closes finished windows, then persists the frame's samples.
  void commit(FrameOutcome& out) {
    if (out.error) {
      ++summary_.frame_errors;
      const std::string msg = "frame " + std::to_string(out.frame_index) + " (t=" + std::to_string(out.timestamp_ms) +
                              " ms): " + *out.error;
      summary_.errors.push_back(msg);
      if (log_) *log_ << "dshadow: skipped " << msg << '\n';
      return;
    }
    ++summary_.frames_processed;
    summary_.faces_detected += out.detected;
    summary_.faces_rejected += out.rejected;
    summary_.faces_matched += out.detected - out.rejected;
    out.clock.time(Stage::analyze, [&] { close_windows_before(out.timestamp_ms); });
    out.clock.time(Stage::persist, [&] {
      for (const auto& s : out.samples) {
        store_->append(s);
        seen_.insert(s.subject_id);
      }
    });
    summary_.samples_stored += out.samples.size();
  }

  void skip_frame() { ++summary_.frames_skipped; }

  // Closes every window that ends at or before end_ms.
  void finish(std::int64_t end_ms) {
    while (window_start_ + cfg_.window_ms <= end_ms) close_window();
    store_->flush();
    verdict_out_.flush();
  }

 private:
  void close_windows_before(std::int64_t t_ms) {
    while (t_ms >= window_start_ + cfg_.window_ms) close_window();
  }

  void close_window() {
    const std::int64_t start = window_start_, end = window_start_ + cfg_.window_ms;
    const auto opt = change_options(cfg_);
    for (const auto& subject : seen_) {
      ContextInputs ctx;
      ctx.now_ms = end;
      ctx.window_ms = cfg_.window_ms;
      ctx.previous_samples = store_->range(subject, start - cfg_.window_ms, start);
      ctx.current_samples = store_->range(subject, start, end);
      ctx.previous = window_stats(ctx.previous_samples, cfg_.bins, start - cfg_.window_ms, start);
      ctx.current = window_stats(ctx.current_samples, cfg_.bins, start, end);
      ctx.verdict = change_test(ctx.previous_samples, ctx.current_samples, opt);

      VerdictRecord rec{subject, start, end, ctx.current, ctx.verdict};
      verdict_out_ << to_json(rec).dump() << '\n';
      summary_.verdicts.push_back(rec);
      ++summary_.verdicts_emitted;

      if (cfg_.reports) {
        ctx.profile = profile_for(subject);
        const auto report = generate_report(make_report_context(ctx, cfg_.thresholds), cfg_.llm, end);
        const auto dir = reports_dir() / path_safe(subject);
        std::filesystem::create_directories(dir);
        std::ofstream f(dir / (std::to_string(end) + ".json"), std::ios::trunc);
        if (!f) fail(ErrorKind::io, "cannot write report for " + subject);
        f << to_json(report).dump(2) << '\n';
        ++summary_.reports_written;
      }
    }
    window_start_ = end;
  }

  SubjectProfile profile_for(const std::string& label) const {
    if (records_) {
      if (auto p = records_->by_registry_label(label)) return *p;
      if (auto p = records_->fetch(label)) return *p;
    }
    SubjectProfile p;
    p.subject_id = label;
    p.registry_label = label;
    return p;
  }

  PipelineConfig cfg_;
  FaceRegistry registry_;
  const RecordsDb* records_;
  std::ostream* log_;
  DetectorHandle detector_;
  EmbedderHandle embedder_;
  Scorer scorer_;
  std::string stream_id_;
  std::unique_ptr<RiskStore> store_;
  std::ofstream verdict_out_;
  std::set<std::string> seen_;
  std::int64_t window_start_;
  RunSummary summary_;
};

namespace detail {

inline std::int64_t stream_end_ms(const StreamManifest& m) {
  if (m.entries.empty()) return m.start_ms;
  const auto last = entry_timestamp(m, m.entries.back());
  return last + std::max<std::int64_t>(1, std::llround(1000.0 / m.fps));
}

// Bounded single-producer single-consumer hand-off for the pipelined mode.
template <class T>
class Channel {
 public:
  explicit Channel(std::size_t cap) : cap_(cap) {}
  void push(T v) {
    std::unique_lock lk(m_);
    not_full_.wait(lk, [&] { return q_.size() < cap_; });
    q_.push_back(std::move(v));
    not_empty_.notify_one();
  }
  void close() {
    std::lock_guard lk(m_);
    closed_ = true;
    not_empty_.notify_all();
  }
  std::optional<T> pop() {
    std::unique_lock lk(m_);
    not_empty_.wait(lk, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return v;
  }

 private:
  std::size_t cap_;
  std::deque<T> q_;
  bool closed_ = false;
  std::mutex m_;
  std::condition_variable not_empty_, not_full_;
};

}  // namespace detail

// Runs the full loop over an in-memory manifest and registry.
inline RunSummary run_pipeline(const PipelineConfig& config, const StreamManifest& manifest, const FaceRegistry& registry,
                               const RecordsDb* records = nullptr, std::ostream* log = &std::cerr) {
  PipelineEngine engine(config, registry, manifest.stream_id, manifest.start_ms, records, log);
  FrameStream stream(manifest);
  engine.summary().frames_total = stream.size();

  // Reads the next frame; stream errors become an outcome carrying the error.
  std::size_t ordinal = 0;
  const auto produce = [&]() -> std::optional<FrameOutcome> {
    {
      const auto& entries = manifest.entries;
      if (stream.position() >= entries.size()) return std::nullopt;
      const auto& entry = entries[stream.position()];
      const bool take = ordinal++ % config.stride == 0;
      if (!take) {
        stream.next();  // still validates ordering; content ignored
        FrameOutcome skipped;
        skipped.frame_index = entry.frame_index;
        skipped.skipped = true;
        return skipped;
      }
      try {
        auto frame = stream.next();
        return engine.evaluate(*frame);
      } catch (const std::exception& ex) {
        FrameOutcome bad;
        bad.frame_index = entry.frame_index;
        bad.timestamp_ms = entry_timestamp(manifest, entry);
        bad.error = ex.what();
        return bad;
      }
    }
  };
  const auto consume = [&](FrameOutcome& o) {
    if (o.skipped) {
      engine.skip_frame();
      return;
    }
    engine.commit(o);
  };

  if (!config.pipelined) {
    while (auto o = produce()) consume(*o);
  } else {
    // Stage 1 (detect..score) and stage 2 (persist, windows, reports) overlap.
    // A single consumer keeps per-subject order equal to frame order.
    detail::Channel<FrameOutcome> ch(64);
    std::exception_ptr failure;
    std::thread worker([&] {
      try {
        while (auto o = produce()) ch.push(std::move(*o));
      } catch (...) {
        failure = std::current_exception();
      }
      ch.close();
    });
    while (auto o = ch.pop()) consume(*o);
    worker.join();
    if (failure) std::rethrow_exception(failure);
  }
  engine.finish(detail::stream_end_ms(manifest));
  return engine.summary();
}

// Loads everything the config names, then runs.
inline RunSummary run_pipeline(const PipelineConfig& config, std::ostream* log = &std::cerr) {
  validate(config);
  validate_paths(config);
  const auto manifest = load_manifest(config.manifest);
  const auto registry = load_registry(config.registry);
  if (config.records_root.empty()) return run_pipeline(config, manifest, registry, nullptr, log);
  const RecordsDb db(config.records_root);
  return run_pipeline(config, manifest, registry, &db, log);
}

// ---- simulation helpers ----------------------------------------------------

// Registry holding the synthetic base vectors of the given labels.
inline FaceRegistry synth_registry(const SynthSpec& spec, const std::vector<std::string>& labels) {
  FaceRegistry r(spec.dimension);
  for (const auto& l : labels) r.add(synth_base_embedding(spec.seed, l, spec.dimension), l);
  return r;
}

}  // namespace dshadow
