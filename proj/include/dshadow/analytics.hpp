#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dshadow/error.hpp"
#include "dshadow/random.hpp"
#include "dshadow/stream.hpp"

namespace dshadow {

struct RiskSample {
  std::string subject_id;
  std::int64_t timestamp_ms = 0;
  double value = 0.0;

  friend bool operator==(const RiskSample&, const RiskSample&) = default;
};

inline nlohmann::json to_json(const RiskSample& s) {
  return {{"subject_id", s.subject_id}, {"timestamp_ms", s.timestamp_ms}, {"value", s.value}};
}

inline void validate(const RiskSample& s) {
  require(!s.subject_id.empty(), ErrorKind::config, "risk sample needs a subject_id");
  require(std::isfinite(s.value) && s.value >= 0.0 && s.value <= 1.0, ErrorKind::range,
          "risk value outside [0,1]: " + std::to_string(s.value));
}

// ---- risk-sample store -------------------------------------------------------

// Append-only JSONL series ({subject_id, timestamp_ms, value} per line) with an
// in-memory per-subject index kept in timestamp order. Equal timestamps keep
// append order. An empty path gives a purely in-memory store.
class RiskStore {
 public:
  explicit RiskStore(std::filesystem::path path = {}, std::size_t flush_batch = 1)
      : path_(std::move(path)), flush_batch_(std::max<std::size_t>(1, flush_batch)) {
    if (path_.empty()) return;
    if (std::filesystem::exists(path_)) load_existing();
    out_.open(path_, std::ios::app);
    if (!out_) fail(ErrorKind::io, "cannot open risk store " + path_.string());
  }

  RiskStore(const RiskStore&) = delete;
  RiskStore& operator=(const RiskStore&) = delete;

  ~RiskStore() {
    try {
      flush();
    } catch (...) {
    }
  }

  const std::filesystem::path& path() const { return path_; }

  void append(const RiskSample& s) {
    validate(s);
    std::unique_lock lock(mu_);
    index_insert(s);
    if (out_.is_open()) {
      out_ << to_json(s).dump() << '\n';
      if (++pending_ >= flush_batch_) flush_locked();
    }
  }

  void flush() {
    std::unique_lock lock(mu_);
    flush_locked();
  }

  std::vector<RiskSample> samples(const std::string& subject) const {
    std::shared_lock lock(mu_);
    auto it = by_subject_.find(subject);
    return it == by_subject_.end() ? std::vector<RiskSample>{} : it->second;
  }

  // Samples with t_begin <= timestamp < t_end.
  std::vector<RiskSample> range(const std::string& subject, std::int64_t t_begin, std::int64_t t_end) const {
    std::shared_lock lock(mu_);
    std::vector<RiskSample> out;
    auto it = by_subject_.find(subject);
    if (it == by_subject_.end()) return out;
    const auto& v = it->second;
    auto lo = std::lower_bound(v.begin(), v.end(), t_begin,
                               [](const RiskSample& s, std::int64_t t) { return s.timestamp_ms < t; });
    auto hi = std::lower_bound(v.begin(), v.end(), t_end,
                               [](const RiskSample& s, std::int64_t t) { return s.timestamp_ms < t; });
    if (lo < hi) out.assign(lo, hi);
    return out;
  }

  std::vector<std::string> subjects() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [k, _] : by_subject_) out.push_back(k);
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    std::size_t n = 0;
    for (const auto& [_, v] : by_subject_) n += v.size();
    return n;
  }

 private:
  void index_insert(const RiskSample& s) {
    auto& v = by_subject_[s.subject_id];
    auto pos = std::upper_bound(v.begin(), v.end(), s.timestamp_ms,
                                [](std::int64_t t, const RiskSample& x) { return t < x.timestamp_ms; });
    v.insert(pos, s);
  }

  void flush_locked() {
    if (out_.is_open()) out_.flush();
    pending_ = 0;
  }

  void load_existing() {
    std::ifstream in(path_);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        RiskSample s{j.at("subject_id").get<std::string>(), j.at("timestamp_ms").get<std::int64_t>(),
                     j.at("value").get<double>()};
        validate(s);
        index_insert(s);
      } catch (const std::exception& e) {
        fail(ErrorKind::parse, path_.string() + " line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  std::filesystem::path path_;
  std::size_t flush_batch_;
  std::size_t pending_ = 0;
  std::ofstream out_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::vector<RiskSample>> by_subject_;
};

inline void append_sample(RiskStore& store, const RiskSample& s) { store.append(s); }

// ---- window descriptors ------------------------------------------------------

struct WindowStats {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;  // population variance
  std::vector<double> histogram;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;

  bool empty() const { return count == 0; }
};

inline std::size_t histogram_bin(double value, std::size_t bins) {
  const auto b = static_cast<std::size_t>(std::floor(value * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

// Bin b covers [b/B, (b+1)/B); the last bin also holds 1.0. An empty input
// yields count 0 with mean/variance/histogram left at zero (undefined).
inline WindowStats window_stats(std::span<const RiskSample> samples, std::size_t bins,
                                std::optional<std::int64_t> t_start = std::nullopt,
                                std::optional<std::int64_t> t_end = std::nullopt) {
  require(bins >= 2, ErrorKind::config, "histogram needs at least 2 bins");
  WindowStats w;
  w.histogram.assign(bins, 0.0);
  w.count = samples.size();
  if (!samples.empty()) {
    auto [lo, hi] = std::minmax_element(samples.begin(), samples.end(), [](const auto& a, const auto& b) {
      return a.timestamp_ms < b.timestamp_ms;
    });
    w.t_start = lo->timestamp_ms;
    w.t_end = hi->timestamp_ms;
  }
  if (t_start) w.t_start = *t_start;
  if (t_end) w.t_end = *t_end;
  if (samples.empty()) return w;

  const double n = static_cast<double>(samples.size());
  double sum = 0.0;
  for (const auto& s : samples) sum += s.value;
  w.mean = sum / n;
  double ss = 0.0;
  for (const auto& s : samples) {
    const double d = s.value - w.mean;
    ss += d * d;
    w.histogram[histogram_bin(s.value, bins)] += 1.0;
  }
  w.variance = ss / n;
  for (double& h : w.histogram) h /= n;
  return w;
}

// D(P || Q) in nats after adding eps to every bin of both histograms and
// renormalizing.
inline double kl_divergence(std::span<const double> p, std::span<const double> q, double eps = 1e-6) {
  require(p.size() == q.size(), ErrorKind::config, "histograms differ in bin count");
  require(!p.empty(), ErrorKind::config, "empty histogram");
  require(eps >= 0.0, ErrorKind::config, "smoothing must be non-negative");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] >= 0.0 && q[i] >= 0.0, ErrorKind::range, "histogram mass must be non-negative");
    sp += p[i] + eps;
    sq += q[i] + eps;
  }
  require(sp > 0.0 && sq > 0.0, ErrorKind::range, "histogram has no mass");
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] + eps) / sp;
    const double qi = (q[i] + eps) / sq;
    if (pi == 0.0) continue;
    if (qi == 0.0) fail(ErrorKind::numeric, "KL divergence undefined: Q is zero where P has mass (bin " +
                                                std::to_string(i) + ")");
    d += pi * std::log(pi / qi);
  }
  return std::max(0.0, d);
}

// ---- two-sample change test --------------------------------------------------

struct MannWhitney {
  double u = 0.0;  // #{(a_i, b_j): b_j > a_i} + ties/2
  double z = 0.0;
  double p_value = 1.0;  // two-sided, normal approximation with tie correction
};

inline double normal_two_sided_p(double z) { return std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), 0.0, 1.0); }

inline MannWhitney mann_whitney(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), ErrorKind::config, "Mann-Whitney needs two non-empty samples");
  struct Item {
    double v;
    bool from_b;
  };
  std::vector<Item> all;
  all.reserve(a.size() + b.size());
  for (double x : a) all.push_back({x, false});
  for (double x : b) all.push_back({x, true});
  std::sort(all.begin(), all.end(), [](const Item& x, const Item& y) { return x.v < y.v; });

  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double n = na + nb;
  double rank_b = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    const double t = static_cast<double>(j - i);
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].from_b) rank_b += mid;
    tie_term += t * t * t - t;
    i = j;
  }
  MannWhitney r;
  r.u = rank_b - nb * (nb + 1.0) / 2.0;
  const double mu = na * nb / 2.0;
  const double var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return r;  // every value tied: no evidence of a shift
  const double dev = r.u - mu;
  const double corrected = std::max(0.0, std::abs(dev) - 0.5);  // continuity correction
  r.z = std::copysign(corrected / std::sqrt(var), dev);
  r.p_value = normal_two_sided_p(r.z);
  return r;
}

enum class Direction { up, down, none };

inline const char* to_string(Direction d) {
  switch (d) {
    case Direction::up: return "up";
    case Direction::down: return "down";
    case Direction::none: return "none";
  }
  return "none";
}

inline Direction direction_from_string(const std::string& s) {
  if (s == "up") return Direction::up;
  if (s == "down") return Direction::down;
  if (s == "none") return Direction::none;
  fail(ErrorKind::parse, "unknown direction '" + s + "'");
}

struct ChangeVerdict {
  Direction direction = Direction::none;
  double p_value = 1.0;
  double kl = 0.0;           // D(current || previous)
  double effect_size = 0.0;  // mean(current) - mean(previous)
  double u_statistic = 0.0;
  bool small_sample = false;
};

struct ChangeTestOptions {
  double alpha = 0.01;
  std::size_t bins = 50;
  double kl_eps = 1e-6;
  std::size_t min_count = 8;
};

inline std::vector<double> values_of(std::span<const RiskSample> s) {
  std::vector<double> v;
  v.reserve(s.size());
  for (const auto& x : s) v.push_back(x.value);
  return v;
}

// Compares the previous window (a) against the current one (b).
inline ChangeVerdict change_test(std::span<const RiskSample> previous, std::span<const RiskSample> current,
                                 const ChangeTestOptions& opt = {}) {
  require(opt.alpha > 0.0 && opt.alpha < 1.0, ErrorKind::config, "alpha must be in (0,1)");
  ChangeVerdict v;
  const auto wa = window_stats(previous, opt.bins);
  const auto wb = window_stats(current, opt.bins);
  if (previous.size() < opt.min_count || current.size() < opt.min_count) {
    v.small_sample = true;
    if (!previous.empty() && !current.empty()) {
      v.effect_size = wb.mean - wa.mean;
      v.kl = kl_divergence(wb.histogram, wa.histogram, opt.kl_eps);
    }
    return v;
  }
  const auto va = values_of(previous);
  const auto vb = values_of(current);
  const auto mw = mann_whitney(va, vb);
  v.u_statistic = mw.u;
  v.p_value = mw.p_value;
  v.effect_size = wb.mean - wa.mean;
  v.kl = kl_divergence(wb.histogram, wa.histogram, opt.kl_eps);
  if (v.p_value < opt.alpha) {
    if (wb.mean > wa.mean) v.direction = Direction::up;
    else if (wb.mean < wa.mean) v.direction = Direction::down;
  }
  return v;
}

inline nlohmann::json to_json(const ChangeVerdict& v) {
  return {{"direction", to_string(v.direction)}, {"p_value", v.p_value},        {"kl", v.kl},
          {"kl_direction", "current||previous"}, {"effect_size", v.effect_size}, {"u_statistic", v.u_statistic},
          {"small_sample", v.small_sample}};
}

inline nlohmann::json to_json(const WindowStats& w) {
  return {{"count", w.count},         {"mean", w.mean},   {"variance", w.variance}, {"histogram", w.histogram},
          {"t_start", w.t_start},     {"t_end", w.t_end}, {"empty", w.empty()}};
}

// ---- aggregation -------------------------------------------------------------

inline double patient_level_score(std::span<const RiskSample> samples) {
  require(!samples.empty(), ErrorKind::config, "patient-level score of an empty series");
  double s = 0.0;
  for (const auto& x : samples) s += x.value;
  return s / static_cast<double>(samples.size());
}

inline double patient_level_score(std::span<const double> values) {
  require(!values.empty(), ErrorKind::config, "patient-level score of an empty series");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

struct StabilityPoint {
  std::size_t window_size = 0;
  double variance_of_mean = 0.0;  // unbiased variance across the repeated window means
};

// For each window size, draws `repeats` independent windows from the process
// and reports how much the window mean varies between them.
inline std::vector<StabilityPoint> stability_curve(const RiskProcess& process, std::span<const std::size_t> window_sizes,
                                                   std::size_t repeats, std::uint64_t seed,
                                                   double fps = 30.0) {
  require(repeats >= 2, ErrorKind::config, "stability curve needs at least 2 repeats");
  require(!window_sizes.empty(), ErrorKind::config, "no window sizes");
  for (std::size_t i = 0; i < window_sizes.size(); ++i) {
    require(window_sizes[i] > 0, ErrorKind::config, "window sizes must be positive");
    require(i == 0 || window_sizes[i] > window_sizes[i - 1], ErrorKind::config, "window sizes must increase");
  }
  validate(process);
  std::vector<StabilityPoint> out;
  for (std::size_t size : window_sizes) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(size)));
    std::vector<double> means(repeats);
    for (std::size_t r = 0; r < repeats; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < size; ++k) s += process.draw(rng, auto_timestamp(0, k, fps));
      means[r] = s / static_cast<double>(size);
    }
    // shifted by the first mean so a constant process gives exactly zero
    const double n = static_cast<double>(repeats);
    double sd = 0.0, ss = 0.0;
    for (double x : means) {
      const double d = x - means[0];
      sd += d;
      ss += d * d;
    }
    out.push_back({size, std::max(0.0, (ss - sd * sd / n) / (n - 1.0))});
  }
  return out;
}

}  // namespace dshadow
