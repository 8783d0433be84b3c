#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dshadow/error.hpp"
#include "dshadow/face.hpp"
#include "dshadow/random.hpp"

namespace dshadow {

enum class ScoreSource { stub, external_file, plugin };

inline const char* to_string(ScoreSource s) {
  switch (s) {
    case ScoreSource::stub: return "stub";
    case ScoreSource::external_file: return "external_file";
    case ScoreSource::plugin: return "plugin";
  }
  return "unknown";
}

struct RiskScore {
  double value = 0.0;
  ScoreSource source = ScoreSource::stub;
};

// ---- precomputed score files ----------------------------------------------

// CSV with header stream_id,frame_index,label,score.
class ScoreTable {
 public:
  using Key = std::tuple<std::string, std::uint64_t, std::string>;

  void insert(const std::string& stream_id, std::uint64_t frame_index, const std::string& label, double score) {
    require(score >= 0.0 && score <= 1.0, ErrorKind::range, "score outside [0,1]");
    scores_[Key{stream_id, frame_index, label}] = score;
  }

  std::optional<double> find(const std::string& stream_id, std::uint64_t frame_index, const std::string& label) const {
    auto it = scores_.find(Key{stream_id, frame_index, label});
    if (it == scores_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return scores_.size(); }

 private:
  std::map<Key, double> scores_;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_real(const std::string& s, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline ScoreTable parse_score_table(std::istream& in) {
  ScoreTable table;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = detail::split_csv_line(line);
    if (!header_seen) {
      require(cells == std::vector<std::string>{"stream_id", "frame_index", "label", "score"}, ErrorKind::parse,
              "score file header must be stream_id,frame_index,label,score");
      header_seen = true;
      continue;
    }
    require(cells.size() == 4, ErrorKind::parse, "line " + std::to_string(line_no) + ": expected 4 columns");
    const double idx = detail::parse_real(cells[1], line_no);
    require(idx >= 0.0 && idx == std::floor(idx), ErrorKind::parse,
            "line " + std::to_string(line_no) + ": frame_index must be a non-negative integer");
    const double score = detail::parse_real(cells[3], line_no);
    require(score >= 0.0 && score <= 1.0, ErrorKind::range, "line " + std::to_string(line_no) + ": score outside [0,1]");
    table.insert(cells[0], static_cast<std::uint64_t>(idx), cells[2], score);
  }
  require(header_seen, ErrorKind::parse, "score file is empty");
  return table;
}

inline ScoreTable load_score_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open score file " + path.string());
  return parse_score_table(in);
}

// ---- scorers ---------------------------------------------------------------

struct ScoringInput {
  const FaceEmbedding* embedding = nullptr;
  std::optional<double> true_risk;
  std::string stream_id;
  std::uint64_t frame_index = 0;
  std::string label;
};

struct ScorerHandle {
  enum class Kind { oracle_noise, logistic, file_lookup, plugin };
  Kind kind = Kind::oracle_noise;
  double sigma = 0.0;
  std::vector<double> weights;
  double bias = 0.0;
  std::filesystem::path path;
  std::function<double(const ScoringInput&)> plugin;
  std::uint64_t seed = 0;

  static ScorerHandle oracle_noise(double sigma, std::uint64_t seed) {
    ScorerHandle h;
    h.kind = Kind::oracle_noise;
    h.sigma = sigma;
    h.seed = seed;
    return h;
  }
  static ScorerHandle logistic(std::vector<double> w, double b) {
    ScorerHandle h;
    h.kind = Kind::logistic;
    h.weights = std::move(w);
    h.bias = b;
    return h;
  }
  static ScorerHandle file_lookup(std::filesystem::path p) {
    ScorerHandle h;
    h.kind = Kind::file_lookup;
    h.path = std::move(p);
    return h;
  }
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Stateful scorer: owns its generator, so use one instance per stream.
class Scorer {
 public:
  explicit Scorer(ScorerHandle handle) : handle_(std::move(handle)), rng_(handle_.seed) {
    switch (handle_.kind) {
      case ScorerHandle::Kind::oracle_noise:
        require(handle_.sigma >= 0.0, ErrorKind::config, "oracle_noise sigma must be >= 0");
        break;
      case ScorerHandle::Kind::logistic:
        require(!handle_.weights.empty(), ErrorKind::config, "logistic scorer needs weights");
        break;
      case ScorerHandle::Kind::file_lookup:
        table_ = load_score_table(handle_.path);
        break;
      case ScorerHandle::Kind::plugin:
        require(static_cast<bool>(handle_.plugin), ErrorKind::config, "plugin scorer needs a callable");
        break;
    }
  }

  Scorer(ScorerHandle handle, ScoreTable table) : handle_(std::move(handle)), rng_(handle_.seed), table_(std::move(table)) {}

  const ScorerHandle& handle() const { return handle_; }

  RiskScore score(const ScoringInput& in) {
    switch (handle_.kind) {
      case ScorerHandle::Kind::oracle_noise: {
        require(in.true_risk.has_value(), ErrorKind::config, "oracle_noise scorer needs an annotated true_risk");
        double v = *in.true_risk;
        if (handle_.sigma > 0.0) v += sample_normal(rng_, 0.0, handle_.sigma);
        return {std::clamp(v, 0.0, 1.0), ScoreSource::stub};
      }
      case ScorerHandle::Kind::logistic: {
        require(in.embedding != nullptr, ErrorKind::config, "logistic scorer needs an embedding");
        require(in.embedding->dimension() == handle_.weights.size(), ErrorKind::dimension,
                "logistic weights dimension does not match embedding");
        const double z = std::inner_product(handle_.weights.begin(), handle_.weights.end(),
                                            in.embedding->vector.begin(), handle_.bias);
        return {sigmoid(z), ScoreSource::plugin};
      }
      case ScorerHandle::Kind::file_lookup: {
        auto v = table_.find(in.stream_id, in.frame_index, in.label);
        if (!v)
          fail(ErrorKind::missing_score, "no score for (" + in.stream_id + ", " + std::to_string(in.frame_index) +
                                             ", " + in.label + ")");
        return {*v, ScoreSource::external_file};
      }
      case ScorerHandle::Kind::plugin: {
        const double v = handle_.plugin(in);
        require(v >= 0.0 && v <= 1.0, ErrorKind::range, "plugin score outside [0,1]");
        return {v, ScoreSource::plugin};
      }
    }
    fail(ErrorKind::config, "unknown scorer kind");
  }

 private:
  ScorerHandle handle_;
  Rng rng_;
  ScoreTable table_;
};

// ---- classification metrics -----------------------------------------------

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  require(scores.size() == labels.size(), ErrorKind::config,
          "scores and labels differ in length (" + std::to_string(scores.size()) + " vs " +
              std::to_string(labels.size()) + ")");
  require(threshold >= 0.0 && threshold <= 1.0, ErrorKind::config, "threshold outside [0,1]");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline ConfusionCounts confusion(std::span<const RiskScore> scores, std::span<const int> labels, double threshold = 0.5) {
  std::vector<double> v;
  v.reserve(scores.size());
  for (const auto& s : scores) v.push_back(s.value);
  return confusion(std::span<const double>(v), labels, threshold);
}

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the ratio had a zero denominator and was reported as 0.
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;

  double error_rate() const { return 1.0 - accuracy; }
  bool degenerate() const { return precision_degenerate || recall_degenerate || f1_degenerate; }
};

// Recall is TP / (TP + FN).
inline Metrics metrics(const ConfusionCounts& c) {
  require(c.total() > 0, ErrorKind::config, "metrics of an empty confusion matrix");
  const auto ratio = [](double num, double den, bool& degenerate) {
    if (den == 0.0) {
      degenerate = true;
      return 0.0;
    }
    return num / den;
  };
  Metrics m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp), m.precision_degenerate);
  m.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn), m.recall_degenerate);
  m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall, m.f1_degenerate);
  return m;
}

// Area under the ROC curve as the Mann-Whitney statistic (ties count 1/2),
// computed from mid-ranks in O(n log n).
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorKind::config, "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] != 0) {
        rank_sum += mid_rank;
        pos += 1.0;
      }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  require(pos > 0.0 && neg > 0.0, ErrorKind::config, "roc_auc needs at least one positive and one negative label");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

// Operating points for every distinct score used as threshold (score >= t is
// positive), preceded by (0,0) and ending at (1,1).
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double pos = 0.0, neg = 0.0;
  for (int l : labels) (l != 0 ? pos : neg) += 1.0;
  require(pos > 0.0 && neg > 0.0, ErrorKind::config, "roc_curve needs both classes");
  std::vector<RocPoint> pts{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  for (double t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) (labels[i] != 0 ? tp : fp) += 1.0;
    pts.push_back({t, fp / neg, tp / pos});
  }
  return pts;
}

inline double trapezoid_area(std::span<const RocPoint> pts) {
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return a;
}

}  // namespace dshadow
