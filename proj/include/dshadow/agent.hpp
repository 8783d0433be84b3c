#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
// resolv.h (via httplib) defines _res, which collides with Eigen internals
#ifdef _res
#undef _res
#endif
#include <json.hpp>

#include "dshadow/analytics.hpp"
#include "dshadow/error.hpp"
#include "dshadow/records.hpp"

namespace dshadow {

enum class RiskLevel { low, moderate, high };

inline const char* to_string(RiskLevel l) {
  switch (l) {
    case RiskLevel::low: return "low";
    case RiskLevel::moderate: return "moderate";
    case RiskLevel::high: return "high";
  }
  return "low";
}

// Report thresholds. Not clinically derived; tune per deployment.
struct LevelThresholds {
  double low = 0.35;
  double high = 0.65;
};

inline void validate(const LevelThresholds& t) {
  require(0.0 <= t.low && t.low < t.high && t.high <= 1.0, ErrorKind::config,
          "thresholds must satisfy 0 <= low < high <= 1");
}

struct ReportContext {
  SubjectProfile profile;
  WindowStats current;
  WindowStats previous;
  ChangeVerdict verdict;
  double patient_level = 0.0;
  bool no_data = false;  // both windows empty; patient_level is a placeholder 0
  LevelThresholds thresholds;
  std::int64_t now_ms = 0;
};

// Patient level is the mean of the current window, falling back to the
// previous window when the current one is empty.
inline ReportContext make_report_context(const ContextInputs& in, LevelThresholds thresholds = {}) {
  validate(thresholds);
  ReportContext ctx;
  ctx.profile = in.profile;
  ctx.current = in.current;
  ctx.previous = in.previous;
  ctx.verdict = in.verdict;
  ctx.thresholds = thresholds;
  ctx.now_ms = in.now_ms;
  if (!in.current_samples.empty()) ctx.patient_level = patient_level_score(in.current_samples);
  else if (!in.previous_samples.empty()) ctx.patient_level = patient_level_score(in.previous_samples);
  else ctx.no_data = true;
  return ctx;
}

inline RiskLevel classify_level(double patient_level, Direction direction, const LevelThresholds& t = {}) {
  if (patient_level >= t.high || (direction == Direction::up && patient_level >= t.low)) return RiskLevel::high;
  if (patient_level < t.low && direction != Direction::up) return RiskLevel::low;
  return RiskLevel::moderate;
}

inline RiskLevel classify_level(const ReportContext& ctx) {
  return classify_level(ctx.patient_level, ctx.verdict.direction, ctx.thresholds);
}

// ---- prompt templating -----------------------------------------------------

inline constexpr const char* kSystemPrompt =
    "You are a cautious health-monitoring assistant. You summarise risk trends for a caregiver. "
    "You never diagnose and you always suggest consulting a clinician for medical decisions.";

inline constexpr const char* kDefaultPromptTemplate =
    "Subject {subject_id} (age {age}, sex {sex}) is monitored for coronary artery disease risk from passive "
    "camera observation.\n"
    "Chief complaint on record: {chief_complaint}\n"
    "Mean risk in the current window: {mean_now}\n"
    "Mean risk in the previous window: {mean_prev}\n"
    "Trend between windows: {direction} (p-value {p_value}, KL divergence {kl})\n"
    "Patient-level risk: {patient_level}; assigned risk level: {level}\n"
    "Write a short plain-language report for the subject and their caregiver. Explain the trend, keep the "
    "assigned risk level unchanged, and give two or three practical recommendations.";

inline std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Values substituted for each known placeholder.
inline std::vector<std::pair<std::string, std::string>> placeholder_values(const ReportContext& ctx) {
  const auto& hr = ctx.profile.health_record;
  return {
      {"subject_id", ctx.profile.subject_id},
      {"age", hr.age_years ? std::to_string(*hr.age_years) : "unknown"},
      {"sex", hr.sex ? to_string(*hr.sex) : "unknown"},
      {"chief_complaint", hr.chief_complaint.empty() ? "none recorded" : hr.chief_complaint},
      {"mean_now", ctx.current.empty() ? "n/a" : fixed3(ctx.current.mean)},
      {"mean_prev", ctx.previous.empty() ? "n/a" : fixed3(ctx.previous.mean)},
      {"direction", to_string(ctx.verdict.direction)},
      {"p_value", fixed3(ctx.verdict.p_value)},
      {"kl", fixed3(ctx.verdict.kl)},
      {"patient_level", fixed3(ctx.patient_level)},
      {"level", to_string(classify_level(ctx))},
  };
}

// Replaces {name} placeholders. Any unknown name is an error.
inline std::string build_prompt(const ReportContext& ctx, const std::string& tmpl = kDefaultPromptTemplate) {
  const auto values = placeholder_values(ctx);
  std::string out;
  out.reserve(tmpl.size() + 256);
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] != '{') {
      out.push_back(tmpl[i++]);
      continue;
    }
    const auto close = tmpl.find('}', i);
    if (close == std::string::npos) fail(ErrorKind::template_error, "unterminated placeholder at offset " + std::to_string(i));
    const std::string name = tmpl.substr(i + 1, close - i - 1);
    const auto it = std::find_if(values.begin(), values.end(), [&](const auto& kv) { return kv.first == name; });
    if (it == values.end()) fail(ErrorKind::template_error, "unknown placeholder {" + name + "}");
    out += it->second;
    i = close + 1;
  }
  return out;
}

// ---- chat-completion client -------------------------------------------------

struct LlmEndpoint {
  std::string base_url;  // scheme://host[:port][/prefix]
  std::string model_name;
  int timeout_ms = 30000;
  int max_retries = 2;
  int backoff_base_ms = 500;  // delay before retry k is base * 2^(k-1)
  std::optional<std::string> api_token;
};

inline void validate(const LlmEndpoint& e) {
  require(!e.base_url.empty(), ErrorKind::config, "LLM base_url is empty");
  require(e.timeout_ms > 0, ErrorKind::config, "LLM timeout_ms must be positive");
  require(e.max_retries >= 0, ErrorKind::config, "LLM max_retries must be non-negative");
  require(e.backoff_base_ms >= 0, ErrorKind::config, "LLM backoff must be non-negative");
}

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline void real_sleep(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

inline nlohmann::json chat_request_body(const std::string& model, const std::string& prompt) {
  return {{"model", model},
          {"messages", nlohmann::json::array({{{"role", "system"}, {"content", kSystemPrompt}},
                                              {{"role", "user"}, {"content", prompt}}})},
          {"temperature", 0}};
}

inline std::string parse_chat_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    require(content.is_string(), ErrorKind::protocol, "message content is not a string");
    return content.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::protocol, std::string("malformed chat-completion response: ") + e.what());
  }
}

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  require(scheme != std::string::npos, ErrorKind::config, "LLM base_url needs a scheme: " + url);
  const auto path = url.find('/', scheme + 3);
  SplitUrl s{url.substr(0, path), path == std::string::npos ? "" : url.substr(path)};
  while (!s.prefix.empty() && s.prefix.back() == '/') s.prefix.pop_back();
  return s;
}

inline bool retryable_status(int status) { return status >= 500 || status == 408 || status == 429; }

}  // namespace detail

// One POST per attempt; retries connection failures and 5xx/408/429 with
// exponential backoff. Malformed bodies are not retried.
inline std::string llm_complete(const LlmEndpoint& endpoint, const std::string& prompt, const Sleeper& sleep = real_sleep) {
  validate(endpoint);
  const auto url = detail::split_url(endpoint.base_url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::milliseconds(endpoint.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (endpoint.api_token) headers.emplace("Authorization", "Bearer " + *endpoint.api_token);
  const std::string body = chat_request_body(endpoint.model_name, prompt).dump();
  const std::string path = url.prefix + "/v1/chat/completions";

  std::string last_error;
  for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
    if (attempt > 0) sleep(std::chrono::milliseconds(static_cast<long long>(endpoint.backoff_base_ms) << (attempt - 1)));
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) return parse_chat_response(res->body);
    last_error = "HTTP status " + std::to_string(res->status);
    if (!detail::retryable_status(res->status)) break;
  }
  fail(ErrorKind::transport, last_error + " (" + endpoint.base_url + ")");
}

// ---- reports ---------------------------------------------------------------

enum class ReportGenerator { llm, template_text };

inline const char* to_string(ReportGenerator g) { return g == ReportGenerator::llm ? "llm" : "template"; }

struct RiskReport {
  std::string subject_id;
  RiskLevel level = RiskLevel::low;
  std::string narrative;
  std::vector<std::string> recommendations;
  std::vector<std::pair<std::string, std::string>> provenance;
  std::int64_t generated_ms = 0;
  ReportGenerator generator = ReportGenerator::template_text;
};

inline std::vector<std::string> recommendations_for(RiskLevel level) {
  switch (level) {
    case RiskLevel::high:
      return {"Arrange a cardiology consultation soon to review the elevated risk trend.",
              "Seek urgent care immediately for chest pain, breathlessness, or fainting.",
              "Keep monitoring daily so the next report can confirm or rule out the trend."};
    case RiskLevel::moderate:
      return {"Discuss the risk trend with a primary care physician at the next routine visit.",
              "Review blood pressure, cholesterol, and activity habits with a clinician.",
              "Continue passive monitoring to see whether the trend persists."};
    case RiskLevel::low:
      return {"Maintain current healthy habits: regular activity, balanced diet, no smoking.",
              "Continue passive monitoring; no action is needed based on this window."};
  }
  return {};
}

inline std::string template_narrative(const ReportContext& ctx) {
  const auto level = classify_level(ctx);
  const auto& hr = ctx.profile.health_record;
  std::ostringstream s;
  s << "Risk report for subject " << ctx.profile.subject_id;
  if (hr.age_years) s << " (age " << *hr.age_years << ")";
  s << ". ";
  if (!hr.chief_complaint.empty()) s << "Chief complaint on record: " << hr.chief_complaint << ". ";
  if (ctx.no_data) {
    s << "No risk observations were recorded in the last two windows, so the assessment is provisional. ";
  } else {
    if (!ctx.current.empty())
      s << "The current window averaged " << fixed3(ctx.current.mean) << " over " << ctx.current.count << " observations";
    else
      s << "The current window has no observations";
    if (!ctx.previous.empty())
      s << ", compared with " << fixed3(ctx.previous.mean) << " over " << ctx.previous.count << " observations previously. ";
    else
      s << " and there is no earlier window to compare against. ";
    switch (ctx.verdict.direction) {
      case Direction::up:
        s << "Risk shifted upward between windows (p = " << fixed3(ctx.verdict.p_value) << "). ";
        break;
      case Direction::down:
        s << "Risk shifted downward between windows (p = " << fixed3(ctx.verdict.p_value) << "). ";
        break;
      case Direction::none:
        s << "No statistically significant change was detected between windows. ";
        break;
    }
  }
  s << "Patient-level risk is " << fixed3(ctx.patient_level) << ", which corresponds to a " << to_string(level)
    << " risk level.";
  return s.str();
}

inline std::vector<std::pair<std::string, std::string>> report_provenance(const ReportContext& ctx) {
  auto p = placeholder_values(ctx);
  p.emplace_back("count_now", std::to_string(ctx.current.count));
  p.emplace_back("count_prev", std::to_string(ctx.previous.count));
  p.emplace_back("effect_size", fixed3(ctx.verdict.effect_size));
  p.emplace_back("kl_direction", "current||previous");
  p.emplace_back("theta_low", fixed3(ctx.thresholds.low));
  p.emplace_back("theta_high", fixed3(ctx.thresholds.high));
  p.emplace_back("window_end_ms", std::to_string(ctx.now_ms));
  if (ctx.no_data) p.emplace_back("no_data", "true");
  return p;
}

// Never throws on LLM failure: falls back to the template narrative and notes
// the failure in the provenance. The level always comes from classify_level.
inline RiskReport generate_report(const ReportContext& ctx, const std::optional<LlmEndpoint>& endpoint,
                                  std::int64_t generated_ms, const std::string& prompt_template = kDefaultPromptTemplate,
                                  const Sleeper& sleep = real_sleep) {
  RiskReport r;
  r.subject_id = ctx.profile.subject_id;
  r.level = classify_level(ctx);
  r.recommendations = recommendations_for(r.level);
  r.provenance = report_provenance(ctx);
  r.generated_ms = generated_ms;
  if (endpoint) {
    try {
      r.narrative = llm_complete(*endpoint, build_prompt(ctx, prompt_template), sleep);
      r.generator = ReportGenerator::llm;
      r.provenance.emplace_back("llm_model", endpoint->model_name);
      return r;
    } catch (const Error& e) {
      r.provenance.emplace_back("degraded_mode", e.what());
    }
  }
  r.narrative = template_narrative(ctx);
  r.generator = ReportGenerator::template_text;
  return r;
}

inline nlohmann::json to_json(const RiskReport& r) {
  nlohmann::json prov = nlohmann::json::array();
  for (const auto& [k, v] : r.provenance) prov.push_back({{"field", k}, {"value", v}});
  return {{"subject_id", r.subject_id},   {"level", to_string(r.level)},
          {"narrative", r.narrative},     {"recommendations", r.recommendations},
          {"provenance", prov},           {"generated_ms", r.generated_ms},
          {"generator", to_string(r.generator)}};
}

inline std::string render_text(const RiskReport& r) {
  std::ostringstream s;
  s << "Subject: " << r.subject_id << "\nRisk level: " << to_string(r.level) << "\nGenerated by: " << to_string(r.generator)
    << "\n\n"
    << r.narrative << "\n\nRecommendations:\n";
  for (const auto& rec : r.recommendations) s << "  - " << rec << '\n';
  s << "\nData used:\n";
  for (const auto& [k, v] : r.provenance) s << "  " << k << ": " << v << '\n';
  return s.str();
}

}  // namespace dshadow
