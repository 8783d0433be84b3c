// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <thread>

#include "dshadow/dshadow.hpp"

#ifndef DSHADOW_FIXTURE_DIR
#define DSHADOW_FIXTURE_DIR "fixtures"
#endif

using namespace dshadow;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

FaceEmbedding random_unit(Rng& rng, std::size_t d) {
  std::normal_distribution<double> n(0, 1);
  std::vector<double> v(d);
  for (double& x : v) x = n(rng);
  return normalize(std::move(v));
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dshadow_acceptance_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// 1
Outcome identity_matching() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::uniform_int_distribution<int> size(1, 100);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    FaceRegistry r;
    const int n = size(rng);
    for (int i = 0; i < n; ++i) r.add(random_unit(rng, 16), "id" + std::to_string(i));
    const auto probe = random_unit(rng, 16);
    std::string best_label;
    double best = 1e300;
    for (const auto& e : r.entries())
      for (const auto& t : e.templates) {
        double s = 0;
        for (int k = 0; k < 16; ++k) s += (t.vector[k] - probe.vector[k]) * (t.vector[k] - probe.vector[k]);
        s = std::sqrt(s);
        if (s < best || (s == best && e.label < best_label)) {
          best = s;
          best_label = e.label;
        }
      }
    const auto m = match_identity(probe, r, 0.9);
    mismatches += !(m && m->label == best_label && m->distance == best);
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 5.0, fmt("%d/1000 mismatches, %.2f s", mismatches, secs)};
}

// 2
Outcome metrics_and_auc() {
  Rng rng(202);
  std::uniform_int_distribution<int> len(2, 200), coarse(0, 9);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = len(rng);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = trial % 2 ? coarse(rng) / 10.0 : u(rng);
      y[i] = u(rng) < 0.5;
    }
    y[0] = 1;
    y[1] = 0;
    double num = 0, p = 0, q = 0;
    for (int i = 0; i < n; ++i) (y[i] ? p : q) += 1;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (y[i] && !y[j]) num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    worst = std::max(worst, std::abs(roc_auc(s, y) - num / (p * q)));
  }
  const auto a = metrics({1, 1, 1, 1});
  const auto b = metrics({5, 0, 0, 0});
  const auto c = metrics({0, 5, 0, 5});
  const auto d = metrics({3, 10, 0, 1});
  const bool fixtures = a.accuracy == 0.5 && a.precision == 0.5 && a.recall == 0.5 && a.f1 == 0.5 &&
                        b.accuracy == 1 && b.precision == 1 && b.recall == 1 && b.f1 == 1 && c.precision == 0 &&
                        c.precision_degenerate && c.recall == 0 && c.f1 == 0 && c.accuracy == 0.5 &&
                        d.recall == 0.75;
  return {worst <= 1e-9 && fixtures,
          fmt("AUC worst |diff| %.2e over 100 instances; hand fixtures %s; recall = TP/(TP+FN)", worst,
              fixtures ? "exact" : "WRONG")};
}

// 3
Outcome kl_properties() {
  Rng rng(303);
  std::uniform_real_distribution<double> u(0, 1);
  int negative = 0, nonzero_self = 0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> p(10), q(10);
    for (int i = 0; i < 10; ++i) {
      p[i] = u(rng) < 0.2 ? 0.0 : u(rng);
      q[i] = u(rng) < 0.2 ? 0.0 : u(rng);
    }
    p[0] += 0.05;
    q[0] += 0.05;
    negative += kl_divergence(p, q, 1e-6) < 0.0;
    nonzero_self += kl_divergence(p, p, 1e-6) != 0.0;
    nonzero_self += kl_divergence(p, p, 0.0) != 0.0;
  }
  const double ln2 = kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}, 0.0);
  const double err = std::abs(ln2 - std::log(2.0));
  return {negative == 0 && nonzero_self == 0 && err <= 1e-12,
          fmt("D(P,P)!=0 in %d cases; D<0 in %d/1000 pairs; |D([1,0],[.5,.5]) - ln2| = %.1e", nonzero_self, negative,
              err)};
}

// 4
Outcome stability() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::size_t> sizes{1, 5, 25, 125};
  const auto c = stability_curve(RiskProcess::beta_iid(2, 5), sizes, 100, 404);
  bool decreasing = true;
  for (std::size_t i = 1; i < c.size(); ++i) decreasing &= c[i].variance_of_mean < c[i - 1].variance_of_mean;
  const double ratio = c.back().variance_of_mean / c.front().variance_of_mean;
  const double secs = seconds_since(t0);
  return {decreasing && ratio < 0.05 && secs < 10.0,
          fmt("var %.2e %.2e %.2e %.2e, ratio %.4f, %.3f s", c[0].variance_of_mean, c[1].variance_of_mean,
              c[2].variance_of_mean, c[3].variance_of_mean, ratio, secs)};
}

// 5
Outcome patient_level_gain() {
  int wins = 0;
  double total_gain = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(505, static_cast<std::uint64_t>(trial)));
    Scorer scorer(ScorerHandle::oracle_noise(0.15, derive_seed(506, static_cast<std::uint64_t>(trial))));
    std::vector<double> img_scores, subj_scores;
    std::vector<int> img_labels, subj_labels;
    for (int s = 0; s < 200; ++s) {
      const int label = s % 2;
      const double risk = label ? sample_beta(rng, 4, 2) : sample_beta(rng, 2, 4);
      std::vector<double> v;
      for (int k = 0; k < 4; ++k) {
        ScoringInput in;
        in.true_risk = risk;
        v.push_back(scorer.score(in).value);
        img_scores.push_back(v.back());
        img_labels.push_back(label);
      }
      subj_scores.push_back(patient_level_score(v));
      subj_labels.push_back(label);
    }
    const double gain = roc_auc(subj_scores, subj_labels) - roc_auc(img_scores, img_labels);
    total_gain += gain;
    wins += gain >= 0.03;
  }
  return {wins >= 90, fmt("gain >= 0.03 in %d/100 trials, mean gain %.4f", wins, total_gain / 100)};
}

// 6
Outcome change_detection() {
  int up = 0, none = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(606, static_cast<std::uint64_t>(trial)));
    std::vector<RiskSample> a, b;
    for (int i = 0; i < 200; ++i) a.push_back({"S", i, sample_beta(rng, 2, 5)});
    for (int i = 0; i < 200; ++i) b.push_back({"S", 200 + i, sample_beta(rng, 5, 2)});
    ChangeTestOptions opt;
    opt.alpha = 0.01;
    const auto v = change_test(a, b, opt);
    up += v.direction == Direction::up && v.p_value < 0.001;
    none += change_test(a, a, opt).direction == Direction::none;
  }
  return {up >= 99 && none == 100, fmt("up with p<0.001 in %d/100; identical windows none in %d/100", up, none)};
}

// 7 and 8
numerics::NumericsReport numerics_report() {
  numerics::NumericsOptions opt;
  opt.fixture_dir = DSHADOW_FIXTURE_DIR;
  return numerics::run_numerics_checks(opt);
}

Outcome checks_named(const numerics::NumericsReport& r, const std::vector<std::string>& names) {
  Outcome o{true, ""};
  for (const auto& n : names) {
    const auto* c = r.find(n);
    const bool ok = c && c->passed;
    o.passed &= ok;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += n + (ok ? " ok" : " FAILED") + (c ? " (" + c->detail + ")" : std::string(" (missing)"));
  }
  return o;
}

// 9
Outcome pipeline_checks() {
  SynthSpec spec;
  spec.subjects = {{"A", RiskProcess::beta_iid(2, 5)}, {"B", RiskProcess::beta_iid(5, 2)}};
  spec.duration_s = 120;
  spec.fps = 10;
  spec.seed = 909;
  const auto m = synth_stream(spec);
  const auto reg = synth_registry(spec, {"A"});
  PipelineConfig c;
  c.seed = 9;
  c.output_root = scratch("det1");
  run_pipeline(c, m, reg, nullptr, nullptr);
  auto c2 = c;
  c2.output_root = scratch("det2");
  run_pipeline(c2, m, reg, nullptr, nullptr);
  bool same = true;
  for (const char* f : {"samples.jsonl", "verdicts.jsonl"})
    same &= slurp(c.output_root / f) == slurp(c2.output_root / f) && !slurp(c.output_root / f).empty();
  for (const auto& e : std::filesystem::recursive_directory_iterator(c.output_root / "reports"))
    if (e.is_regular_file())
      same &= slurp(e.path()) == slurp(c2.output_root / std::filesystem::relative(e.path(), c.output_root));

  const RiskStore persisted(c.output_root / "samples.jsonl");
  const std::size_t bystander = persisted.samples("B").size();
  const std::size_t enrolled = persisted.samples("A").size();

  SynthSpec step;
  step.subjects = {{"A", RiskProcess::step_at(0.2, 0.7, 60000)}};
  step.duration_s = 180;
  step.fps = 10;
  step.seed = 910;
  PipelineConfig cs;
  cs.output_root = scratch("step");
  cs.window_ms = 60000;
  const auto s = run_pipeline(cs, synth_stream(step), synth_registry(step, {"A"}), nullptr, nullptr);
  const VerdictRecord* first_post = nullptr;
  for (const auto& v : s.verdicts)
    if (v.window_start_ms == 60000) first_post = &v;
  const bool up = first_post && first_post->verdict.direction == Direction::up && first_post->verdict.p_value < 0.01;
  return {same && bystander == 0 && enrolled == 1200 && up,
          fmt("byte-identical reruns %s; bystander samples %zu (enrolled %zu); first post-change window %s p=%.2g",
              same ? "yes" : "NO", bystander, enrolled, first_post ? to_string(first_post->verdict.direction) : "missing",
              first_post ? first_post->verdict.p_value : 1.0)};
}

// 10
ReportContext agent_context(double level, Direction dir) {
  ReportContext ctx;
  ctx.profile.subject_id = "S1";
  ctx.profile.registry_label = "S1";
  ctx.current.count = 100;
  ctx.current.mean = level;
  ctx.previous.count = 100;
  ctx.verdict.direction = dir;
  ctx.patient_level = level;
  return ctx;
}

Outcome agent_paths() {
  httplib::Server ok_server, bad_server;
  ok_server.Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"mock narrative"}}]})", "application/json");
  });
  bad_server.Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  const int ok_port = ok_server.bind_to_any_port("127.0.0.1");
  const int bad_port = bad_server.bind_to_any_port("127.0.0.1");
  std::thread t1([&] { ok_server.listen_after_bind(); });
  std::thread t2([&] { bad_server.listen_after_bind(); });
  ok_server.wait_until_ready();
  bad_server.wait_until_ready();

  const Sleeper no_sleep = [](std::chrono::milliseconds) {};
  LlmEndpoint ok_ep, bad_ep;
  ok_ep.base_url = "http://127.0.0.1:" + std::to_string(ok_port);
  ok_ep.model_name = "mock";
  bad_ep.base_url = "http://127.0.0.1:" + std::to_string(bad_port);
  bad_ep.model_name = "mock";

  const auto tmpl = generate_report(agent_context(0.1, Direction::none), std::nullopt, 0);
  const bool p1 = tmpl.generator == ReportGenerator::template_text && tmpl.level == RiskLevel::low;
  const auto llm = generate_report(agent_context(0.9, Direction::up), ok_ep, 0, kDefaultPromptTemplate, no_sleep);
  const bool p2 = llm.generator == ReportGenerator::llm && llm.narrative == "mock narrative" && llm.level == RiskLevel::high;
  const auto fb = generate_report(agent_context(0.5, Direction::none), bad_ep, 0, kDefaultPromptTemplate, no_sleep);
  bool noted = false;
  for (const auto& [k, v] : fb.provenance) noted |= k == "degraded_mode";
  const bool p3 = fb.generator == ReportGenerator::template_text && noted && fb.level == RiskLevel::moderate;

  int grid = 0, agree = 0;
  for (int i = 0; i <= 10; ++i)
    for (auto d : {Direction::up, Direction::down, Direction::none})
      for (const std::optional<LlmEndpoint>& ep : {std::optional<LlmEndpoint>{}, std::optional<LlmEndpoint>{ok_ep}}) {
        ++grid;
        agree += generate_report(agent_context(i / 10.0, d), ep, 0, kDefaultPromptTemplate, no_sleep).level ==
                 classify_level(i / 10.0, d);
      }
  ok_server.stop();
  bad_server.stop();
  t1.join();
  t2.join();
  return {p1 && p2 && p3 && agree == grid,
          fmt("template %s, mock llm %s, failure fallback %s; level == classify_level in %d/%d grid points",
              p1 ? "ok" : "FAILED", p2 ? "ok" : "FAILED", p3 ? "ok" : "FAILED", agree, grid)};
}

// 11
Outcome throughput() {
  SynthSpec spec;
  spec.subjects = {{"A", RiskProcess::beta_iid(2, 5)}, {"B", RiskProcess::beta_iid(5, 2)}};
  spec.duration_s = 20;
  spec.seed = 1111;
  PipelineConfig c;
  c.output_root = scratch("throughput");
  const auto r = profile(c, synth_stream(spec), synth_registry(spec, {"A", "B"}), 600);
  const double fps = r.frames_per_second();
  return {fps >= 30.0, fmt("%.0f frames/s single-threaded over %zu measured frames", fps, r.frames - r.warmup)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  std::optional<numerics::NumericsReport> num;
  const auto numerics_once = [&]() -> const numerics::NumericsReport& {
    if (!num) num = numerics_report();
    return *num;
  };
  const std::vector<Criterion> criteria = {
      {"identity matching vs exhaustive scan", identity_matching},
      {"AUC pair-count oracle and metric fixtures", metrics_and_auc},
      {"KL divergence properties", kl_properties},
      {"window-mean variance decreases", stability},
      {"patient-level AUC gain", patient_level_gain},
      {"change detection", change_detection},
      {"numerics oracle suite",
       [&] {
         return checks_named(numerics_once(), {"quantize_brute_force", "vqkd_gradient_fd", "stop_gradient_probes",
                                               "mim_gradient_fd", "uniform_logit_loss", "descent_total_loss",
                                               "vit_hand_fixture"});
       }},
      {"Grad-CAM",
       [&] {
         return checks_named(numerics_once(), {"gradcam_nonnegative", "gradcam_planted_argmax", "gradcam_occlusion",
                                               "gradcam_analytic_vs_fd", "gradcam_richardson"});
       }},
      {"pipeline determinism, bystanders, step change", pipeline_checks},
      {"agent report paths and level grid", agent_paths},
      {"stub pipeline throughput", throughput},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.passed;
    std::printf("%s %2zu %s: %s\n", o.passed ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
