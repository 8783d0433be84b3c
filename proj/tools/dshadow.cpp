// dshadow command-line front end.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dshadow/dshadow.hpp"

#ifndef DSHADOW_FIXTURE_DIR
#define DSHADOW_FIXTURE_DIR "fixtures"
#endif

namespace {

using namespace dshadow;
using json = nlohmann::json;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(s);
  while (std::getline(ss, cell, sep))
    if (!cell.empty()) out.push_back(cell);
  return out;
}

std::vector<double> parse_reals(const std::string& s) {
  std::vector<double> v;
  for (const auto& c : split(s, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(c, &used));
      require(used == c.size(), ErrorKind::parse, "bad number '" + c + "'");
    } catch (const std::logic_error&) {
      fail(ErrorKind::parse, "bad number '" + c + "'");
    }
  }
  return v;
}

void print_summary(const RunSummary& s, bool as_json) {
  if (as_json) {
    std::cout << to_json(s).dump(2) << '\n';
    return;
  }
  std::printf("frames processed   %zu / %zu (skipped %zu, errors %zu)\n", s.frames_processed, s.frames_total,
              s.frames_skipped, s.frame_errors);
  std::printf("faces detected     %zu (matched %zu, rejected %zu)\n", s.faces_detected, s.faces_matched,
              s.faces_rejected);
  std::printf("samples stored     %zu\n", s.samples_stored);
  std::printf("verdicts emitted   %zu\n", s.verdicts_emitted);
  std::printf("reports written    %zu\n", s.reports_written);
  for (const auto& v : s.verdicts)
    std::printf("  %-12s [%lld, %lld) n=%zu mean=%.3f direction=%s p=%.3g\n", v.subject_id.c_str(),
                static_cast<long long>(v.window_start_ms), static_cast<long long>(v.window_end_ms), v.current.count,
                v.current.mean, to_string(v.verdict.direction), v.verdict.p_value);
}

int run_status(const RunSummary& s) { return s.frame_errors == 0 ? 0 : 3; }

// Options shared by monitor/profile that override config fields.
struct Overrides {
  std::string manifest, registry, out, records, llm_url, llm_model = "default";
  std::int64_t window_ms = 0;
  double tau = -1, alpha = -1;
  std::size_t bins = 0, stride = 0;
  std::uint64_t seed = 0;
  bool seed_set = false, pipelined = false, no_reports = false;

  void attach(CLI::App* app) {
    app->add_option("--manifest", manifest, "Manifest JSONL file");
    app->add_option("--registry", registry, "Registry JSON file");
    app->add_option("--out", out, "Output root directory");
    app->add_option("--records", records, "Records root directory");
    app->add_option("--window-ms", window_ms, "Window length T in ms");
    app->add_option("--tau", tau, "Match acceptance threshold");
    app->add_option("--alpha", alpha, "Change-test significance level");
    app->add_option("--bins", bins, "Histogram bins");
    app->add_option("--stride", stride, "Process every n-th frame");
    app->add_option("--seed", seed, "Random seed")->each([this](const std::string&) { seed_set = true; });
    app->add_option("--llm-url", llm_url, "Chat-completion base URL");
    app->add_option("--llm-model", llm_model, "Model name sent to the LLM endpoint");
    app->add_flag("--pipelined", pipelined, "Overlap scoring and persistence on two threads");
    app->add_flag("--no-reports", no_reports, "Skip per-window report generation");
  }

  void apply(PipelineConfig& c) const {
    if (!manifest.empty()) c.manifest = manifest;
    if (!registry.empty()) c.registry = registry;
    if (!out.empty()) c.output_root = out;
    if (!records.empty()) c.records_root = records;
    if (window_ms > 0) c.window_ms = window_ms;
    if (tau >= 0) c.tau = tau;
    if (alpha >= 0) c.alpha = alpha;
    if (bins > 0) c.bins = bins;
    if (stride > 0) c.stride = stride;
    if (seed_set) c.seed = seed;
    if (pipelined) c.pipelined = true;
    if (no_reports) c.reports = false;
    if (!llm_url.empty()) {
      LlmEndpoint e;
      e.base_url = llm_url;
      e.model_name = llm_model;
      if (const char* tok = std::getenv(kLlmTokenEnv); tok && *tok) e.api_token = tok;
      c.llm = e;
    }
  }
};

PipelineConfig config_with(const std::string& path, const Overrides& o) {
  PipelineConfig c = path.empty() ? PipelineConfig{} : load_config(path);
  o.apply(c);
  validate(c);
  return c;
}

// ---- metrics CSV -----------------------------------------------------------

struct Labeled {
  std::vector<double> scores;
  std::vector<int> truth;
};

Labeled read_labeled_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  Labeled out;
  std::string line;
  int score_col = -1, truth_col = -1;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (score_col < 0) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "score") score_col = static_cast<int>(i);
        if (cells[i] == "truth") truth_col = static_cast<int>(i);
      }
      require(score_col >= 0 && truth_col >= 0, ErrorKind::parse, path + ": header needs score and truth columns");
      continue;
    }
    const auto at = [&](int col) -> const std::string& {
      require(static_cast<std::size_t>(col) < cells.size(), ErrorKind::parse,
              path + ":" + std::to_string(line_no) + ": missing column");
      return cells[static_cast<std::size_t>(col)];
    };
    const auto s = parse_reals(at(score_col));
    const auto t = parse_reals(at(truth_col));
    require(s.size() == 1 && t.size() == 1 && (t[0] == 0.0 || t[0] == 1.0), ErrorKind::parse,
            path + ":" + std::to_string(line_no) + ": expected a real score and a 0/1 truth");
    out.scores.push_back(s[0]);
    out.truth.push_back(static_cast<int>(t[0]));
  }
  require(score_col >= 0, ErrorKind::parse, path + ": empty file");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dshadow: passive risk monitoring pipeline"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic stream and run the pipeline on it");
  std::string sim_out = "sim_out", sim_subjects = "A,B", sim_registered, sim_risk = "beta", sim_records;
  double sim_duration = 120, sim_fps = 30, sim_value = 0.5, sim_a = 2, sim_b = 5, sim_before = 0.2, sim_after = 0.7;
  double sim_sigma = 0.05, sim_tau = 0.9, sim_noise = 0.0;
  std::int64_t sim_change_ms = 60000, sim_window_ms = 60000;
  std::uint64_t sim_seed = 42;
  std::size_t sim_stride = 1;
  bool sim_json = false, sim_no_reports = false, sim_pipelined = false;
  sim->add_option("--out", sim_out, "Output directory")->capture_default_str();
  sim->add_option("--subjects", sim_subjects, "Comma-separated subject labels in view")->capture_default_str();
  sim->add_option("--registered", sim_registered, "Labels to enrol (default: all subjects)");
  sim->add_option("--risk", sim_risk, "Risk process: constant, beta or step")
      ->check(CLI::IsMember({"constant", "beta", "step"}))
      ->capture_default_str();
  sim->add_option("--value", sim_value, "Constant risk level");
  sim->add_option("--a", sim_a, "Beta a");
  sim->add_option("--b", sim_b, "Beta b");
  sim->add_option("--before", sim_before, "Step level before the change");
  sim->add_option("--after", sim_after, "Step level after the change");
  sim->add_option("--change-ms", sim_change_ms, "Step change time (ms from stream start)");
  sim->add_option("--risk-noise", sim_noise, "Normal noise on constant/step risk");
  sim->add_option("--duration", sim_duration, "Stream length in seconds")->capture_default_str();
  sim->add_option("--fps", sim_fps, "Frames per second")->capture_default_str();
  sim->add_option("--seed", sim_seed, "Seed for the stream and scorer")->capture_default_str();
  sim->add_option("--window-ms", sim_window_ms, "Window length T in ms")->capture_default_str();
  sim->add_option("--sigma", sim_sigma, "Stub scorer noise")->capture_default_str();
  sim->add_option("--tau", sim_tau, "Match acceptance threshold")->capture_default_str();
  sim->add_option("--stride", sim_stride, "Process every n-th frame")->capture_default_str();
  sim->add_option("--records", sim_records, "Create minimal profiles for enrolled subjects under this root");
  sim->add_flag("--json", sim_json, "Print the run summary as JSON");
  sim->add_flag("--no-reports", sim_no_reports, "Skip per-window reports");
  sim->add_flag("--pipelined", sim_pipelined, "Two-stage threaded mode");

  // monitor
  auto* mon = app.add_subcommand("monitor", "Run the pipeline on a manifest");
  std::string mon_config;
  bool mon_json = false;
  Overrides mon_over;
  mon->add_option("--config", mon_config, "Pipeline config JSON");
  mon_over.attach(mon);
  mon->add_flag("--json", mon_json, "Print the run summary as JSON");

  // report
  auto* rep = app.add_subcommand("report", "Generate a report for one subject on demand");
  std::string rep_records, rep_samples, rep_subject, rep_llm_url, rep_llm_model = "default";
  std::int64_t rep_now = 0, rep_window = 60000;
  double rep_low = 0.35, rep_high = 0.65;
  bool rep_json = false;
  rep->add_option("--records", rep_records, "Records root")->required();
  rep->add_option("--samples", rep_samples, "Risk-sample JSONL store")->required();
  rep->add_option("--subject", rep_subject, "Subject id")->required();
  rep->add_option("--now-ms", rep_now, "Report instant (default: last sample time + 1)");
  rep->add_option("--window-ms", rep_window, "Window length T in ms")->capture_default_str();
  rep->add_option("--theta-low", rep_low, "Low threshold")->capture_default_str();
  rep->add_option("--theta-high", rep_high, "High threshold")->capture_default_str();
  rep->add_option("--llm-url", rep_llm_url, "Chat-completion base URL");
  rep->add_option("--llm-model", rep_llm_model, "Model name");
  rep->add_flag("--json", rep_json, "Print the report as JSON");

  // metrics
  auto* met = app.add_subcommand("metrics", "Classification metrics over a CSV with score and truth columns");
  std::string met_input;
  double met_threshold = 0.5;
  bool met_json = false;
  met->add_option("input", met_input, "CSV file")->required();
  met->add_option("--threshold", met_threshold, "Decision threshold")->capture_default_str();
  met->add_flag("--json", met_json, "Print JSON");

  // profile
  auto* prof = app.add_subcommand("profile", "Per-stage latency harness");
  std::string prof_config;
  std::size_t prof_frames = 100, prof_warmup = 5;
  bool prof_json = false;
  Overrides prof_over;
  prof->add_option("--config", prof_config, "Pipeline config JSON (default: synthetic 2-subject stream)");
  prof->add_option("--frames", prof_frames, "Frames to run (>= 10)")->capture_default_str();
  prof->add_option("--warmup", prof_warmup, "Warm-up frames excluded from statistics")->capture_default_str();
  prof_over.attach(prof);
  prof->add_flag("--json", prof_json, "Print JSON");

  // numerics-check
  auto* num = app.add_subcommand("numerics-check", "Run the numerics oracle suite");
  std::string num_fixtures = DSHADOW_FIXTURE_DIR;
  std::uint64_t num_seed = numerics::NumericsOptions{}.seed;
  bool num_json = false;
  num->add_option("--fixtures", num_fixtures, "Fixture directory")->capture_default_str();
  num->add_option("--seed", num_seed, "Seed")->capture_default_str();
  num->add_flag("--json", num_json, "Print JSON");

  // registry
  auto* reg = app.add_subcommand("registry", "Manage the face registry");
  reg->require_subcommand(1);
  std::string reg_path, reg_label, reg_embedding;
  std::size_t reg_dim = 16;
  std::uint64_t reg_synth_seed = 0;
  bool reg_synth = false, reg_json = false;
  auto* reg_init = reg->add_subcommand("init", "Create an empty registry");
  reg_init->add_option("--path", reg_path, "Registry file")->required();
  reg_init->add_option("--dimension", reg_dim, "Embedding dimension")->capture_default_str();
  auto* reg_add = reg->add_subcommand("add", "Add a template for a label");
  reg_add->add_option("--path", reg_path, "Registry file")->required();
  reg_add->add_option("--label", reg_label, "Identity label")->required();
  auto* emb_opt = reg_add->add_option("--embedding", reg_embedding, "Comma-separated vector");
  reg_add->add_option("--synthetic-seed", reg_synth_seed, "Enrol the synthetic base vector for this seed")
      ->each([&](const std::string&) { reg_synth = true; })
      ->excludes(emb_opt);
  auto* reg_list = reg->add_subcommand("list", "List identities");
  reg_list->add_option("--path", reg_path, "Registry file")->required();
  reg_list->add_flag("--json", reg_json, "Print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*sim) {
      const auto subjects = split(sim_subjects, ',');
      auto registered = sim_registered.empty() ? subjects : split(sim_registered, ',');
      RiskProcess process;
      if (sim_risk == "constant") process = RiskProcess::constant_at(sim_value);
      else if (sim_risk == "beta") process = RiskProcess::beta_iid(sim_a, sim_b);
      else process = RiskProcess::step_at(sim_before, sim_after, sim_change_ms, sim_noise);
      if (sim_risk == "constant") process.noise_sd = sim_noise;

      SynthSpec spec;
      for (const auto& s : subjects) spec.subjects.push_back({s, process});
      spec.duration_s = sim_duration;
      spec.fps = sim_fps;
      spec.seed = sim_seed;
      const auto manifest = synth_stream(spec);
      const auto registry = synth_registry(spec, registered);

      std::filesystem::create_directories(sim_out);
      save_manifest(manifest, std::filesystem::path(sim_out) / "manifest.jsonl");
      save_registry(registry, std::filesystem::path(sim_out) / "registry.json");

      PipelineConfig c;
      c.manifest = std::filesystem::path(sim_out) / "manifest.jsonl";
      c.registry = std::filesystem::path(sim_out) / "registry.json";
      c.output_root = sim_out;
      c.window_ms = sim_window_ms;
      c.scorer.sigma = sim_sigma;
      c.tau = sim_tau;
      c.stride = sim_stride;
      c.seed = sim_seed;
      c.reports = !sim_no_reports;
      c.pipelined = sim_pipelined;
      if (!sim_records.empty()) {
        RecordsDb db(sim_records);
        for (const auto& label : registered)
          if (!db.fetch(label)) {
            SubjectProfile p;
            p.subject_id = label;
            p.registry_label = label;
            db.upsert(p, &registry);
          }
        c.records_root = sim_records;
      }
      const auto summary = run_pipeline(c);
      print_summary(summary, sim_json);
      return run_status(summary);
    }

    if (*mon) {
      const auto c = config_with(mon_config, mon_over);
      const auto summary = run_pipeline(c);
      print_summary(summary, mon_json);
      return run_status(summary);
    }

    if (*rep) {
      const RecordsDb db(rep_records);
      require(std::filesystem::exists(rep_samples), ErrorKind::not_found, "sample store not found: " + rep_samples);
      const RiskStore store(rep_samples);
      if (!db.fetch(rep_subject)) fail(ErrorKind::not_found, "unknown subject '" + rep_subject + "'");
      std::int64_t now = rep_now;
      if (now == 0) {
        const auto all = store.samples(rep_subject);
        now = all.empty() ? 0 : all.back().timestamp_ms + 1;
      }
      const auto inputs = fetch_context(db, store, rep_subject, now, rep_window);
      std::optional<LlmEndpoint> ep;
      if (!rep_llm_url.empty()) {
        LlmEndpoint e;
        e.base_url = rep_llm_url;
        e.model_name = rep_llm_model;
        if (const char* tok = std::getenv(kLlmTokenEnv); tok && *tok) e.api_token = tok;
        ep = e;
      }
      const auto report = generate_report(make_report_context(inputs, {rep_low, rep_high}), ep, now);
      if (rep_json) std::cout << to_json(report).dump(2) << '\n';
      else std::cout << render_text(report);
      return 0;
    }

    if (*met) {
      const auto data = read_labeled_csv(met_input);
      const auto counts = confusion(std::span<const double>(data.scores), data.truth, met_threshold);
      const auto m = metrics(counts);
      std::optional<double> auc;
      try {
        auc = roc_auc(data.scores, data.truth);
      } catch (const Error&) {
      }
      if (met_json) {
        json j = {{"tp", counts.tp},         {"tn", counts.tn},           {"fp", counts.fp},
                  {"fn", counts.fn},         {"accuracy", m.accuracy},    {"precision", m.precision},
                  {"recall", m.recall},      {"f1", m.f1},                {"degenerate", m.degenerate()},
                  {"threshold", met_threshold}};
        j["auc"] = auc ? json(*auc) : json(nullptr);
        std::cout << j.dump(2) << '\n';
      } else {
        std::printf("tp %llu tn %llu fp %llu fn %llu\n", static_cast<unsigned long long>(counts.tp),
                    static_cast<unsigned long long>(counts.tn), static_cast<unsigned long long>(counts.fp),
                    static_cast<unsigned long long>(counts.fn));
        std::printf("accuracy %.4g\nprecision %.4g%s\nrecall %.4g%s\nf1 %.4g%s\n", m.accuracy, m.precision,
                    m.precision_degenerate ? " (degenerate)" : "", m.recall, m.recall_degenerate ? " (degenerate)" : "",
                    m.f1, m.f1_degenerate ? " (degenerate)" : "");
        if (auc) std::printf("auc %.4g\n", *auc);
      }
      return 0;
    }

    if (*prof) {
      PipelineConfig c;
      StreamManifest manifest;
      FaceRegistry registry;
      if (!prof_config.empty() || !prof_over.manifest.empty()) {
        c = config_with(prof_config, prof_over);
        validate_paths(c);
        manifest = load_manifest(c.manifest);
        registry = load_registry(c.registry);
      } else {
        SynthSpec spec;
        spec.subjects = {{"A", RiskProcess::beta_iid(2, 5)}, {"B", RiskProcess::beta_iid(5, 2)}};
        spec.duration_s = static_cast<double>(prof_frames) / spec.fps;
        spec.seed = 7;
        manifest = synth_stream(spec);
        registry = synth_registry(spec, {"A", "B"});
        c.output_root = "profile_out";
        prof_over.apply(c);
        validate(c);
      }
      const auto r = profile(c, manifest, registry, prof_frames, prof_warmup);
      write_profile(r, c.output_root);
      if (prof_json) {
        std::cout << to_json(r).dump(2) << '\n';
      } else {
        std::printf("%-8s %6s %10s %10s %10s %10s\n", "stage", "count", "mean_ms", "p50_ms", "p95_ms", "max_ms");
        for (const auto& t : r.stages)
          std::printf("%-8s %6zu %10.4f %10.4f %10.4f %10.4f\n", to_string(t.stage), t.count, t.mean_ms, t.p50_ms,
                      t.p95_ms, t.max_ms);
        std::printf("throughput %.1f frames/s\n", r.frames_per_second());
      }
      return 0;
    }

    if (*num) {
      numerics::NumericsOptions o;
      o.seed = num_seed;
      if (!num_fixtures.empty()) o.fixture_dir = num_fixtures;
      const auto r = numerics::run_numerics_checks(o);
      if (num_json) {
        std::cout << numerics::to_json(r).dump(2) << '\n';
      } else {
        for (const auto& c : r.checks)
          std::printf("%s %-24s %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
      }
      return r.passed() ? 0 : 1;
    }

    if (*reg) {
      if (*reg_init) {
        require(!std::filesystem::exists(reg_path), ErrorKind::config, "registry already exists: " + reg_path);
        save_registry(FaceRegistry(reg_dim), reg_path);
        return 0;
      }
      if (*reg_add) {
        auto r = load_registry(reg_path);
        std::vector<double> v;
        if (reg_synth) v = synth_base_embedding(reg_synth_seed, reg_label, r.dimension()).vector;
        else {
          require(!reg_embedding.empty(), ErrorKind::config, "give --embedding or --synthetic-seed");
          v = parse_reals(reg_embedding);
        }
        r.add(normalize(std::move(v)), reg_label);
        save_registry(r, reg_path);
        return 0;
      }
      if (*reg_list) {
        const auto r = load_registry(reg_path);
        if (reg_json) {
          json j = json::array();
          for (const auto& e : r.entries()) j.push_back({{"label", e.label}, {"templates", e.templates.size()}});
          std::cout << j.dump(2) << '\n';
        } else {
          std::printf("dimension %zu, %zu identities\n", r.dimension(), r.entries().size());
          for (const auto& e : r.entries()) std::printf("  %s (%zu templates)\n", e.label.c_str(), e.templates.size());
        }
        return 0;
      }
    }
  } catch (const Error& e) {
    std::cerr << "dshadow: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dshadow: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
