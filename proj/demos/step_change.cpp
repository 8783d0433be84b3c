// Two subjects in view, one enrolled. The enrolled subject's risk steps from
// 0.2 to 0.7 two minutes in; each closed minute prints its verdict.

#include <cstdio>
#include <filesystem>

#include "dshadow/dshadow.hpp"

int main() {
  using namespace dshadow;
  const auto out = std::filesystem::temp_directory_path() / "dshadow_demo_step";

  SynthSpec spec;
  spec.subjects = {{"alice", RiskProcess::step_at(0.2, 0.7, 120000, 0.05)},
                   {"passerby", RiskProcess::beta_iid(2, 5)}};
  spec.duration_s = 240;
  spec.fps = 10;
  spec.seed = 3;
  const auto manifest = synth_stream(spec);
  const auto registry = synth_registry(spec, {"alice"});

  RecordsDb records;
  SubjectProfile p;
  p.subject_id = "alice";
  p.registry_label = "alice";
  p.health_record.age_years = 67;
  p.health_record.chief_complaint = "intermittent chest tightness";
  records.upsert(p, &registry);

  PipelineConfig cfg;
  cfg.output_root = out;
  cfg.window_ms = 60000;
  cfg.seed = 3;
  const auto summary = run_pipeline(cfg, manifest, registry, &records);

  std::printf("%zu frames, %zu faces matched to alice, %zu unregistered faces dropped\n", summary.frames_processed, summary.faces_matched,
              summary.faces_rejected);
  for (const auto& v : summary.verdicts)
    std::printf("%s [%3llds, %3llds)  mean %.3f  %s  p=%.2g\n", v.subject_id.c_str(),
                static_cast<long long>(v.window_start_ms / 1000), static_cast<long long>(v.window_end_ms / 1000),
                v.current.mean, to_string(v.verdict.direction), v.verdict.p_value);
  std::printf("reports under %s\n", (out / "reports").string().c_str());
}
