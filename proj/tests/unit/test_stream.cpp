#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "dshadow/stream.hpp"

using namespace dshadow;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dshadow_test_stream_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Stream, EmptyManifestYieldsNothing) {
  std::istringstream in("");
  FrameStream s(parse_manifest(in));
  EXPECT_FALSE(s.next().has_value());
}

TEST(Stream, EntriesInOrder) {
  std::istringstream in(R"({"frame_index":0}
{"frame_index":1}
{"frame_index":2}
)");
  FrameStream s(parse_manifest(in));
  for (std::uint64_t i = 0; i < 3; ++i) {
    auto f = s.next();
    ASSERT_TRUE(f);
    EXPECT_EQ(f->frame_index, i);
  }
  EXPECT_FALSE(s.next());
}

TEST(Stream, AutoTimestampsAt30Fps) {
  StreamManifest m;
  m.fps = 30;
  for (std::uint64_t i = 0; i < 300; ++i) m.entries.push_back({i, std::nullopt, std::nullopt, {}});
  FrameStream s(m);
  auto prev = s.next();
  EXPECT_EQ(prev->timestamp_ms, 0);
  while (auto f = s.next()) {
    const auto dt = f->timestamp_ms - prev->timestamp_ms;
    EXPECT_TRUE(dt == 33 || dt == 34) << dt;
    prev = f;
  }
  EXPECT_EQ(prev->timestamp_ms, 9967);  // round(299 * 1000 / 30)
}

TEST(Stream, MetadataLineAndExplicitTimestamps) {
  std::istringstream in(R"({"stream_id":"cam1","fps":10,"start_ms":5000}
{"frame_index":0}
{"frame_index":1,"timestamp_ms":5150}
)");
  auto m = parse_manifest(in);
  EXPECT_EQ(m.stream_id, "cam1");
  FrameStream s(m);
  EXPECT_EQ(s.next()->timestamp_ms, 5000);
  auto f = s.next();
  EXPECT_EQ(f->timestamp_ms, 5150);
  EXPECT_EQ(f->stream_id, "cam1");
}

TEST(Stream, RejectsNonIncreasingIndex) {
  std::istringstream in("{\"frame_index\":1}\n{\"frame_index\":1}\n");
  EXPECT_THROW(parse_manifest(in), Error);
}

TEST(Stream, RejectsDecreasingTimestamp) {
  std::istringstream in("{\"frame_index\":0,\"timestamp_ms\":100}\n{\"frame_index\":1,\"timestamp_ms\":50}\n");
  EXPECT_THROW(parse_manifest(in), Error);
}

TEST(Stream, MalformedLineNamesTheLine) {
  std::istringstream in("{\"frame_index\":0}\nnot json\n");
  try {
    parse_manifest(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Stream, MissingImageFailsAtOpen) {
  StreamManifest m;
  m.entries.push_back({0, std::nullopt, std::string("nope.png"), {}});
  m.base_dir = scratch("missing");
  try {
    FrameStream s(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::stream);
    EXPECT_NE(std::string(e.what()).find("frame 0"), std::string::npos);
  }
}

TEST(Stream, ReplayIsIdentical) {
  SynthSpec spec;
  spec.subjects = {{"A", RiskProcess::beta_iid(2, 5)}, {"B", RiskProcess::constant_at(0.3)}};
  spec.duration_s = 2;
  spec.seed = 9;
  FrameStream s(synth_stream(spec));
  std::vector<FrameRecord> first;
  while (auto f = s.next()) first.push_back(*f);
  s.rewind();
  std::vector<FrameRecord> second;
  while (auto f = s.next()) second.push_back(*f);
  EXPECT_EQ(first, second);
}

TEST(Stream, SaveLoadRoundTrip) {
  SynthSpec spec;
  spec.subjects = {{"A", RiskProcess::beta_iid(2, 5)}};
  spec.duration_s = 1;
  spec.seed = 4;
  const auto m = synth_stream(spec);
  const auto dir = scratch("roundtrip");
  save_manifest(m, dir / "m.jsonl");
  FrameStream a(m), b(load_manifest(dir / "m.jsonl"));
  while (auto fa = a.next()) {
    auto fb = b.next();
    ASSERT_TRUE(fb);
    EXPECT_EQ(*fa, *fb);
  }
  EXPECT_FALSE(b.next());
}

TEST(Synth, FrameCount) {
  SynthSpec spec;
  spec.subjects = {{"A", RiskProcess::constant_at(0.5)}};
  spec.duration_s = 1;
  spec.fps = 10;
  EXPECT_EQ(synth_stream(spec).entries.size(), 10u);
}

TEST(Synth, ConstantProcess) {
  SynthSpec spec;
  spec.subjects = {{"A", RiskProcess::constant_at(0.5)}, {"B", RiskProcess::constant_at(0.5)}};
  spec.duration_s = 2;
  for (const auto& e : synth_stream(spec).entries) {
    ASSERT_EQ(e.annotations.size(), 2u);
    for (const auto& a : e.annotations) EXPECT_EQ(*a.true_risk, 0.5);
  }
}

TEST(Synth, BetaMeanMonteCarlo) {
  SynthSpec spec;
  spec.subjects = {{"A", RiskProcess::beta_iid(2, 5)}};
  spec.duration_s = 10000;
  spec.fps = 1;
  spec.seed = 42;
  const auto m = synth_stream(spec);
  ASSERT_EQ(m.entries.size(), 10000u);
  double s = 0;
  for (const auto& e : m.entries) s += *e.annotations[0].true_risk;
  EXPECT_NEAR(s / 10000.0, 2.0 / 7.0, 0.01);
}

TEST(Synth, SeedDeterminism) {
  SynthSpec spec;
  spec.subjects = {{"A", RiskProcess::beta_iid(2, 5)}};
  spec.duration_s = 3;
  spec.seed = 1;
  const auto a = synth_stream(spec), b = synth_stream(spec);
  spec.seed = 2;
  const auto c = synth_stream(spec);
  bool differs = false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].annotations, b.entries[i].annotations);
    differs |= *a.entries[i].annotations[0].true_risk != *c.entries[i].annotations[0].true_risk;
  }
  EXPECT_TRUE(differs);
}

TEST(Synth, StepProcessSwitchesAtChange) {
  SynthSpec spec;
  spec.subjects = {{"A", RiskProcess::step_at(0.2, 0.7, 1000)}};
  spec.duration_s = 2;
  spec.fps = 10;
  for (const auto& e : synth_stream(spec).entries)
    EXPECT_EQ(*e.annotations[0].true_risk, *e.timestamp_ms < 1000 ? 0.2 : 0.7);
}

TEST(Synth, RejectsBadSpec) {
  SynthSpec spec;
  EXPECT_THROW(synth_stream(spec), Error);
  spec.subjects = {{"A", RiskProcess::beta_iid(0, 5)}};
  EXPECT_THROW(synth_stream(spec), Error);
  spec.subjects = {{"A", RiskProcess::constant_at(0.5)}};
  spec.duration_s = 0;
  EXPECT_THROW(synth_stream(spec), Error);
}
