#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "dshadow/identity.hpp"

using namespace dshadow;

namespace {

FaceEmbedding random_unit(Rng& rng, std::size_t d) {
  std::normal_distribution<double> n(0, 1);
  std::vector<double> v(d);
  for (double& x : v) x = n(rng);
  return normalize(std::move(v));
}

// Exhaustive scan with an explicit tie rule, written independently of match_identity.
std::pair<std::string, double> oracle_match(const FaceEmbedding& probe, const FaceRegistry& r) {
  std::vector<std::pair<double, std::string>> all;
  for (const auto& e : r.entries())
    for (const auto& t : e.templates) {
      double s = 0;
      for (std::size_t i = 0; i < t.vector.size(); ++i) s += (t.vector[i] - probe.vector[i]) * (t.vector[i] - probe.vector[i]);
      all.push_back({std::sqrt(s), e.label});
    }
  std::sort(all.begin(), all.end());
  return {all.front().second, all.front().first};
}

FrameRecord frame_with(std::vector<FaceAnnotation> a) {
  FrameRecord f;
  f.annotations = std::move(a);
  return f;
}

}  // namespace

TEST(Detect, EmptyFrame) { EXPECT_TRUE(detect_faces(frame_with({}), DetectorHandle::annotation_stub()).empty()); }

TEST(Detect, PassesAnnotationsInOrderBitExact) {
  Rng rng(1);
  FaceAnnotation a, b;
  a.box = {0, 0, 4, 4, 0.9};
  a.embedding = random_unit(rng, 16);
  a.identity_label = "A";
  b.box = {8, 0, 4, 4, 0.8};
  b.embedding = random_unit(rng, 16);
  const auto faces = detect_faces(frame_with({a, b}), DetectorHandle::annotation_stub());
  ASSERT_EQ(faces.size(), 2u);
  EXPECT_EQ(faces[0].embedding->vector, a.embedding->vector);
  EXPECT_EQ(faces[1].embedding->vector, b.embedding->vector);
  EXPECT_EQ(*faces[0].identity_label, "A");
}

TEST(Detect, CropsFromImage) {
  FrameRecord f;
  f.image = Image(8, 8);
  f.image.at(2, 3, 0) = 200;
  FaceAnnotation a;
  a.box = {3, 2, 2, 2, 1.0};
  f.annotations = {a};
  const auto faces = detect_faces(f, DetectorHandle::annotation_stub());
  ASSERT_TRUE(faces[0].crop);
  EXPECT_EQ(faces[0].crop->width, 2);
  EXPECT_EQ(faces[0].crop->at(0, 0, 0), 200);
}

TEST(Embed, PassthroughUnchanged) {
  Rng rng(2);
  DetectedFace f;
  f.embedding = random_unit(rng, 16);
  EXPECT_EQ(embed(f, EmbedderHandle::passthrough(16)).vector, f.embedding->vector);
}

TEST(Embed, PassthroughNormalizesAndChecksDimension) {
  DetectedFace f;
  f.embedding = FaceEmbedding{{3.0, 4.0}, false};
  const auto e = embed(f, EmbedderHandle::passthrough(2));
  EXPECT_NEAR(e.vector[0], 0.6, 1e-15);
  EXPECT_THROW(embed(f, EmbedderHandle::passthrough(3)), Error);
}

TEST(Embed, HashProjectionDeterministicUnitNorm) {
  Rng rng(3);
  std::uniform_int_distribution<int> px(0, 255);
  const auto h = EmbedderHandle::hash_projection(16);
  for (int k = 0; k < 100; ++k) {
    DetectedFace f;
    f.crop = Image(6 + k % 5, 7);
    for (auto& p : f.crop->pixels) p = static_cast<std::uint8_t>(px(rng));
    const auto e1 = embed(f, h), e2 = embed(f, h);
    EXPECT_EQ(e1.vector, e2.vector);
    EXPECT_NEAR(l2_norm(e1.vector), 1.0, 1e-9);
  }
}

TEST(Match, EmptyRegistry) {
  FaceRegistry r(2);
  EXPECT_FALSE(match_identity(FaceEmbedding{{1, 0}, true}, r, 0.5));
}

TEST(Match, OrthogonalPair) {
  FaceRegistry r;
  r.add(FaceEmbedding{{1, 0}, true}, "A");
  r.add(FaceEmbedding{{0, 1}, true}, "B");
  const auto m = match_identity(FaceEmbedding{{1, 0}, true}, r, 0.0);
  EXPECT_EQ(m->label, "A");
  EXPECT_EQ(m->distance, 0.0);
  EXPECT_TRUE(m->accepted);
}

TEST(Match, ThresholdRejects) {
  FaceRegistry r;
  r.add(FaceEmbedding{{1, 0}, true}, "A");
  const auto m = match_identity(FaceEmbedding{{0, 1}, true}, r, 0.9);
  EXPECT_EQ(m->label, "A");
  EXPECT_FALSE(m->accepted);
  EXPECT_THROW(match_identity(FaceEmbedding{{0, 1}, true}, r, -1.0), Error);
  EXPECT_THROW(match_identity(FaceEmbedding{{0, 1, 0}, true}, r, 1.0), Error);
}

TEST(Match, TieGoesToSmallestLabelRegardlessOfOrder) {
  const FaceEmbedding p{{1, 0}, true};
  FaceRegistry r1, r2;
  r1.add(FaceEmbedding{{0, 1}, true}, "zed");
  r1.add(FaceEmbedding{{0, -1}, true}, "amy");
  r2.add(FaceEmbedding{{0, -1}, true}, "amy");
  r2.add(FaceEmbedding{{0, 1}, true}, "zed");
  EXPECT_EQ(match_identity(p, r1, 2)->label, "amy");
  EXPECT_EQ(match_identity(p, r2, 2)->label, "amy");
}

TEST(Match, RandomRegistriesAgreeWithExhaustiveScan) {
  Rng rng(20240601);
  std::uniform_int_distribution<int> size(1, 100);
  for (int trial = 0; trial < 1000; ++trial) {
    FaceRegistry r;
    const int n = size(rng);
    for (int i = 0; i < n; ++i) r.add(random_unit(rng, 16), "id" + std::to_string(i));
    const auto probe = random_unit(rng, 16);
    const auto m = match_identity(probe, r, 0.9);
    const auto [label, dist] = oracle_match(probe, r);
    ASSERT_EQ(m->label, label);
    ASSERT_EQ(m->distance, dist);
  }
}

TEST(Match, UnitNormDistanceIdentity) {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    const auto a = random_unit(rng, 16), b = random_unit(rng, 16);
    double dot = 0;
    for (int i = 0; i < 16; ++i) dot += a.vector[i] * b.vector[i];
    const double d = l2_distance(a.vector, b.vector);
    EXPECT_NEAR(d * d, 2 - 2 * dot, 1e-9);
  }
}

TEST(Match, FartherEntryNeverChangesResult) {
  Rng rng(6);
  for (int k = 0; k < 100; ++k) {
    FaceRegistry r;
    for (int i = 0; i < 10; ++i) r.add(random_unit(rng, 16), "id" + std::to_string(i));
    const auto probe = random_unit(rng, 16);
    const auto before = *match_identity(probe, r, 1);
    FaceEmbedding far = probe;
    for (double& x : far.vector) x = -x;
    if (before.distance < 2.0) {
      r.add(far, "aaa");
      const auto after = *match_identity(probe, r, 1);
      EXPECT_EQ(after.label, before.label);
      EXPECT_EQ(after.distance, before.distance);
    }
  }
}

TEST(Register, IntoEmptyAndDuplicate) {
  FaceRegistry r(2);
  const FaceEmbedding e{{1, 0}, true};
  r = register_face(e, "A", r);
  EXPECT_EQ(r.size(), 1u);
  r = register_face(e, "A", r);
  EXPECT_EQ(r.size(), 1u);
  EXPECT_EQ(r.find("A")->templates.size(), 2u);
  EXPECT_EQ(match_identity(e, r, 0)->distance, 0.0);
  EXPECT_THROW(register_face(e, "", r), Error);
}

TEST(Register, MultiTemplateUsesMinimum) {
  Rng rng(8);
  for (int k = 0; k < 50; ++k) {
    FaceRegistry r;
    for (int t = 0; t < 5; ++t) r = register_face(random_unit(rng, 16), "A", r);
    r = register_face(random_unit(rng, 16), "B", r);
    const auto probe = random_unit(rng, 16);
    double best_a = 1e9;
    for (const auto& t : r.find("A")->templates) best_a = std::min(best_a, l2_distance(probe.vector, t.vector));
    const double b = l2_distance(probe.vector, r.find("B")->templates[0].vector);
    const auto m = match_identity(probe, r, 2);
    EXPECT_EQ(m->label, best_a <= b ? "A" : "B");
    EXPECT_EQ(m->distance, std::min(best_a, b));
  }
}

TEST(Registry, SaveLoadRoundTrip) {
  Rng rng(10);
  FaceRegistry r;
  r.add(random_unit(rng, 16), "A");
  r.add(random_unit(rng, 16), "A");
  r.add(random_unit(rng, 16), "B");
  const auto p = std::filesystem::temp_directory_path() / "dshadow_test_registry.json";
  save_registry(r, p);
  EXPECT_EQ(load_registry(p), r);
}

TEST(Registry, SharedSnapshotIsStable) {
  SharedRegistry s(FaceRegistry(2));
  auto snap = s.snapshot();
  s.register_face(FaceEmbedding{{1, 0}, true}, "A");
  EXPECT_TRUE(snap->empty());
  EXPECT_EQ(s.match(FaceEmbedding{{1, 0}, true}, 0.1)->label, "A");
}
