#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "dshadow/numerics/check.hpp"
#include "dshadow/numerics/serialize.hpp"

#ifndef DSHADOW_FIXTURE_DIR
#define DSHADOW_FIXTURE_DIR "fixtures"
#endif

using namespace dshadow;
using namespace dshadow::numerics;

namespace {

ImageTensor ramp_image(int h, int w, int c) {
  ImageTensor img(h, w, c);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i % 97) / 97.0;
  return img;
}

EncoderState small_encoder(int layers, bool final_norm, bool positional, std::uint64_t seed = 1) {
  EncoderConfig cfg;
  cfg.patch_size = 2;
  cfg.num_patches = 4;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.mlp_hidden = 16;
  cfg.layers = layers;
  cfg.final_norm = final_norm;
  cfg.positional = positional;
  return init_encoder(cfg, seed);
}

ClassHead head_with(Mat w) {
  ClassHead h;
  h.weights = {std::move(w)};
  h.bias = Vec::Zero(1);
  return h;
}

const CheckResult& must_find(const NumericsReport& r, const std::string& name) {
  const auto* c = r.find(name);
  if (!c) throw std::runtime_error("missing check " + name);
  return *c;
}

}  // namespace

TEST(Patch, CountAndShape) {
  const auto ps = patchify(ramp_image(4, 4, 3), 2);
  EXPECT_EQ(ps.count(), 4);
  EXPECT_EQ(ps.patch_dim(), 12);
  EXPECT_THROW(patchify(ramp_image(5, 4, 3), 2), Error);
}

TEST(Patch, ConstantImage) {
  ImageTensor img(8, 8, 3);
  std::fill(img.data.begin(), img.data.end(), 0.25);
  const auto ps = patchify(img, 4);
  for (Eigen::Index i = 1; i < ps.count(); ++i) EXPECT_EQ(ps.patches.row(i), ps.patches.row(0));
}

TEST(Patch, RoundTripBitExact) {
  const auto img = ramp_image(12, 8, 3);
  EXPECT_EQ(unpatchify(patchify(img, 4)).data, img.data);
}

TEST(Vit, ZeroLayerIsLinearProjection) {
  const auto enc = small_encoder(0, false, false);
  const auto ps = patchify(ramp_image(4, 4, 3), 2);
  const auto out = vit_forward(ps, enc);
  const Mat expected = (ps.patches * enc.patch_projection).rowwise() + enc.patch_bias.transpose();
  EXPECT_LT((out.patches() - expected).norm(), 1e-14);
}

TEST(Vit, IdenticalPatchesStayEqualWithoutPositions) {
  const auto enc = small_encoder(2, true, false);
  auto ps = patchify(ramp_image(4, 4, 3), 2);
  ps.patches.row(3) = ps.patches.row(1);
  const auto out = vit_forward(ps, enc);
  EXPECT_LT((out.tokens.row(2) - out.tokens.row(4)).norm(), 1e-12);
  auto swapped = ps;
  swapped.patches.row(0).swap(swapped.patches.row(2));
  const auto out2 = vit_forward(swapped, enc);
  EXPECT_LT((out2.tokens.row(1) - out.tokens.row(3)).norm(), 1e-12);
}

TEST(Vit, DeterministicAndFinite) {
  const auto enc = small_encoder(2, true, true);
  const auto ps = patchify(ramp_image(4, 4, 3), 2);
  const auto a = vit_forward(ps, enc), b = vit_forward(ps, enc);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_TRUE(a.tokens.allFinite());
}

TEST(Vit, HandFixture) {
  const auto r = check_vit_fixture(std::filesystem::path(DSHADOW_FIXTURE_DIR) / "vit_hand.json");
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Vit, SerializeRoundTrip) {
  const auto enc = small_encoder(2, true, true, 3);
  const auto back = encoder_from_json(to_json(enc));
  const auto ps = patchify(ramp_image(4, 4, 3), 2);
  EXPECT_EQ(vit_forward(ps, enc).tokens, vit_forward(ps, back).tokens);
  auto j = to_json(enc);
  j["version"] = 99;
  EXPECT_THROW(encoder_from_json(j), Error);
}

TEST(Quantize, ExactMemberAndTie) {
  Codebook cb;
  cb.projection = Mat::Identity(3, 3);
  cb.vectors = Mat::Random(5, 3);
  Vec h = 4.0 * cb.vectors.row(3).transpose();
  const auto q = quantize(h, cb);
  EXPECT_EQ(q.index, 3);
  EXPECT_NEAR(q.distance, 0.0, 1e-15);
  EXPECT_EQ(q.code, cb.vectors.row(3).transpose());

  Codebook tie;
  tie.projection = Mat::Identity(2, 2);
  tie.vectors.resize(3, 2);
  tie.vectors << 0, 5, 1, 1, 1, -1;
  EXPECT_EQ(quantize(Vec::Unit(2, 0), tie).index, 1);
}

TEST(Quantize, MatchesBruteForce) {
  const auto r = check_quantize(NumericsOptions{});
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Vqkd, PerfectReconstructionGivesMinusN) {
  Rng rng(5);
  const Mat features = gaussian_matrix(rng, 3, 6, 1.0);
  Codebook cb;
  cb.projection = orthonormal_columns(rng, 6, 4);
  cb.vectors = features * cb.projection;
  const Mat targets = gaussian_matrix(rng, 3, 5, 1.0);
  const auto loss = vqkd_loss(features, targets, targets, cb);
  EXPECT_NEAR(loss.value, -3.0, 1e-12);
  EXPECT_EQ(loss.indices, (std::vector<int>{0, 1, 2}));
}

TEST(Vqkd, GradientsAndStopGradient) {
  NumericsOptions opt;
  const auto g = check_vqkd_gradients(opt);
  EXPECT_TRUE(g.passed) << g.detail;
  const auto s = check_stop_gradient(opt);
  EXPECT_TRUE(s.passed) << s.detail;
}

TEST(Mim, UniformAndConfident) {
  MaskSpec mask{{0, 2, 3}, 0.6};
  const std::vector<int> targets{1, 0, 4, 2, 3};
  const auto u = mim_loss(Mat::Zero(3, 5), targets, mask);
  EXPECT_NEAR(u.value, 3 * std::log(5.0), 1e-12);
  Mat sure = Mat::Zero(3, 5);
  sure(0, 1) = sure(1, 4) = sure(2, 2) = 60.0;
  EXPECT_LT(mim_loss(sure, targets, mask).value, 1e-20);
  EXPECT_GE(mim_loss(-sure, targets, mask).value, 0.0);
}

TEST(Mim, GradientMatchesFiniteDifferences) {
  const auto r = check_mim_gradients(NumericsOptions{});
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Mim, TotalLoss) {
  EXPECT_EQ(total_loss(1.7, 0.0), 1.7);
  EXPECT_EQ(total_loss(1.0, 1.0), 2.0);
  EXPECT_THROW(total_loss(1.0, std::nan("")), Error);
  Rng rng(8);
  const Mat patches = gaussian_matrix(rng, 5, 4, 1.0);
  const Vec cls = gaussian_vector(rng, 4, 1.0);
  const auto heads = init_heads(4, 6, 8);
  const std::vector<int> targets{0, 5, 2, 2, 1};
  const MaskSpec mask{{1, 4}, 0.4};
  const auto obj = pretrain_objective(patches, cls, targets, mask, heads);
  EXPECT_NEAR(obj.total, oracle::pretrain_value(patches, cls, targets, mask, heads), 1e-12);
  EXPECT_EQ(obj.total, total_loss(obj.mim, obj.cls));
}

TEST(Mim, MaskValidation) {
  Rng rng(1);
  const auto m = random_mask(16, 0.4, rng);
  EXPECT_EQ(m.masked_indices.size(), 6u);
  EXPECT_NO_THROW(validate(m, 16));
  EXPECT_THROW(validate(MaskSpec{{3, 1}, 2.0 / 16}, 16), Error);
}

TEST(GradCam, ClsOnlyHeadHasZeroPatchGradient) {
  const auto enc = small_encoder(0, false, true);
  const auto ps = patchify(ramp_image(4, 4, 3), 2);
  Mat w = Mat::Zero(5, 8);
  w.row(0).setOnes();
  EXPECT_EQ(grad_wrt_patch_embeddings(enc, head_with(w), ps, 0).norm(), 0.0);
}

TEST(GradCam, LinearMeanHead) {
  const auto enc = small_encoder(0, false, true);
  const auto ps = patchify(ramp_image(4, 4, 3), 2);
  Rng rng(2);
  const Vec wv = gaussian_vector(rng, 8, 1.0);
  Mat w = Mat::Zero(5, 8);
  w.bottomRows(4).rowwise() = (wv / 4.0).transpose();
  for (auto m : {GradMethod::analytic, GradMethod::finite_difference}) {
    const Mat g = grad_wrt_patch_embeddings(enc, head_with(w), ps, 0, {m, 1e-5});
    for (Eigen::Index p = 0; p < 4; ++p) EXPECT_LT((g.row(p).transpose() - wv / 4.0).norm(), 1e-9);
  }
}

TEST(GradCam, ReluKill) {
  const Mat grad = -Mat::Ones(4, 3);
  const Mat act = Mat::Ones(4, 3);
  const auto cam = cam_from(grad, act);
  EXPECT_EQ(cam.map, Vec::Zero(4));
}

TEST(GradCam, PlantedPatchSeven) {
  const auto t = oracle::planted_trial(20240601, 24.0, true, 7);
  const auto cam = grad_cam(t.enc, t.head, t.ps, 0);
  EXPECT_EQ(argmax(cam.map), 7);
  EXPECT_GE(cam.map.minCoeff(), 0.0);
  EXPECT_LE(cam.map.maxCoeff(), 1.0);
}

TEST(GradCam, RescalingKeepsOrder) {
  const auto t = oracle::planted_trial(77);
  auto scaled = t.head;
  scaled.weights[0] *= 3.5;
  const auto a = grad_cam(t.enc, t.head, t.ps, 0), b = grad_cam(t.enc, scaled, t.ps, 0);
  EXPECT_EQ(argmax(a.map), argmax(b.map));
  EXPECT_LT((a.map - b.map).norm(), 1e-9);
  EXPECT_LT((3.5 * a.raw - b.raw).norm(), 1e-9 * b.raw.norm());
}

TEST(GradCam, SuiteChecks) {
  NumericsOptions opt;
  for (const auto& c : check_grad_cam(opt)) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Suite, AllChecksPass) {
  NumericsOptions opt;
  opt.fixture_dir = DSHADOW_FIXTURE_DIR;
  const auto r = run_numerics_checks(opt);
  for (const auto& c : r.checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
  EXPECT_TRUE(must_find(r, "descent_total_loss").passed);
  EXPECT_TRUE(must_find(r, "uniform_logit_loss").passed);
  EXPECT_EQ(to_json(r)["passed"], true);
}
