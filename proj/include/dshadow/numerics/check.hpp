#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dshadow/numerics/gradcam.hpp"
#include "dshadow/numerics/mim.hpp"
#include "dshadow/numerics/oracle.hpp"
#include "dshadow/numerics/serialize.hpp"
#include "dshadow/numerics/vit.hpp"
#include "dshadow/numerics/vqkd.hpp"

namespace dshadow::numerics {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct NumericsReport {
  std::vector<CheckResult> checks;

  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
  const CheckResult* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

struct NumericsOptions {
  std::uint64_t seed = 20240601;
  int instances = 50;          // randomized gradient-check instances
  int quantize_draws = 1000;
  int descent_seeds = 20;
  int descent_steps = 200;
  double descent_step = 1e-2;
  int occlusion_trials = 50;
  double tolerance = 1e-4;
  double fd_step = 1e-5;
  std::optional<std::filesystem::path> fixture_dir;
};

namespace detail {

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

struct VqkdInstance {
  oracle::VqkdPoint point;
  Codebook cb() const { return {point.codes, point.projection}; }
};

inline VqkdInstance random_vqkd_instance(std::uint64_t seed) {
  Rng rng(seed);
  const int n = uniform_int(rng, 1, 4), d = uniform_int(rng, 2, 6), dc = uniform_int(rng, 2, 5);
  const int k = uniform_int(rng, 2, 8), dt = uniform_int(rng, 2, 6);
  VqkdInstance in;
  in.point.features = gaussian_matrix(rng, n, d, 1.0);
  in.point.outputs = gaussian_matrix(rng, n, dt, 1.0);
  in.point.targets = gaussian_matrix(rng, n, dt, 1.0);
  in.point.codes = gaussian_matrix(rng, k, dc, 1.0);
  in.point.projection = gaussian_matrix(rng, d, dc, 1.0);
  return in;
}

}  // namespace detail

inline CheckResult check_quantize(const NumericsOptions& opt) {
  int mismatches = 0;
  for (int t = 0; t < opt.quantize_draws; ++t) {
    Rng rng(derive_seed(opt.seed, "quantize:" + std::to_string(t)));
    const int k = detail::uniform_int(rng, 2, 64), dc = detail::uniform_int(rng, 2, 16), d = detail::uniform_int(rng, dc, 24);
    Codebook cb = init_codebook(k, dc, d, derive_seed(opt.seed, static_cast<std::uint64_t>(t)));
    // every tenth draw duplicates a code so ties get exercised
    if (t % 10 == 0) cb.vectors.row(k - 1) = cb.vectors.row(0);
    const Vec h = t % 10 == 0 ? Vec(cb.projection * cb.vectors.row(0).transpose()) : gaussian_vector(rng, d, 1.0);
    if (quantize(h, cb).index != oracle::brute_force_index(h, cb)) ++mismatches;
  }
  return {"quantize_brute_force", mismatches == 0,
          detail::fmt("%.0f/%.0f draws differ", mismatches, opt.quantize_draws)};
}

inline CheckResult check_vqkd_gradients(const NumericsOptions& opt) {
  double worst = 0.0, worst_value = 0.0;
  int failed = 0;
  for (int t = 0; t < opt.instances; ++t) {
    auto in = detail::random_vqkd_instance(derive_seed(opt.seed, "vqkd:" + std::to_string(t)));
    const auto loss = vqkd_loss(in.point.features, in.point.outputs, in.point.targets, in.cb());
    const oracle::VqkdPoint frozen = in.point;
    oracle::VqkdPoint live = in.point;
    const auto f = [&] { return oracle::vqkd_terms(live, frozen, loss.indices).total(); };
    worst_value = std::max(worst_value, std::abs(f() - loss.value) / std::max(1.0, std::abs(loss.value)));
    const double e = std::max({oracle::relative_error(loss.grad.features, oracle::fd_gradient(live.features, f, opt.fd_step)),
                               oracle::relative_error(loss.grad.outputs, oracle::fd_gradient(live.outputs, f, opt.fd_step)),
                               oracle::relative_error(loss.grad.codes, oracle::fd_gradient(live.codes, f, opt.fd_step)),
                               oracle::relative_error(loss.grad.projection,
                                                      oracle::fd_gradient(live.projection, f, opt.fd_step))});
    worst = std::max(worst, e);
    if (e > opt.tolerance) ++failed;
  }
  return {"vqkd_gradient_fd", failed == 0 && worst_value < 1e-12,
          detail::fmt("%.0f instances, worst rel err %.2e, value mismatch %.2e", opt.instances, worst, worst_value)};
}

// Directional probes of the stop-gradient routing.
inline CheckResult check_stop_gradient(const NumericsOptions& opt) {
  int failed = 0, vacuous = 0;
  double worst = 0.0, leak = 0.0;
  const double h = opt.fd_step;
  for (int t = 0; t < opt.instances; ++t) {
    auto in = detail::random_vqkd_instance(derive_seed(opt.seed, "sg:" + std::to_string(t)));
    Rng rng(derive_seed(opt.seed, "sg-dir:" + std::to_string(t)));
    const auto loss = vqkd_loss(in.point.features, in.point.outputs, in.point.targets, in.cb());
    const oracle::VqkdPoint base = in.point;
    const Mat uh = gaussian_matrix(rng, base.features.rows(), base.features.cols(), 1.0);
    const Mat uv = gaussian_matrix(rng, base.codes.rows(), base.codes.cols(), 1.0);

    const auto along = [&](const Mat& dir, bool on_features, double eps) {
      oracle::VqkdPoint live = base;
      (on_features ? live.features : live.codes) += eps * dir;
      return oracle::vqkd_terms(live, base, loss.indices);
    };
    const auto tp = along(uh, true, h), tm = along(uh, true, -h);
    const auto vp = along(uv, false, h), vm = along(uv, false, -h);

    // term 2 never sees live features; term 3 never sees live codes
    leak = std::max({leak, std::abs(tp.codebook - tm.codebook), std::abs(vp.commitment - vm.commitment)});
    const double d_commit = (tp.commitment - tm.commitment) / (2 * h);
    const double d_codebook = (vp.codebook - vm.codebook) / (2 * h);
    const double a_h = loss.grad.features.cwiseProduct(uh).sum();
    const double a_v = loss.grad.codes.cwiseProduct(uv).sum();
    const auto rel = [](double a, double b) {
      const double m = std::max(std::abs(a), std::abs(b));
      return m < 1e-10 ? 0.0 : std::abs(a - b) / m;
    };
    const double e = std::max(rel(a_h, d_commit), rel(a_v, d_codebook));
    worst = std::max(worst, e);
    if (e > opt.tolerance) ++failed;

    // without stop-gradient the codebook term would move with the features
    oracle::VqkdPoint moved = base;
    moved.features += h * uh;
    const auto nosg_p = oracle::vqkd_terms(base, moved, loss.indices).codebook;
    moved.features = base.features - h * uh;
    const auto nosg_m = oracle::vqkd_terms(base, moved, loss.indices).codebook;
    if (std::abs(nosg_p - nosg_m) / (2 * h) < 1e-8) ++vacuous;
  }
  return {"stop_gradient_probes", failed == 0 && leak == 0.0 && vacuous < opt.instances,
          detail::fmt("worst directional rel err %.2e, blocked-term change %.1e, flat probes %.0f", worst, leak, vacuous)};
}

inline CheckResult check_mim_gradients(const NumericsOptions& opt) {
  double worst_small = 0.0, worst_heads = 0.0, worst_value = 0.0;
  bool nonneg = true;
  for (int t = 0; t < opt.instances; ++t) {
    Rng rng(derive_seed(opt.seed, "mim:" + std::to_string(t)));
    // K = 5, |M| = 3 over N = 8 patches
    MaskSpec mask = random_mask(8, 3.0 / 8.0, rng);
    std::vector<int> targets(8);
    for (int& z : targets) z = detail::uniform_int(rng, 0, 4);
    Mat logits = gaussian_matrix(rng, 3, 5, 2.0);
    const auto loss = mim_loss(logits, targets, mask);
    nonneg = nonneg && loss.value >= 0.0;
    const auto f = [&] { return oracle::mim_value(logits, targets, mask); };
    worst_value = std::max(worst_value, std::abs(f() - loss.value));
    worst_small = std::max(worst_small, oracle::relative_error(loss.grad_logits, oracle::fd_gradient(logits, f, opt.fd_step)));

    // full objective through both heads
    const int n = 6, d = 4, k = 5;
    Mat patches = gaussian_matrix(rng, n, d, 1.0);
    Vec cls = gaussian_vector(rng, d, 1.0);
    MaskSpec m2 = random_mask(n, 0.5, rng);
    std::vector<int> tg(n);
    for (int& z : tg) z = detail::uniform_int(rng, 0, k - 1);
    PretrainHeads heads = init_heads(d, k, derive_seed(opt.seed, static_cast<std::uint64_t>(t)));
    heads.patch_bias = gaussian_vector(rng, k, 0.5);
    heads.cls_bias = gaussian_vector(rng, k, 0.5);
    const auto obj = pretrain_objective(patches, cls, tg, m2, heads);
    const auto g = [&] { return oracle::pretrain_value(patches, cls, tg, m2, heads); };
    worst_value = std::max(worst_value, std::abs(g() - obj.total));
    worst_heads = std::max({worst_heads,
                            oracle::relative_error(obj.grad_heads.patch_weight, oracle::fd_gradient(heads.patch_weight, g, opt.fd_step)),
                            oracle::relative_error(obj.grad_heads.patch_bias, oracle::fd_gradient(heads.patch_bias, g, opt.fd_step)),
                            oracle::relative_error(obj.grad_heads.cls_weight, oracle::fd_gradient(heads.cls_weight, g, opt.fd_step)),
                            oracle::relative_error(obj.grad_heads.cls_bias, oracle::fd_gradient(heads.cls_bias, g, opt.fd_step)),
                            oracle::relative_error(obj.grad_patches, oracle::fd_gradient(patches, g, opt.fd_step)),
                            oracle::relative_error(obj.grad_cls, oracle::fd_gradient(cls, g, opt.fd_step))});
  }
  const bool ok = worst_small <= 1e-6 && worst_heads <= opt.tolerance && worst_value < 1e-10 && nonneg;
  return {"mim_gradient_fd", ok,
          detail::fmt("K=5 |M|=3 worst %.2e; objective worst %.2e; value mismatch %.1e", worst_small, worst_heads, worst_value)};
}

inline CheckResult check_uniform_logits(const NumericsOptions& opt) {
  double worst = 0.0;
  Rng rng(derive_seed(opt.seed, "uniform"));
  for (int k : {2, 5, 32, 64})
    for (int m : {1, 3, 6}) {
      MaskSpec mask;
      for (int i = 0; i < m; ++i) mask.masked_indices.push_back(i);
      mask.ratio = static_cast<double>(m) / 10.0;
      std::vector<int> targets(10);
      for (int& z : targets) z = detail::uniform_int(rng, 0, k - 1);
      const Mat logits = Mat::Constant(m, k, sample_normal(rng, 0.0, 3.0));
      worst = std::max(worst, std::abs(mim_loss(logits, targets, mask).value - m * std::log(static_cast<double>(k))));
    }
  return {"uniform_logit_loss", worst <= 1e-12, detail::fmt("max |loss - |M| ln K| = %.2e", worst)};
}

// Plain gradient descent on the prediction heads over fixed encoder features.
inline CheckResult check_descent(const NumericsOptions& opt) {
  int decreasing = 0;
  for (int s = 0; s < opt.descent_seeds; ++s) {
    const std::uint64_t seed = derive_seed(opt.seed, "descent:" + std::to_string(s));
    Rng rng(seed);
    EncoderConfig cfg;
    const EncoderState enc = init_encoder(cfg, seed);
    ImageTensor img(32, 32, 3);
    std::uniform_real_distribution<double> px(0.0, 1.0);
    for (double& v : img.data) v = px(rng);
    const PatchSet ps = patchify(img, cfg.patch_size);
    const MaskSpec mask = random_mask(static_cast<std::size_t>(ps.count()), 0.4, rng);
    const int k = 32;
    std::vector<int> targets(static_cast<std::size_t>(ps.count()));
    for (int& z : targets) z = detail::uniform_int(rng, 0, k - 1);
    const auto fwd = vit_forward(ps, enc, mask.masked_indices);
    const Mat patches = fwd.patches();
    const Vec cls = fwd.cls();
    PretrainHeads heads = init_heads(cfg.width, k, seed);

    double prev = pretrain_objective(patches, cls, targets, mask, heads).total;
    bool ok = true;
    for (int step = 0; step < opt.descent_steps && ok; ++step) {
      const auto obj = pretrain_objective(patches, cls, targets, mask, heads);
      heads.patch_weight -= opt.descent_step * obj.grad_heads.patch_weight;
      heads.patch_bias -= opt.descent_step * obj.grad_heads.patch_bias;
      heads.cls_weight -= opt.descent_step * obj.grad_heads.cls_weight;
      heads.cls_bias -= opt.descent_step * obj.grad_heads.cls_bias;
      const double next = pretrain_objective(patches, cls, targets, mask, heads).total;
      ok = next < prev;
      prev = next;
    }
    if (ok) ++decreasing;
  }
  const int need = static_cast<int>(std::ceil(0.95 * opt.descent_seeds));
  return {"descent_total_loss", decreasing >= need,
          detail::fmt("%.0f/%.0f seeds strictly decreasing (need %.0f)", decreasing, opt.descent_seeds, need)};
}

namespace detail {

inline ClassHead random_head(Rng& rng, Eigen::Index tokens, Eigen::Index width, int classes) {
  ClassHead head;
  for (int c = 0; c < classes; ++c) head.weights.push_back(gaussian_matrix(rng, tokens, width, 1.0));
  head.bias = gaussian_vector(rng, classes, 1.0);
  return head;
}

inline PatchSet random_patches(Rng& rng, int grid, int p) {
  ImageTensor img(grid * p, grid * p, 3);
  std::uniform_real_distribution<double> px(0.0, 1.0);
  for (double& v : img.data) v = px(rng);
  return patchify(img, p);
}

}  // namespace detail

inline std::vector<CheckResult> check_grad_cam(const NumericsOptions& opt) {
  std::vector<CheckResult> out;

  // non-negativity, range and rescaling invariance on random fixtures
  {
    bool ok = true;
    double worst_scale = 0.0;
    for (int t = 0; t < 10; ++t) {
      Rng rng(derive_seed(opt.seed, "cam:" + std::to_string(t)));
      EncoderConfig cfg;
      cfg.final_norm = t % 2 == 0;
      const auto enc = init_encoder(cfg, derive_seed(opt.seed, static_cast<std::uint64_t>(t)));
      const auto ps = detail::random_patches(rng, 4, cfg.patch_size);
      auto head = detail::random_head(rng, ps.count() + 1, cfg.width, 2);
      for (int c = 0; c < 2; ++c) {
        const auto cam = grad_cam(enc, head, ps, c);
        ok = ok && cam.map.size() == ps.count() && (cam.map.array() >= 0.0).all() && (cam.map.array() <= 1.0).all() &&
             (cam.raw.array() >= 0.0).all();
        // a final norm drives every alpha to ~0 and leaves only rounding noise
        if (cfg.final_norm) continue;
        ClassHead scaled = head;
        scaled.weights[static_cast<std::size_t>(c)] *= 3.7;
        const auto cam2 = grad_cam(enc, scaled, ps, c);
        ok = ok && argmax(cam.map) == argmax(cam2.map);
        worst_scale = std::max(worst_scale, (cam.map - cam2.map).cwiseAbs().maxCoeff());
      }
    }
    // all gradients <= 0 and embeddings >= 0 gives an all-zero map
    {
      Rng rng(derive_seed(opt.seed, "cam-relu"));
      EncoderConfig cfg;
      cfg.layers = 0;
      cfg.final_norm = false;
      cfg.positional = false;
      auto enc = init_encoder(cfg, 7);
      enc.patch_projection = enc.patch_projection.cwiseAbs();
      const auto ps = detail::random_patches(rng, 4, cfg.patch_size);
      ClassHead head;
      head.weights = {-gaussian_matrix(rng, ps.count() + 1, cfg.width, 1.0).cwiseAbs()};
      head.bias = Vec::Zero(1);
      ok = ok && grad_cam(enc, head, ps, 0).map.isZero(0.0);
    }
    out.push_back({"gradcam_nonnegative", ok && worst_scale < 1e-9,
                   detail::fmt("20 maps in [0,1]; rescaling changes map by at most %.1e", worst_scale)});
  }

  // planted fixture: head reads only patch 7
  {
    const auto t = oracle::planted_trial(derive_seed(opt.seed, "planted-fixture"), 4.0, true, 7);
    const auto cam = grad_cam(t.enc, t.head, t.ps, 0);
    const auto top = argmax(cam.map);
    out.push_back({"gradcam_planted_argmax", top == 7, detail::fmt("argmax %.0f (expected 7)", static_cast<double>(top))});
  }

  // occlusion oracle agreement over random planted trials
  {
    int agree = 0;
    for (int i = 0; i < opt.occlusion_trials; ++i) {
      const auto t = oracle::planted_trial(derive_seed(opt.seed, "occlusion:" + std::to_string(i)));
      const auto cam = grad_cam(t.enc, t.head, t.ps, 0);
      if (argmax(cam.map) == argmax(oracle::occlusion_drops(t.enc, t.head, t.ps, 0))) ++agree;
    }
    const int need = static_cast<int>(std::ceil(0.9 * opt.occlusion_trials));
    out.push_back({"gradcam_occlusion", agree >= need,
                   detail::fmt("%.0f/%.0f trials agree (need %.0f)", agree, opt.occlusion_trials, need)});
  }

  // analytic path vs central differences, and step-halving consistency
  {
    double worst = 0.0, worst_rich = 0.0;
    for (int t = 0; t < 10; ++t) {
      Rng rng(derive_seed(opt.seed, "cam-fd:" + std::to_string(t)));
      EncoderConfig cfg;
      cfg.final_norm = t % 2 == 1;
      const auto enc = init_encoder(cfg, derive_seed(opt.seed, 100u + static_cast<std::uint64_t>(t)));
      const auto ps = detail::random_patches(rng, 4, cfg.patch_size);
      const auto head = detail::random_head(rng, ps.count() + 1, cfg.width, 1);
      const Mat a = grad_wrt_patch_embeddings(enc, head, ps, 0);
      const Mat f5 = grad_wrt_patch_embeddings(enc, head, ps, 0, {GradMethod::finite_difference, 1e-5});
      const Mat f4 = grad_wrt_patch_embeddings(enc, head, ps, 0, {GradMethod::finite_difference, 1e-4});
      worst = std::max(worst, oracle::relative_error(a, f5));
      worst_rich = std::max(worst_rich, oracle::relative_error(f4, f5));
    }
    out.push_back({"gradcam_analytic_vs_fd", worst <= opt.tolerance, detail::fmt("worst rel err %.2e", worst)});
    out.push_back({"gradcam_richardson", worst_rich <= 1e-3, detail::fmt("steps 1e-4 vs 1e-5 worst %.2e", worst_rich)});
  }
  return out;
}

inline CheckResult check_vit_fixture(const std::filesystem::path& file) {
  const json doc = read_json_file(file);
  const EncoderState enc = encoder_from_json(doc.at("encoder"));
  const auto& im = doc.at("image");
  ImageTensor img(im.at("height").get<int>(), im.at("width").get<int>(), im.at("channels").get<int>());
  img.data = im.at("data").get<std::vector<double>>();
  const auto fwd = vit_forward(patchify(img, enc.patch_size), enc);
  const Mat act = mat_from_json(doc.at("expected").at("activations"));
  const Mat tok = mat_from_json(doc.at("expected").at("tokens"));
  const double e = std::max((fwd.activations - act).cwiseAbs().maxCoeff(), (fwd.tokens - tok).cwiseAbs().maxCoeff());
  return {"vit_hand_fixture", e <= 1e-9, detail::fmt("max abs diff %.2e", e)};
}

inline NumericsReport run_numerics_checks(const NumericsOptions& opt = {}) {
  NumericsReport r;
  const auto guarded = [&](const char* name, auto&& fn) {
    try {
      r.checks.push_back(fn());
    } catch (const std::exception& ex) {
      r.checks.push_back({name, false, std::string("error: ") + ex.what()});
    }
  };
  guarded("quantize_brute_force", [&] { return check_quantize(opt); });
  guarded("vqkd_gradient_fd", [&] { return check_vqkd_gradients(opt); });
  guarded("stop_gradient_probes", [&] { return check_stop_gradient(opt); });
  guarded("mim_gradient_fd", [&] { return check_mim_gradients(opt); });
  guarded("uniform_logit_loss", [&] { return check_uniform_logits(opt); });
  guarded("descent_total_loss", [&] { return check_descent(opt); });
  try {
    for (auto& c : check_grad_cam(opt)) r.checks.push_back(std::move(c));
  } catch (const std::exception& ex) {
    r.checks.push_back({"gradcam", false, std::string("error: ") + ex.what()});
  }
  if (opt.fixture_dir) guarded("vit_hand_fixture", [&] { return check_vit_fixture(*opt.fixture_dir / "vit_hand.json"); });
  return r;
}

inline json to_json(const NumericsReport& r) {
  json checks = json::array();
  for (const auto& c : r.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return {{"passed", r.passed()}, {"checks", checks}};
}

}  // namespace dshadow::numerics
