#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dshadow/error.hpp"
#include "dshadow/numerics/gradcam.hpp"
#include "dshadow/numerics/mim.hpp"
#include "dshadow/numerics/vit.hpp"
#include "dshadow/numerics/vqkd.hpp"

namespace dshadow::numerics {

using json = nlohmann::json;

inline constexpr int kWeightsVersion = 1;

inline json to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Mat mat_from_json(const json& j) {
  if (j.is_null() || j.empty()) return Mat();
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    require(static_cast<Eigen::Index>(row.size()) == cols, ErrorKind::parse, "ragged matrix in weights document");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

inline Vec vec_from_json(const json& j) {
  if (j.is_null()) return Vec();
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

inline json to_json(const LayerNorm& ln) { return {{"gamma", to_json(ln.gamma)}, {"beta", to_json(ln.beta)}, {"eps", ln.eps}}; }

inline LayerNorm layer_norm_from_json(const json& j) {
  return {vec_from_json(j.at("gamma")), vec_from_json(j.at("beta")), j.value("eps", 1e-6)};
}

inline json to_json(const Block& b) {
  return {{"ln1", to_json(b.ln1)}, {"wq", to_json(b.wq)}, {"wk", to_json(b.wk)}, {"wv", to_json(b.wv)},
          {"wo", to_json(b.wo)},   {"bq", to_json(b.bq)}, {"bk", to_json(b.bk)}, {"bv", to_json(b.bv)},
          {"bo", to_json(b.bo)},   {"ln2", to_json(b.ln2)}, {"w1", to_json(b.w1)}, {"b1", to_json(b.b1)},
          {"w2", to_json(b.w2)},   {"b2", to_json(b.b2)}};
}

inline Block block_from_json(const json& j) {
  Block b;
  b.ln1 = layer_norm_from_json(j.at("ln1"));
  b.wq = mat_from_json(j.at("wq"));
  b.wk = mat_from_json(j.at("wk"));
  b.wv = mat_from_json(j.at("wv"));
  b.wo = mat_from_json(j.at("wo"));
  b.bq = vec_from_json(j.at("bq"));
  b.bk = vec_from_json(j.at("bk"));
  b.bv = vec_from_json(j.at("bv"));
  b.bo = vec_from_json(j.at("bo"));
  b.ln2 = layer_norm_from_json(j.at("ln2"));
  b.w1 = mat_from_json(j.at("w1"));
  b.b1 = vec_from_json(j.at("b1"));
  b.w2 = mat_from_json(j.at("w2"));
  b.b2 = vec_from_json(j.at("b2"));
  return b;
}

inline json to_json(const EncoderState& e) {
  json blocks = json::array();
  for (const auto& b : e.blocks) blocks.push_back(to_json(b));
  return {{"version", kWeightsVersion},
          {"patch_size", e.patch_size},
          {"num_heads", e.num_heads},
          {"patch_projection", to_json(e.patch_projection)},
          {"patch_bias", to_json(e.patch_bias)},
          {"cls_token", to_json(e.cls_token)},
          {"pos_embedding", to_json(e.pos_embedding)},
          {"mask_token", to_json(e.mask_token)},
          {"blocks", blocks},
          {"final_norm", e.final_norm},
          {"norm", to_json(e.norm)}};
}

inline EncoderState encoder_from_json(const json& j) {
  try {
    require(j.value("version", 0) == kWeightsVersion, ErrorKind::parse, "unsupported weights version");
    EncoderState e;
    e.patch_size = j.at("patch_size").get<int>();
    e.num_heads = j.at("num_heads").get<int>();
    e.patch_projection = mat_from_json(j.at("patch_projection"));
    e.patch_bias = vec_from_json(j.at("patch_bias"));
    e.cls_token = vec_from_json(j.at("cls_token"));
    e.pos_embedding = mat_from_json(j.value("pos_embedding", json()));
    e.mask_token = vec_from_json(j.value("mask_token", json()));
    for (const auto& b : j.at("blocks")) e.blocks.push_back(block_from_json(b));
    e.final_norm = j.value("final_norm", true);
    e.norm = e.final_norm ? layer_norm_from_json(j.at("norm")) : LayerNorm::identity(e.patch_projection.cols());
    return e;
  } catch (const json::exception& ex) {
    fail(ErrorKind::parse, std::string("encoder weights: ") + ex.what());
  }
}

inline json to_json(const Codebook& cb) {
  return {{"version", kWeightsVersion}, {"vectors", to_json(cb.vectors)}, {"projection", to_json(cb.projection)}};
}

inline Codebook codebook_from_json(const json& j) {
  try {
    return {mat_from_json(j.at("vectors")), mat_from_json(j.at("projection"))};
  } catch (const json::exception& ex) {
    fail(ErrorKind::parse, std::string("codebook: ") + ex.what());
  }
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    fail(ErrorKind::parse, path.string() + ": " + ex.what());
  }
}

inline void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace dshadow::numerics
