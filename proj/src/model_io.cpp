// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/model_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

namespace asplat {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian raw f64");

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

// A named run of doubles inside the payload. Sections are contiguous and
// appear in exactly the order the header declares.
struct Section {
  std::string name;
  std::vector<double> values;
};

void append_matrix(std::vector<Section>& out, const std::string& name, const MatX& m) {
  Section s;
  s.name = name;
  s.values.reserve(static_cast<size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) s.values.push_back(m(r, c));
  out.push_back(std::move(s));
}

void append_vector(std::vector<Section>& out, const std::string& name, const VecX& v) {
  Section s;
  s.name = name;
  s.values.assign(v.data(), v.data() + v.size());
  out.push_back(std::move(s));
}

std::vector<Section> flatten(const AvatarModel& model) {
  const KinematicTemplate& tpl = model.tpl;
  std::vector<Section> sections;

  Section rest;
  rest.name = "tpl_rest_global";
  for (const RigidTransform& t : tpl.rest_global) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rest.values.push_back(t.rotation(r, c));
    for (int r = 0; r < 3; ++r) rest.values.push_back(t.translation[r]);
  }
  sections.push_back(std::move(rest));

  Section samples;
  samples.name = "tpl_sample_positions";
  for (const Vec3& p : tpl.sample_positions)
    for (int r = 0; r < 3; ++r) samples.values.push_back(p[r]);
  sections.push_back(std::move(samples));

  append_matrix(sections, "tpl_sample_weights", tpl.sample_weights);
  append_matrix(sections, "means", model.gaussians.means);
  append_matrix(sections, "rotations", model.gaussians.rotations);
  append_matrix(sections, "log_scales", model.gaussians.log_scales);
  append_vector(sections, "opacity_logits", model.gaussians.opacity_logits);
  append_matrix(sections, "sh", model.gaussians.sh);
  append_vector(sections, "grid_delta", model.grid.delta);
  append_vector(sections, "grid_latent", model.grid.latent);
  append_matrix(sections, "latent_table", model.latent.params);
  append_matrix(sections, "pg_delta", model.pg_delta);
  append_matrix(sections, "pg_latent", model.pg_latent);
  return sections;
}

json make_header(const AvatarModel& model, const std::vector<Section>& sections) {
  const KinematicTemplate& tpl = model.tpl;
  json h;
  h["version"] = kFormatVersion;
  h["count"] = model.gaussians.count();
  h["sh_degree"] = model.gaussians.sh_degree;
  h["n_b"] = tpl.joint_count();
  h["n_l"] = model.latent.n_l;
  h["latent_frames"] = model.latent.frame_count();
  h["skinning_mode"] =
      model.skinning_mode == SkinningMode::kGrid ? "grid" : "per_gaussian";
  h["grid"] = {{"res", {model.grid.res.x(), model.grid.res.y(), model.grid.res.z()}},
               {"lo", {model.grid.lo.x(), model.grid.lo.y(), model.grid.lo.z()}},
               {"hi", {model.grid.hi.x(), model.grid.hi.y(), model.grid.hi.z()}},
               {"n_b", model.grid.n_b},
               {"n_l", model.grid.n_l}};
  h["template"] = {{"parents", tpl.parents},
                   {"joint_names", tpl.joint_names},
                   {"skinning_sigma", tpl.skinning_sigma},
                   {"sample_count", tpl.sample_count()}};
  json decl = json::array();
  for (const Section& s : sections)
    decl.push_back({{"name", s.name}, {"count", s.values.size()}});
  h["sections"] = decl;
  return h;
}

// Sequential reader over an already-open stream; tracks the absolute offset
// so every error can name the byte it happened at.
struct Reader {
  std::ifstream in;
  uint64_t offset = 0;

  void read(void* dst, size_t bytes, const char* what) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (static_cast<size_t>(in.gcount()) != bytes)
      throw std::runtime_error("truncated model file: expected " + std::string(what) +
                               " at byte offset " + std::to_string(offset));
    offset += bytes;
  }
};

json read_header(Reader& r) {
  char magic[8];
  r.read(magic, 8, "magic");
  if (std::memcmp(magic, kModelMagic, 8) != 0)
    throw std::runtime_error("model version mismatch: bad magic (expected ASPLATM1)");
  uint64_t header_len = 0;
  r.read(&header_len, 8, "header length");
  if (header_len == 0 || header_len > (1u << 26))
    throw std::runtime_error("model header length out of range: " +
                             std::to_string(header_len));
  std::string text(header_len, '\0');
  r.read(text.data(), header_len, "header");
  json h;
  try {
    h = json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("malformed model header: ") + e.what());
  }
  const int version = h.at("version").get<int>();
  if (version != kFormatVersion)
    throw std::runtime_error("model version mismatch: got version " +
                             std::to_string(version));
  return h;
}

std::vector<double> read_section(Reader& r, const std::string& name, size_t expected) {
  std::vector<double> values(expected);
  if (expected > 0) {
    const uint64_t start = r.offset;
    r.read(values.data(), expected * sizeof(double), name.c_str());
    for (size_t i = 0; i < expected; ++i)
      if (!std::isfinite(values[i]))
        throw std::runtime_error("non-finite value in section '" + name +
                                 "' at byte offset " +
                                 std::to_string(start + i * sizeof(double)));
  }
  return values;
}

MatX to_matrix(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols,
               const std::string& name) {
  if (static_cast<Eigen::Index>(v.size()) != rows * cols)
    throw std::runtime_error("section '" + name + "' size mismatch: got " +
                             std::to_string(v.size()) + ", expected " +
                             std::to_string(rows * cols));
  MatX m(rows, cols);
  size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[k++];
  return m;
}

}  // namespace

void save_model(const AvatarModel& model, const std::string& path) {
  const std::vector<Section> sections = flatten(model);
  for (const Section& s : sections)
    for (double v : s.values)
      if (!std::isfinite(v))
        throw std::runtime_error("refusing to save non-finite values in section '" +
                                 s.name + "'");

  const std::string header = make_header(model, sections).dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kModelMagic, 8);
  const uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&header_len), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const Section& s : sections)
    out.write(reinterpret_cast<const char*>(s.values.data()),
              static_cast<std::streamsize>(s.values.size() * sizeof(double)));
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

AvatarModel load_model(const std::string& path) {
  Reader r;
  r.in.open(path, std::ios::binary);
  if (!r.in) throw std::runtime_error("cannot open model file: " + path);
  const json h = read_header(r);

  AvatarModel model;
  try {
    const int count = h.at("count").get<int>();
    const int n_b = h.at("n_b").get<int>();
    const int n_l = h.at("n_l").get<int>();
    const int latent_frames = h.at("latent_frames").get<int>();
    const int basis = sh_basis_size(h.at("sh_degree").get<int>());
    const std::string mode = h.at("skinning_mode").get<std::string>();
    if (mode != "grid" && mode != "per_gaussian")
      throw std::runtime_error("unknown skinning mode '" + mode + "'");

    KinematicTemplate& tpl = model.tpl;
    tpl.parents = h.at("template").at("parents").get<std::vector<int>>();
    tpl.joint_names = h.at("template").at("joint_names").get<std::vector<std::string>>();
    tpl.skinning_sigma = h.at("template").at("skinning_sigma").get<double>();
    const int sample_count = h.at("template").at("sample_count").get<int>();

    SkinningGrid& grid = model.grid;
    const auto res = h.at("grid").at("res").get<std::vector<int>>();
    const auto lo = h.at("grid").at("lo").get<std::vector<double>>();
    const auto hi = h.at("grid").at("hi").get<std::vector<double>>();
    if (res.size() != 3 || lo.size() != 3 || hi.size() != 3)
      throw std::runtime_error("grid metadata must be 3-vectors");
    grid.res = Eigen::Vector3i(res[0], res[1], res[2]);
    grid.lo = Vec3(lo[0], lo[1], lo[2]);
    grid.hi = Vec3(hi[0], hi[1], hi[2]);
    grid.n_b = h.at("grid").at("n_b").get<int>();
    grid.n_l = h.at("grid").at("n_l").get<int>();

    // Walk the payload in declared order; every section length is also
    // cross-checked against the shape the header implies.
    std::map<std::string, std::vector<double>> data;
    for (const json& decl : h.at("sections")) {
      const std::string name = decl.at("name").get<std::string>();
      const size_t n = decl.at("count").get<size_t>();
      data[name] = read_section(r, name, n);
    }
    auto section = [&](const char* name) -> const std::vector<double>& {
      auto it = data.find(name);
      if (it == data.end())
        throw std::runtime_error(std::string("missing section '") + name + "'");
      return it->second;
    };

    {
      const std::vector<double>& rest = section("tpl_rest_global");
      if (rest.size() != static_cast<size_t>(tpl.parents.size()) * 12)
        throw std::runtime_error("tpl_rest_global size mismatch");
      tpl.rest_global.resize(tpl.parents.size());
      size_t k = 0;
      for (RigidTransform& t : tpl.rest_global) {
        for (int rr = 0; rr < 3; ++rr)
          for (int cc = 0; cc < 3; ++cc) t.rotation(rr, cc) = rest[k++];
        for (int rr = 0; rr < 3; ++rr) t.translation[rr] = rest[k++];
      }
    }
    {
      const std::vector<double>& pos = section("tpl_sample_positions");
      if (pos.size() != static_cast<size_t>(sample_count) * 3)
        throw std::runtime_error("tpl_sample_positions size mismatch");
      tpl.sample_positions.resize(sample_count);
      for (int i = 0; i < sample_count; ++i)
        tpl.sample_positions[i] = Vec3(pos[i * 3], pos[i * 3 + 1], pos[i * 3 + 2]);
    }
    tpl.sample_weights = to_matrix(section("tpl_sample_weights"), sample_count, n_b,
                                   "tpl_sample_weights");

    GaussianMixture& g = model.gaussians;
    g.sh_degree = h.at("sh_degree").get<int>();
    g.means = to_matrix(section("means"), count, 3, "means");
    g.rotations = to_matrix(section("rotations"), count, 4, "rotations");
    g.log_scales = to_matrix(section("log_scales"), count, 3, "log_scales");
    const std::vector<double>& op = section("opacity_logits");
    if (op.size() != static_cast<size_t>(count))
      throw std::runtime_error("opacity_logits size mismatch");
    g.opacity_logits = Eigen::Map<const VecX>(op.data(), count);
    g.sh = to_matrix(section("sh"), count, 3 * basis, "sh");

    const std::vector<double>& gd = section("grid_delta");
    const std::vector<double>& gl = section("grid_latent");
    if (gd.size() != static_cast<size_t>(grid.node_count()) * grid.n_b ||
        gl.size() != static_cast<size_t>(grid.node_count()) * grid.n_l)
      throw std::runtime_error("grid payload size mismatch");
    grid.delta = Eigen::Map<const VecX>(gd.data(), static_cast<Eigen::Index>(gd.size()));
    grid.latent = Eigen::Map<const VecX>(gl.data(), static_cast<Eigen::Index>(gl.size()));

    model.latent.n_l = n_l;
    model.latent.params =
        to_matrix(section("latent_table"), latent_frames, n_l * 6, "latent_table");

    model.skinning_mode =
        mode == "grid" ? SkinningMode::kGrid : SkinningMode::kPerGaussian;
    const std::vector<double>& pd = section("pg_delta");
    const std::vector<double>& pl = section("pg_latent");
    if (!pd.empty()) model.pg_delta = to_matrix(pd, count, n_b, "pg_delta");
    if (!pl.empty()) model.pg_latent = to_matrix(pl, count, n_l, "pg_latent");
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed model header: ") + e.what());
  }
  return model;
}

ModelHeaderInfo read_model_header(const std::string& path) {
  Reader r;
  r.in.open(path, std::ios::binary);
  if (!r.in) throw std::runtime_error("cannot open model file: " + path);
  const json h = read_header(r);
  ModelHeaderInfo info;
  try {
    info.version = h.at("version").get<int>();
    info.count = h.at("count").get<int>();
    info.sh_degree = h.at("sh_degree").get<int>();
    info.n_b = h.at("n_b").get<int>();
    info.n_l = h.at("n_l").get<int>();
    info.latent_frames = h.at("latent_frames").get<int>();
    info.skinning_mode = h.at("skinning_mode").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed model header: ") + e.what());
  }
  return info;
}

}  // namespace asplat
