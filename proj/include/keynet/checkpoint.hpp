#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "keynet/model.hpp"

namespace keynet {

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& out, double v) {
  write_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
         std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& in) {
  return std::bit_cast<double>(read_u64(in));
}

inline void write_record(std::ostream& out, const std::string& rec) {
  write_u32(out, static_cast<std::uint32_t>(rec.size()));
  out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
}

inline std::string read_record(std::istream& in) {
  const std::uint32_t len = read_u32(in);
  std::string rec(len, '\0');
  in.read(rec.data(), len);
  if (!in) throw std::runtime_error("checkpoint: truncated record");
  return rec;
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

constexpr char kCheckpointMagic[] = "KEYNET1";

// Versioned binary checkpoint: magic, length-prefixed key=value config
// records, then each parameter as (name, shape, little-endian f64 values).
inline void save_checkpoint(const KeyNetModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, 7);

  const ModelConfig& c = model.cfg;
  std::vector<std::string> records = {
      "grid_w=" + std::to_string(c.scene.grid_w),
      "grid_h=" + std::to_string(c.scene.grid_h),
      "frames=" + std::to_string(c.scene.frames),
      "actors=" + std::to_string(c.scene.actors),
      "objects=" + std::to_string(c.scene.objects),
      "joints=" + std::to_string(c.scene.joints),
      "contour_points=" + std::to_string(c.scene.contour_points),
      "d_model=" + std::to_string(c.d_model),
      "heads=" + std::to_string(c.heads),
      "layers=" + std::to_string(c.layers),
      "intermediate=" + std::to_string(c.intermediate),
      "dropout=" + detail::fmt_double(c.dropout),
      "classes=" + std::to_string(c.classes),
      "head=" + to_string(c.head),
      "kind=" + to_string(c.kind),
  };
  detail::write_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const std::string& r : records) detail::write_record(out, r);

  detail::write_u64(out, model.parameters().size());
  const auto& names = model.parameter_names();
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const Tensor& p = model.parameters()[i];
    detail::write_record(out, names[i]);
    detail::write_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
    for (double v : *p.data) detail::write_f64(out, v);
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed: " + path);
}

inline KeyNetModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8] = {};
  in.read(magic, 7);
  if (!in || std::string(magic, 7) != kCheckpointMagic) {
    throw std::runtime_error("load_checkpoint: " + path +
                             " is not a KEYNET1 checkpoint");
  }
  std::map<std::string, std::string> kv;
  const std::uint32_t nrec = detail::read_u32(in);
  for (std::uint32_t i = 0; i < nrec; ++i) {
    const std::string rec = detail::read_record(in);
    const auto eq = rec.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("load_checkpoint: malformed record '" + rec +
                               "'");
    }
    kv[rec.substr(0, eq)] = rec.substr(eq + 1);
  }
  auto geti = [&kv, &path](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      throw std::runtime_error("load_checkpoint: " + path + " missing '" +
                               key + "'");
    }
    return std::stoi(it->second);
  };
  ModelConfig cfg;
  cfg.scene.grid_w = geti("grid_w");
  cfg.scene.grid_h = geti("grid_h");
  cfg.scene.frames = geti("frames");
  cfg.scene.actors = geti("actors");
  cfg.scene.objects = geti("objects");
  cfg.scene.joints = geti("joints");
  cfg.scene.contour_points = geti("contour_points");
  cfg.d_model = geti("d_model");
  cfg.heads = geti("heads");
  cfg.layers = geti("layers");
  cfg.intermediate = geti("intermediate");
  cfg.dropout = std::stod(kv.at("dropout"));
  cfg.classes = geti("classes");
  cfg.head = head_mode_from_string(kv.at("head"));
  cfg.kind = model_kind_from_string(kv.at("kind"));

  KeyNetModel model = KeyNetModel::build(cfg, 0);
  std::map<std::string, Tensor*> by_name;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    by_name[model.parameter_names()[i]] = &model.parameters()[i];
  }
  const std::uint64_t nparams = detail::read_u64(in);
  if (nparams != model.parameters().size()) {
    throw std::runtime_error("load_checkpoint: " + path + " has " +
                             std::to_string(nparams) + " parameters, config " +
                             "implies " +
                             std::to_string(model.parameters().size()));
  }
  for (std::uint64_t i = 0; i < nparams; ++i) {
    const std::string name = detail::read_record(in);
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("load_checkpoint: unexpected parameter '" +
                               name + "'");
    }
    const std::uint32_t ndims = detail::read_u32(in);
    Shape shape(ndims);
    for (std::uint32_t dim = 0; dim < ndims; ++dim) {
      shape[dim] = static_cast<int>(detail::read_u32(in));
    }
    Tensor& t = *it->second;
    if (shape != t.shape) {
      throw std::runtime_error("load_checkpoint: parameter '" + name +
                               "' has shape " + shape_str(shape) +
                               ", expected " + shape_str(t.shape));
    }
    for (double& v : *t.data) v = detail::read_f64(in);
  }
  return model;
}

}  // namespace keynet
