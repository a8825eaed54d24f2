// Binary checkpoints: model parameters, batch-norm buffers, the optimizer
// state and a config snapshot, keyed on the model's structural signature.
// Writes go to a temp file first and are renamed into place.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "paranoise/config.hpp"
#include "paranoise/nn.hpp"

namespace paranoise {

namespace ckpt {

constexpr char kMagic[4] = {'P', 'N', 'S', 'V'};
constexpr uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_i64(std::ostream& os, int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_string(std::ostream& os, const std::string& s) {
  write_i64(os, static_cast<int64_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void write_floats(std::ostream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
}
inline void write_tensor(std::ostream& os, const Tensor& t) {
  write_u32(os, static_cast<uint32_t>(t.ndim()));
  for (int d : t.shape) write_u32(os, static_cast<uint32_t>(d));
  write_floats(os, t.data);
}

inline uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
inline int64_t read_i64(std::istream& is) {
  int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
inline std::string read_string(std::istream& is) {
  int64_t n = read_i64(is);
  if (n < 0 || n > (1 << 26)) throw std::runtime_error("checkpoint: corrupt string length");
  std::string s(static_cast<size_t>(n), '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}
inline void read_floats(std::istream& is, std::vector<float>& v) {
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
}
inline void read_tensor_into(std::istream& is, Tensor& t, const std::string& name) {
  uint32_t nd = read_u32(is);
  std::vector<int> shape(nd);
  for (auto& d : shape) d = static_cast<int>(read_u32(is));
  if (shape != t.shape)
    throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                             shape_str(shape) + " vs model " + shape_str(t.shape));
  read_floats(is, t.data);
}

}  // namespace ckpt

struct CheckpointMeta {
  uint32_t version = ckpt::kVersion;
  std::string signature;    // ParaNoiseModel::structural_signature()
  std::string config_text;  // serialize_run_config snapshot
  int64_t epoch = 0;
  bool has_optimizer = false;
};

// Reads only the header; cheap way to inspect variant/config before building
// the model.
inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, ckpt::kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  CheckpointMeta meta;
  meta.version = ckpt::read_u32(f);
  if (meta.version != ckpt::kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(meta.version));
  meta.signature = ckpt::read_string(f);
  meta.config_text = ckpt::read_string(f);
  meta.epoch = ckpt::read_i64(f);
  meta.has_optimizer = ckpt::read_u32(f) != 0;
  return meta;
}

inline void save_checkpoint(const std::string& path, ParaNoiseModel& model,
                            const RunConfig& run_cfg, int64_t epoch,
                            Adam* opt = nullptr) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";

  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + tmp.string());
    f.write(ckpt::kMagic, 4);
    ckpt::write_u32(f, ckpt::kVersion);
    ckpt::write_string(f, model.structural_signature());
    ckpt::write_string(f, serialize_run_config(run_cfg));
    ckpt::write_i64(f, epoch);
    ckpt::write_u32(f, opt ? 1u : 0u);

    ParamRegistry& reg = model.registry();
    ckpt::write_u32(f, static_cast<uint32_t>(reg.params.size()));
    for (auto& [name, p] : reg.params) {
      ckpt::write_string(f, name);
      ckpt::write_tensor(f, p->value);
    }
    ckpt::write_u32(f, static_cast<uint32_t>(reg.buffers.size()));
    for (auto& [name, t] : reg.buffers) {
      ckpt::write_string(f, name);
      ckpt::write_tensor(f, *t);
    }
    if (opt) {
      ckpt::write_i64(f, opt->step_count());
      for (const Tensor& m : opt->moment1()) ckpt::write_floats(f, m.data);
      for (const Tensor& v : opt->moment2()) ckpt::write_floats(f, v.data);
    }
    if (!f) throw std::runtime_error("checkpoint write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

// Loads parameters (and optimizer state, if requested and present) into an
// already-constructed model. The structural signature must match exactly.
inline CheckpointMeta load_checkpoint(const std::string& path, ParaNoiseModel& model,
                                      Adam* opt = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, ckpt::kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  CheckpointMeta meta;
  meta.version = ckpt::read_u32(f);
  if (meta.version != ckpt::kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(meta.version));
  meta.signature = ckpt::read_string(f);
  if (meta.signature != model.structural_signature())
    throw std::runtime_error(
        "checkpoint: incompatible model (variant or topology mismatch): " + path);
  meta.config_text = ckpt::read_string(f);
  meta.epoch = ckpt::read_i64(f);
  meta.has_optimizer = ckpt::read_u32(f) != 0;

  ParamRegistry& reg = model.registry();
  uint32_t n_params = ckpt::read_u32(f);
  if (n_params != reg.params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (auto& [name, p] : reg.params) {
    std::string fname = ckpt::read_string(f);
    if (fname != name)
      throw std::runtime_error("checkpoint: parameter order mismatch at " + name);
    ckpt::read_tensor_into(f, p->value, name);
  }
  uint32_t n_buffers = ckpt::read_u32(f);
  if (n_buffers != reg.buffers.size())
    throw std::runtime_error("checkpoint: buffer count mismatch");
  for (auto& [name, t] : reg.buffers) {
    std::string fname = ckpt::read_string(f);
    if (fname != name)
      throw std::runtime_error("checkpoint: buffer order mismatch at " + name);
    ckpt::read_tensor_into(f, *t, name);
  }
  if (opt) {
    if (!meta.has_optimizer)
      throw std::runtime_error("checkpoint: no optimizer state in " + path);
    opt->set_step_count(ckpt::read_i64(f));
    for (Tensor& m : opt->moment1()) ckpt::read_floats(f, m.data);
    for (Tensor& v : opt->moment2()) ckpt::read_floats(f, v.data);
  }
  return meta;
}

}  // namespace paranoise
