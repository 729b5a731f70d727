#pragma once

// Checkpoint layout (all integers little-endian):
//   "AREMB1"
//   u32 length, UTF-8 JSON config
//   u32 parameter count
//   per parameter: u32 name length, name, u32 rank, u32 dims[rank], f32 data[prod(dims)]

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "autoregembed/tinylm/model.hpp"

namespace are {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointShapeError : CheckpointError {
  using CheckpointError::CheckpointError;
};

inline constexpr char kCheckpointMagic[] = "AREMB1";

inline nlohmann::json config_to_json(const LmConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"dim", c.dim},         {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"max_seq", c.max_seq}, {"seed", c.seed},
          {"n_compressed", c.n_compressed}, {"init_std", c.init_std}};
}

inline LmConfig config_from_json(const nlohmann::json& j) {
  LmConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.dim = j.at("dim").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.max_seq = j.at("max_seq").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.n_compressed = j.value("n_compressed", 0);
  c.init_std = j.value("init_std", 0.02);
  return c;
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw CheckpointTruncatedError(std::string("truncated checkpoint: ") + what);
  return v;
}

inline std::string get_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw CheckpointTruncatedError(std::string("truncated checkpoint: ") + what);
  }
  return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const LmModel<T>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, 6);
  nlohmann::json cfg = config_to_json(model.config());
  cfg["frozen"] = model.frozen();
  const std::string text = cfg.dump();
  detail::put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& params = model.named_parameters();
  detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u32(os, 2);
    detail::put_u32(os, static_cast<std::uint32_t>(p.tensor.rows()));
    detail::put_u32(os, static_cast<std::uint32_t>(p.tensor.cols()));
    std::vector<float> buf(static_cast<std::size_t>(p.tensor.size()));
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p.tensor.value().data()[i]);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw CheckpointError("write failed for '" + path + "'");
}

template <typename T = float>
LmModel<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open '" + path + "'");
  char magic[6] = {};
  if (!is.read(magic, 6)) throw CheckpointTruncatedError("truncated checkpoint: magic");
  if (std::memcmp(magic, kCheckpointMagic, 6) != 0) {
    throw CheckpointVersionError("'" + path + "' is not an AREMB1 checkpoint (found '" + std::string(magic, 6) + "')");
  }
  const std::uint32_t cfg_len = detail::get_u32(is, "config length");
  const std::string text = detail::get_bytes(is, cfg_len, "config");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }
  LmConfig config = config_from_json(cfg);
  const bool frozen = cfg.value("frozen", false);

  LmModel<T> model(config);
  auto& params = model.named_parameters();
  const std::uint32_t count = detail::get_u32(is, "parameter count");
  if (count != params.size()) {
    throw CheckpointShapeError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                               std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = detail::get_bytes(is, detail::get_u32(is, "name length"), "name");
    if (name != p.name) throw CheckpointShapeError("expected tensor '" + p.name + "', found '" + name + "'");
    const std::uint32_t rank = detail::get_u32(is, "rank");
    if (rank != 2) throw CheckpointShapeError("tensor '" + name + "' has rank " + std::to_string(rank));
    const std::uint32_t rows = detail::get_u32(is, "dims");
    const std::uint32_t cols = detail::get_u32(is, "dims");
    if (rows != p.tensor.rows() || cols != p.tensor.cols()) {
      throw CheckpointShapeError("tensor '" + name + "' stored as " + shape_str(rows, cols) + " but config implies " +
                                 shape_str(p.tensor.rows(), p.tensor.cols()));
    }
    std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
      throw CheckpointTruncatedError("truncated checkpoint: data of '" + name + "'");
    }
    for (std::size_t i = 0; i < buf.size(); ++i) p.tensor.mutable_value().data()[i] = static_cast<T>(buf[i]);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointShapeError("trailing bytes after last tensor");
  if (frozen) model.freeze();
  return model;
}

}  // namespace are
