#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "transrev/baselines.hpp"
#include "transrev/model.hpp"

// Model files: 8-byte magic "TRANSREV", u32 version, u32 kind, then a
// kind-specific header (u64 dimensions, vocabulary hash) and every tensor as
// row-major little-endian doubles. Round-trips are bit-exact.

namespace transrev {

inline constexpr char kModelMagic[8] = {'T', 'R', 'A', 'N', 'S', 'R', 'E', 'V'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

enum class ModelKind : std::uint32_t { transrev = 0, svd = 1, offset = 2 };

struct ModelFile {
  std::variant<ModelParameters, SvdModel, OffsetModel> model;
  std::uint64_t vocab_hash = 0;  // nonzero only for the full model
};

inline double predict(const ModelFile& file, std::uint32_t user,
                      std::uint32_t item) {
  return std::visit(
      [&](const auto& m) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>,
                                     ModelParameters>)
          return predict_rating(m, user, item);
        else
          return predict(m, user, item);
      },
      file.model);
}

namespace detail {

inline void put_bytes(std::ofstream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}
inline void put_u32(std::ofstream& out, std::uint32_t v) {
  put_bytes(out, &v, sizeof v);
}
inline void put_u64(std::ofstream& out, std::uint64_t v) {
  put_bytes(out, &v, sizeof v);
}
inline void put_doubles(std::ofstream& out, std::span<const double> v) {
  put_bytes(out, v.data(), v.size() * sizeof(double));
}

inline void get_bytes(std::ifstream& in, void* data, std::size_t n,
                      const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw std::runtime_error(std::string("model file truncated reading ") +
                             what);
}
inline std::uint32_t get_u32(std::ifstream& in, const char* what) {
  std::uint32_t v;
  get_bytes(in, &v, sizeof v, what);
  return v;
}
inline std::uint64_t get_u64(std::ifstream& in, const char* what) {
  std::uint64_t v;
  get_bytes(in, &v, sizeof v, what);
  return v;
}
inline void get_doubles(std::ifstream& in, std::span<double> v,
                        const char* what) {
  get_bytes(in, v.data(), v.size() * sizeof(double), what);
}

inline std::ofstream open_model_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

inline std::size_t checked_dim(std::uint64_t v, const char* what) {
  // 1e9 doubles is already an 8GB tensor; anything above is corruption.
  if (v < 1 || v > 1'000'000'000ULL)
    throw std::runtime_error(std::string("implausible ") + what +
                             " in model file");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline void save_model(const ModelParameters& params, std::uint64_t vocab_hash,
                       const std::filesystem::path& path) {
  auto out = detail::open_model_output(path);
  detail::put_bytes(out, kModelMagic, sizeof kModelMagic);
  detail::put_u32(out, kModelFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ModelKind::transrev));
  detail::put_u64(out, params.n_users);
  detail::put_u64(out, params.n_items);
  detail::put_u64(out, params.vocab_size);
  detail::put_u64(out, params.k);
  detail::put_u64(out, vocab_hash);
  params.for_each_tensor(
      [&](std::span<const double> t) { detail::put_doubles(out, t); });
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void save_model(const SvdModel& model,
                       const std::filesystem::path& path) {
  auto out = detail::open_model_output(path);
  detail::put_bytes(out, kModelMagic, sizeof kModelMagic);
  detail::put_u32(out, kModelFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ModelKind::svd));
  detail::put_u64(out, model.n_users);
  detail::put_u64(out, model.n_items);
  detail::put_u64(out, model.k);
  model.for_each_tensor(
      [&](std::span<const double> t) { detail::put_doubles(out, t); });
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void save_model(const OffsetModel& model,
                       const std::filesystem::path& path) {
  auto out = detail::open_model_output(path);
  detail::put_bytes(out, kModelMagic, sizeof kModelMagic);
  detail::put_u32(out, kModelFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ModelKind::offset));
  detail::put_doubles(out, std::span<const double>(&model.global_mean, 1));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof kModelMagic];
  detail::get_bytes(in, magic, sizeof magic, "magic");
  if (std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw std::runtime_error(path.string() + " is not a model file");
  const std::uint32_t version = detail::get_u32(in, "version");
  if (version != kModelFormatVersion)
    throw std::runtime_error("unsupported model format version " +
                             std::to_string(version));
  const std::uint32_t kind_raw = detail::get_u32(in, "kind");

  ModelFile file;
  switch (static_cast<ModelKind>(kind_raw)) {
    case ModelKind::transrev: {
      const std::size_t U = detail::checked_dim(detail::get_u64(in, "U"), "U");
      const std::size_t I = detail::checked_dim(detail::get_u64(in, "I"), "I");
      const std::size_t V = detail::checked_dim(detail::get_u64(in, "V"), "V");
      const std::size_t k = detail::checked_dim(detail::get_u64(in, "k"), "k");
      file.vocab_hash = detail::get_u64(in, "vocab hash");
      ModelParameters params(U, I, V, k);
      params.for_each_tensor([&](std::span<double> t) {
        detail::get_doubles(in, t, "tensor data");
      });
      file.model = std::move(params);
      break;
    }
    case ModelKind::svd: {
      const std::size_t U = detail::checked_dim(detail::get_u64(in, "U"), "U");
      const std::size_t I = detail::checked_dim(detail::get_u64(in, "I"), "I");
      const std::size_t k = detail::checked_dim(detail::get_u64(in, "k"), "k");
      SvdModel model(U, I, k);
      model.for_each_tensor([&](std::span<double> t) {
        detail::get_doubles(in, t, "tensor data");
      });
      file.model = std::move(model);
      break;
    }
    case ModelKind::offset: {
      OffsetModel model;
      detail::get_doubles(in, std::span<double>(&model.global_mean, 1),
                          "global mean");
      file.model = model;
      break;
    }
    default:
      throw std::runtime_error("unknown model kind " +
                               std::to_string(kind_raw));
  }
  // Reject trailing garbage: the formats above account for every byte.
  if (in.peek() != std::ifstream::traits_type::eof())
    throw std::runtime_error("trailing bytes in " + path.string());
  return file;
}

}  // namespace transrev
