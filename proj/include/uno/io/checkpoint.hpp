#pragma once

// Checkpoint files:
//   magic "UNOCKPT1" | u32 version | u64 header length | header JSON
//   u64 tensor count | per tensor: u32 complex | u32 rank | u64 extents[rank] | f64 values (re, im for complex)
//   u64 FNV-1a 64 of every preceding byte
// Tensors follow the parameter registry order of for_each_parameter.

#include <filesystem>

#include "json.hpp"
#include "uno/architecture.hpp"
#include "uno/io/binary.hpp"
#include "uno/io/config.hpp"

namespace uno::io {

inline constexpr std::string_view kCheckpointMagic = "UNOCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  nlohmann::json run;  // RunConfig the model was trained with; null when absent
};

inline std::vector<char> encode_checkpoint(const Model& m, const nlohmann::json& run = nullptr) {
  const nlohmann::json header = {{"model", to_json(m.config)}, {"normalizer", to_json(m.norm)}, {"run", run}};
  const std::string text = header.dump();
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(text.size());
  w.bytes(text);
  std::size_t count = 0;
  for_each_parameter(m, [&](const auto&) { ++count; });
  w.u64(count);
  for_each_parameter(m, [&](const auto& p) {
    using T = std::decay_t<decltype(p)>;
    constexpr bool is_complex = std::is_same_v<T, ComplexTensor>;
    w.u32(is_complex ? 1 : 0);
    w.u32(std::uint32_t(p.rank()));
    for (auto e : p.shape()) w.u64(e);
    for (const auto& v : p.data()) {
      if constexpr (is_complex) {
        w.f64(v.real());
        w.f64(v.imag());
      } else {
        w.f64(v);
      }
    }
  });
  std::vector<char> bytes = w.buffer();
  ByteWriter tail;
  tail.u64(fnv1a64(bytes.data(), bytes.size()));
  bytes.insert(bytes.end(), tail.buffer().begin(), tail.buffer().end());
  return bytes;
}

inline Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 4 + 8 + 8 + 8) throw DataError("checkpoint: truncated file");
  if (std::string_view(bytes.data(), kCheckpointMagic.size()) != kCheckpointMagic)
    throw DataError("checkpoint: corrupt header (bad magic)");
  {
    const std::vector<char> tail(bytes.end() - 8, bytes.end());
    ByteReader t(tail, "checkpoint checksum");
    if (t.u64() != fnv1a64(bytes.data(), bytes.size() - 8)) throw DataError("checkpoint: checksum mismatch");
  }
  ByteReader r(bytes, "checkpoint");
  r.bytes(kCheckpointMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: version mismatch (file " + std::to_string(version) + ", reader " +
                    std::to_string(kCheckpointVersion) + ")");
  const std::uint64_t len = r.u64();
  if (len > r.remaining()) throw DataError("checkpoint: truncated header");
  const std::string text = r.bytes(len);
  Checkpoint ck;
  try {
    const nlohmann::json header = nlohmann::json::parse(text);
    ck.model = build_model(model_config_from_json(header.at("model")));
    ck.model.norm = normalizer_from_json(header.at("normalizer"));
    ck.run = header.at("run");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: bad model configuration: ") + e.what());
  }
  const std::uint64_t count = r.u64();
  std::size_t expected = 0;
  for_each_parameter(ck.model, [&](const auto&) { ++expected; });
  if (count != expected)
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, model needs " + std::to_string(expected));
  for_each_parameter(ck.model, [&](auto& p) {
    using T = std::decay_t<decltype(p)>;
    constexpr bool is_complex = std::is_same_v<T, ComplexTensor>;
    if (r.u32() != (is_complex ? 1u : 0u)) throw DataError("checkpoint: tensor type mismatch");
    const std::uint32_t rank = r.u32();
    if (rank != p.rank()) throw DataError("checkpoint: tensor rank mismatch");
    for (auto e : p.shape())
      if (r.u64() != e) throw DataError("checkpoint: tensor shape mismatch");
    for (auto& v : p.vec()) {
      if constexpr (is_complex) {
        const double re = r.f64();
        v = cdouble(re, r.f64());
      } else {
        v = r.f64();
      }
    }
  });
  if (r.remaining() != 8) throw DataError("checkpoint: unexpected trailing bytes");
  return ck;
}

inline void checkpoint_save(const Model& m, const std::filesystem::path& path, const nlohmann::json& run = nullptr) {
  write_file(path, encode_checkpoint(m, run));
}

inline Checkpoint checkpoint_load(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace uno::io
