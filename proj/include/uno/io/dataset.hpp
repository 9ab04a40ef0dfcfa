#pragma once

// Dataset files: a binary "UNODS1" payload plus a JSON sidecar `<path>.meta.json`.
//
//   magic "UNODS1" | u32 version | u64 count | u32 tensors per record
//   descriptors, record-major: u32 rank | u64 extents[rank] | u64 payload offset
//   payloads: row-major little-endian f64, contiguous in descriptor order

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "uno/io/binary.hpp"
#include "uno/tensor.hpp"
#include "uno/version.hpp"

namespace uno::io {

inline constexpr std::string_view kDatasetMagic = "UNODS1";
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kMaxRank = 8;

/// Everything needed to regenerate the payload bit for bit.
struct DatasetMeta {
  std::string kind = "darcy";  // darcy | ns
  std::size_t requested = 0;   // samples asked for; skipped ones are listed
  std::size_t count = 0;       // records stored
  std::uint64_t seed = 0;
  std::size_t solver_grid = 0;  // grid the solver ran on
  std::size_t grid = 0;         // stored grid after downsampling
  double nu = 0;
  double dt = 0;
  double t_in = 0;
  std::size_t horizon = 0;  // T
  double fps = 1;
  double cg_tol = 0;
  std::vector<std::size_t> skipped;
  std::string code_version = kVersion;
};

inline void to_json(nlohmann::json& j, const DatasetMeta& m) {
  j = nlohmann::json{{"kind", m.kind},   {"requested", m.requested}, {"count", m.count},
                     {"seed", m.seed},   {"solver_grid", m.solver_grid}, {"grid", m.grid},
                     {"nu", m.nu},       {"dt", m.dt},               {"t_in", m.t_in},
                     {"horizon", m.horizon}, {"fps", m.fps},         {"cg_tol", m.cg_tol},
                     {"skipped", m.skipped}, {"code_version", m.code_version}};
}

inline void from_json(const nlohmann::json& j, DatasetMeta& m) {
  j.at("kind").get_to(m.kind);
  j.at("requested").get_to(m.requested);
  j.at("count").get_to(m.count);
  j.at("seed").get_to(m.seed);
  j.at("solver_grid").get_to(m.solver_grid);
  j.at("grid").get_to(m.grid);
  j.at("nu").get_to(m.nu);
  j.at("dt").get_to(m.dt);
  j.at("t_in").get_to(m.t_in);
  j.at("horizon").get_to(m.horizon);
  j.at("fps").get_to(m.fps);
  j.at("cg_tol").get_to(m.cg_tol);
  j.at("skipped").get_to(m.skipped);
  j.at("code_version").get_to(m.code_version);
}

/// Darcy records hold (a, u) as two [s, s] tensors; ns records hold one [frames, s, s] trajectory.
struct Dataset {
  DatasetMeta meta;
  std::vector<std::vector<Tensor>> records;
};

inline std::filesystem::path meta_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta.json");
}

inline void validate_meta(const DatasetMeta& m) {
  if (m.kind != "darcy" && m.kind != "ns") throw DataError("dataset kind must be darcy or ns, got '" + m.kind + "'");
}

/// Serialized payload; the sidecar is written by dataset_write.
inline std::vector<char> encode_dataset(const Dataset& ds) {
  const std::size_t count = ds.records.size();
  const std::size_t per = count ? ds.records.front().size() : 0;
  for (const auto& r : ds.records) {
    if (r.size() != per) throw DataError("dataset records hold different tensor counts");
    for (std::size_t k = 0; k < per; ++k)
      if (r[k].shape() != ds.records.front()[k].shape()) throw DataError("dataset records have inconsistent shapes");
  }
  std::size_t offset = kDatasetMagic.size() + 4 + 8 + 4;
  for (const auto& r : ds.records)
    for (const auto& t : r) offset += 4 + 8 * t.rank() + 8;

  ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(count);
  w.u32(std::uint32_t(per));
  for (const auto& r : ds.records)
    for (const auto& t : r) {
      if (t.rank() < 1 || t.rank() > kMaxRank) throw DataError("dataset tensor rank out of range");
      w.u32(std::uint32_t(t.rank()));
      for (auto e : t.shape()) w.u64(e);
      w.u64(offset);
      offset += 8 * t.numel();
    }
  for (const auto& r : ds.records)
    for (const auto& t : r)
      for (double v : t.data()) w.f64(v);
  return w.buffer();
}

/// Parses a payload; every descriptor is validated before any record is built.
inline std::vector<std::vector<Tensor>> decode_dataset(const std::vector<char>& bytes) {
  ByteReader r(bytes, "dataset");
  if (bytes.size() < kDatasetMagic.size() || r.bytes(kDatasetMagic.size()) != kDatasetMagic)
    throw DataError("dataset: corrupt header (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw DataError("dataset: version mismatch (file " + std::to_string(version) + ", reader " +
                    std::to_string(kDatasetVersion) + ")");
  const std::uint64_t count = r.u64();
  const std::uint32_t per = r.u32();
  if (count > 0 && per == 0) throw DataError("dataset: corrupt header (records without tensors)");
  // Each descriptor takes at least 20 bytes; reject counts the file cannot hold.
  if (per > 0 && count > r.remaining() / (20ull * per)) throw DataError("dataset: truncated descriptor table");

  struct Desc {
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Desc> desc(count * per);
  for (auto& d : desc) {
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > kMaxRank) throw DataError("dataset: corrupt descriptor (rank " + std::to_string(rank) + ")");
    d.shape.resize(rank);
    for (auto& e : d.shape) {
      e = r.u64();
      if (e == 0 || e > (1ull << 32)) throw DataError("dataset: corrupt descriptor (extent)");
    }
    d.offset = r.u64();
  }
  std::uint64_t expected = r.pos();
  for (std::size_t i = 0; i < desc.size(); ++i) {
    if (desc[i].offset != expected) throw DataError("dataset: corrupt descriptor (payload offset)");
    expected += 8 * numel(desc[i].shape);
  }
  if (expected > bytes.size())
    throw DataError("dataset: truncated payload (" + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(expected) + ")");
  if (expected < bytes.size()) throw DataError("dataset: trailing bytes after payload");

  std::vector<std::vector<Tensor>> records(count);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t k = 0; k < per; ++k) {
      const Desc& d = desc[i * per + k];
      r.seek(d.offset);
      Tensor t(d.shape);
      for (auto& v : t.vec()) v = r.f64();
      records[i].push_back(std::move(t));
    }
  return records;
}

inline void dataset_write(const Dataset& ds, const std::filesystem::path& path) {
  validate_meta(ds.meta);
  DatasetMeta meta = ds.meta;
  meta.count = ds.records.size();
  write_file(path, encode_dataset(ds));
  const std::string text = nlohmann::json(meta).dump(2) + "\n";
  write_file(meta_path(path), std::vector<char>(text.begin(), text.end()));
}

inline Dataset dataset_read(const std::filesystem::path& path) {
  Dataset ds;
  ds.records = decode_dataset(read_file(path));
  const std::vector<char> text = read_file(meta_path(path));
  try {
    ds.meta = nlohmann::json::parse(text.begin(), text.end()).get<DatasetMeta>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset metadata " + meta_path(path).string() + ": " + e.what());
  }
  validate_meta(ds.meta);
  if (ds.meta.count != ds.records.size())
    throw DataError("dataset metadata count " + std::to_string(ds.meta.count) + " disagrees with payload count " +
                    std::to_string(ds.records.size()));
  return ds;
}

}  // namespace uno::io
