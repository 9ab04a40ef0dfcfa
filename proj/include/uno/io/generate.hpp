#pragma once

// Dataset generation: GRF -> solver -> downsample, parallel over samples.
// Sample i draws from derive_seed(seed, i), so output is independent of the
// thread count.

#include <atomic>
#include <mutex>
#include <functional>
#include <optional>
#include <thread>

#include "uno/io/config.hpp"
#include "uno/io/dataset.hpp"
#include "uno/pde/darcy.hpp"
#include "uno/pde/downsample.hpp"
#include "uno/pde/navier_stokes.hpp"

namespace uno::io {

inline std::size_t solver_grid(const DataSettings& d) { return d.solver_grid ? d.solver_grid : d.grid; }

/// (a, u) on the stored grid.
inline std::vector<Tensor> darcy_record(const DataSettings& d, std::size_t index) {
  const std::size_t sg = solver_grid(d);
  const Tensor a = pde::darcy_coefficient(pde::grf_sample(pde::GrfSpec::darcy(sg), derive_seed(d.seed, index)));
  const Tensor u = pde::darcy_solve(a, pde::darcy_unit_forcing(sg), d.cg_tol);
  if (sg == d.grid) return {a, u};
  return {pde::downsample(a, d.grid, pde::GridKind::Nodes), pde::downsample(u, d.grid, pde::GridKind::Nodes)};
}

/// Vorticity trajectory [horizon fps + 1, s, s] on the stored grid.
inline std::vector<Tensor> ns_record(const DataSettings& d, std::size_t index) {
  const std::size_t sg = solver_grid(d);
  const pde::NsSpec spec{.nu = d.nu, .horizon = d.horizon, .grid = sg, .dt = d.dt, .fps = d.fps};
  Tensor w = pde::ns_simulate(spec, derive_seed(d.seed, index)).w;
  if (sg == d.grid) return {std::move(w)};
  return {pde::downsample(w, d.grid, pde::GridKind::Periodic)};
}

inline DatasetMeta dataset_meta(const DataSettings& d) {
  DatasetMeta m;
  m.kind = d.kind;
  m.requested = d.n;
  m.seed = d.seed;
  m.solver_grid = solver_grid(d);
  m.grid = d.grid;
  if (d.kind == "ns") {
    m.nu = d.nu;
    m.dt = d.dt;
    m.t_in = d.t_in;
    m.horizon = d.horizon;
    m.fps = d.fps;
  } else {
    m.cg_tol = d.cg_tol;
  }
  return m;
}

using Warn = std::function<void(const std::string&)>;

/// Runs d.n samples on `threads` workers. Samples whose solver fails
/// numerically are skipped, listed in the metadata and reported via `warn`.
inline Dataset generate(DataSettings d, std::size_t threads = 0, const Warn& warn = {}) {
  if (d.kind != "darcy" && d.kind != "ns") throw ConfigError("data.kind must be darcy or ns");
  if (d.grid == 0) d.grid = default_grid(d.kind);
  if (d.grid < 4) throw ConfigError("data.grid must be >= 4");
  const std::size_t sg = solver_grid(d);
  if (d.kind == "darcy") {
    if (sg < 5) throw ConfigError("darcy solver grid must be >= 5");
    pde::downsample_stride(sg, d.grid, pde::GridKind::Nodes);
  } else {
    pde::downsample_stride(sg, d.grid, pde::GridKind::Periodic);
  }
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::max<std::size_t>(1, std::min(threads, d.n));

  std::vector<std::optional<std::vector<Tensor>>> slots(d.n);
  std::vector<std::string> failures(d.n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < d.n; i = next++) {
      try {
        slots[i] = d.kind == "darcy" ? darcy_record(d, i) : ns_record(d, i);
      } catch (const NumericalError& e) {
        failures[i] = e.what();
      } catch (...) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (fatal) std::rethrow_exception(fatal);

  Dataset ds;
  ds.meta = dataset_meta(d);
  for (std::size_t i = 0; i < d.n; ++i) {
    if (slots[i]) {
      ds.records.push_back(std::move(*slots[i]));
    } else {
      ds.meta.skipped.push_back(i);
      if (warn) warn("sample " + std::to_string(i) + " skipped: " + failures[i]);
    }
  }
  ds.meta.count = ds.records.size();
  return ds;
}

/// Settings that regenerate the dataset described by `m`.
inline DataSettings settings_from_meta(const DatasetMeta& m) {
  DataSettings d;
  d.kind = m.kind;
  d.n = m.requested;
  d.seed = m.seed;
  d.solver_grid = m.solver_grid;
  d.grid = m.grid;
  if (m.kind == "ns") {
    d.nu = m.nu;
    d.dt = m.dt;
    d.t_in = m.t_in;
    d.horizon = m.horizon;
    d.fps = m.fps;
  } else {
    d.cg_tol = m.cg_tol;
  }
  return d;
}

}  // namespace uno::io
