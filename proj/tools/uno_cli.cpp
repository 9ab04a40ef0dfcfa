// uno: data generation, training, evaluation and reports for U-shaped neural operators.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 data or shape error, 3 numerical failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "uno/io/checkpoint.hpp"
#include "uno/io/config.hpp"
#include "uno/io/dataset.hpp"
#include "uno/io/generate.hpp"
#include "uno/io/report.hpp"
#include "uno/training.hpp"
#include "uno/version.hpp"

using namespace uno;
using train::ProblemKind;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;  // key=value
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "override a config key, e.g. --set train.epochs=5 (repeatable)");
  cmd->add_flag("-q,--quiet", c.quiet, "suppress notices on stderr");
}

/// Resolves the configuration; dedicated flags win over --set, which wins over
/// the environment and the file.
io::RunConfig resolve(const Common& c, std::map<std::string, std::string> flags) {
  std::map<std::string, std::string> all;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw io::ConfigError("--set expects key=value, got '" + s + "'");
    all[s.substr(0, eq)] = s.substr(eq + 1);
  }
  for (auto& [k, v] : flags) all[k] = v;
  const json file = c.config.empty() ? json(nullptr) : io::load_json(c.config);
  io::RunConfig rc = io::resolve_config(file, all);
  if (!c.quiet && !rc.defaulted.empty()) {
    std::cerr << "notice: " << rc.defaulted.size() << " config keys use defaults:";
    for (const auto& k : rc.defaulted) std::cerr << ' ' << k;
    std::cerr << '\n';
  }
  return rc;
}

void emit(const io::Table& t, const std::string& csv_path, bool csv_stdout) {
  if (csv_stdout)
    io::write_csv(std::cout, t);
  else
    io::write_aligned(std::cout, t);
  if (!csv_path.empty()) {
    std::ofstream f(csv_path);
    if (!f) throw io::DataError("cannot write " + csv_path);
    io::write_csv(f, t);
  }
}

std::size_t training_grid(const io::RunConfig& rc) { return rc.train.resolution ? rc.train.resolution : rc.data.grid; }

/// Problem a model was trained for: recorded in the checkpoint, else inferred.
ProblemKind problem_of(const Model& m, const json& run) {
  if (run.is_object() && run.contains("config")) return train::parse_problem(run["config"]["train"]["kind"]);
  if (m.config.temporal) return ProblemKind::NsSpaceTime;
  return m.config.embedding == EmbeddingKind::Torus2d ? ProblemKind::NsAutoregressive : ProblemKind::Darcy;
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
  Common common;
  std::optional<std::string> kind, out;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
};

int cmd_gen(const GenArgs& a) {
  std::map<std::string, std::string> flags;
  if (a.kind) flags["data.kind"] = json(*a.kind).dump();
  if (a.n) flags["data.n"] = std::to_string(*a.n);
  if (a.seed) flags["data.seed"] = std::to_string(*a.seed);
  if (a.out) flags["paths.data"] = json(*a.out).dump();
  const io::RunConfig rc = resolve(a.common, flags);
  if (rc.paths.data.empty()) throw io::ConfigError("no output path: pass --out or set paths.data");
  const auto t0 = std::chrono::steady_clock::now();
  const io::Dataset ds = io::generate(rc.data, a.threads, [](const std::string& w) { std::cerr << "warning: " << w << '\n'; });
  io::dataset_write(ds, rc.paths.data);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "wrote " << ds.records.size() << " " << rc.data.kind << " records (" << ds.meta.skipped.size()
            << " skipped) to " << rc.paths.data << " in " << io::fixed(secs, 2) << " s\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  Common common;
  std::optional<std::string> data, out, metrics;
  std::string resume;
};

int cmd_train(const TrainArgs& a) {
  std::map<std::string, std::string> flags;
  if (a.data) flags["paths.data"] = json(*a.data).dump();
  if (a.out) flags["paths.checkpoint"] = json(*a.out).dump();
  if (a.metrics) flags["paths.metrics"] = json(*a.metrics).dump();
  const io::RunConfig rc = resolve(a.common, flags);
  if (rc.paths.data.empty()) throw io::ConfigError("no dataset: pass --data or set paths.data");
  if (rc.paths.checkpoint.empty()) throw io::ConfigError("no checkpoint path: pass --out or set paths.checkpoint");
  const auto& t = rc.train;

  const io::Dataset ds = io::dataset_read(rc.paths.data);
  if (ds.records.empty()) throw io::DataError("dataset " + rc.paths.data + " has no records");
  const auto samples = train::prepare_samples(ds, t.kind, t.resolution, t.t_in, t.t_end, t.fps);
  const std::size_t s = samples.front().input.extent(1);

  Model model;
  if (!a.resume.empty()) {
    model = io::checkpoint_load(a.resume).model;
    const ModelConfig want = io::model_config_for(rc, s);
    if (io::to_json(model.config) != io::to_json(want))
      throw io::DataError("checkpoint " + a.resume + " was built for a different model configuration");
  } else {
    model = build_model(io::model_config_for(rc, s));
  }
  try {
    train::check_compatible(model, t.kind, samples.front());
  } catch (const ShapeError& e) {
    throw io::DataError(std::string("dataset does not fit the model: ") + e.what());
  }

  const auto split = train::make_split(samples.size(), t);
  if (!a.common.quiet)
    std::cerr << "training " << variant_name(model.config.variant) << " (" << param_count(model).total
              << " parameters) on " << split.train.size() << "/" << split.val.size() << "/" << split.test.size()
              << " samples at " << s << "x" << s << '\n';
  const auto result = train::train(model, samples, t, [&](const train::EpochMetrics& e) {
    if (a.common.quiet) return;
    std::cerr << "epoch " << e.epoch << "  lr " << e.lr << "  loss " << io::fixed(e.train_loss, 5) << "  val "
              << io::fixed(e.val_rel_err, 3) << "%  " << io::fixed(e.seconds, 2) << " s\n";
  });
  const auto& m = result.metrics;
  const json run = {{"config", io::to_json(rc)},
                    {"data", ds.meta},
                    {"result",
                     {{"best_epoch", m.best_epoch},
                      {"best_val_rel_err", std::isnan(m.best_val_rel_err) ? json(nullptr) : json(m.best_val_rel_err)},
                      {"test_rel_err", std::isnan(m.test_rel_err) ? json(nullptr) : json(m.test_rel_err)}}}};
  io::checkpoint_save(result.model, rc.paths.checkpoint, run);
  const std::string metrics_path = rc.paths.metrics.empty() ? rc.paths.checkpoint + ".metrics.csv" : rc.paths.metrics;
  {
    std::ofstream f(metrics_path);
    if (!f) throw io::DataError("cannot write " + metrics_path);
    train::write_metrics_csv(f, m);
  }
  std::cout << "best epoch " << m.best_epoch << "  val " << io::fixed(m.best_val_rel_err, 3) << "%  test "
            << io::fixed(m.test_rel_err, 3) << "%\n"
            << "checkpoint " << rc.paths.checkpoint << "\nmetrics " << metrics_path << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::vector<std::string> ckpts;
  std::string data, split = "test", csv;
  std::string resolutions, fps;
  bool csv_stdout = false;
};

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw io::ConfigError("bad number '" + item + "' in '" + text + "'");
    }
  }
  if (out.empty()) throw io::ConfigError("empty list '" + text + "'");
  return out;
}

/// One row per checkpoint (labelled by its training grid), one column per
/// evaluation grid and fps. Grids coarser than the training grid are left
/// blank, which gives the lower-triangular layout of a super-resolution study.
int cmd_eval(const EvalArgs& a) {
  const io::Dataset ds = io::dataset_read(a.data);
  if (ds.records.empty()) throw io::DataError("dataset " + a.data + " has no records");
  struct Loaded {
    std::string path;
    io::Checkpoint ck;
    train::TrainConfig t;
    std::size_t grid;
  };
  std::vector<Loaded> models;
  for (const auto& p : a.ckpts) {
    Loaded l{p, io::checkpoint_load(p), {}, 0};
    if (l.ck.run.is_object() && l.ck.run.contains("config"))
      l.t = io::resolve_config(l.ck.run["config"], {}, [](const char*) -> const char* { return nullptr; }).train;
    l.t.kind = problem_of(l.ck.model, l.ck.run);
    l.grid = l.ck.model.config.extents.front();
    models.push_back(std::move(l));
  }
  std::vector<std::size_t> res;
  if (!a.resolutions.empty()) res = io::parse_size_list(a.resolutions);
  std::vector<double> fps_list;
  if (!a.fps.empty()) fps_list = parse_double_list(a.fps);

  io::Table table, csv;
  table.header = {"train grid"};
  csv.header = {"checkpoint", "train_grid", "eval_grid", "fps", "samples", "rel_err_percent"};
  const std::vector<std::size_t> columns_res = res.empty() ? std::vector<std::size_t>{0} : res;
  const std::vector<double> columns_fps = fps_list.empty() ? std::vector<double>{0} : fps_list;
  for (auto r : columns_res)
    for (auto f : columns_fps) {
      std::string h = r ? "s=" + std::to_string(r) : "s=train";
      if (f) h += " fps=" + io::fixed(f, f == std::round(f) ? 0 : 2);
      table.header.push_back(h);
    }
  for (const auto& l : models) {
    if (!fps_list.empty() && l.t.kind != ProblemKind::NsSpaceTime)
      throw io::ConfigError("--fps applies to space-time (ns-3d) models only; " + l.path + " is " +
                            train::problem_name(l.t.kind));
    std::vector<std::string> row{std::to_string(l.grid) + "x" + std::to_string(l.grid)};
    for (auto r : columns_res)
      for (auto f : columns_fps) {
        const std::size_t grid = r ? r : l.grid;
        if (grid < l.grid) {
          row.push_back("-");
          continue;
        }
        const double fps = f ? f : l.t.fps;
        const auto samples = train::prepare_samples(ds, l.t.kind, grid, l.t.t_in, l.t.t_end, fps);
        std::vector<std::size_t> idx;
        if (a.split == "all") {
          idx.resize(samples.size());
          std::iota(idx.begin(), idx.end(), 0);
        } else {
          train::Split sp;
          try {
            sp = train::make_split(samples.size(), l.t);
          } catch (const std::invalid_argument& e) {
            throw io::DataError(std::string("cannot rebuild the training split on this dataset (") + e.what() +
                                "); use --split all");
          }
          idx = a.split == "val" ? sp.val : sp.test;
          if (idx.empty()) throw io::DataError("the " + a.split + " split is empty; use --split all");
        }
        train::check_compatible(l.ck.model, l.t.kind, samples.front());
        const double e = train::evaluate(l.ck.model, samples, idx, l.t.kind, l.t.batch_size).rel_err;
        row.push_back(io::fixed(e, 3) + "%");
        csv.add({l.path, std::to_string(l.grid), std::to_string(grid), io::fixed(fps, 6), std::to_string(idx.size()),
                 io::fixed(e, 6)});
      }
    table.add(row);
  }
  if (a.csv_stdout)
    io::write_csv(std::cout, csv);
  else
    io::write_aligned(std::cout, table);
  if (!a.csv.empty()) {
    std::ofstream f(a.csv);
    if (!f) throw io::DataError("cannot write " + a.csv);
    io::write_csv(f, csv);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  Common common;
  std::string kind, ckpt, depths, resolutions, variants, csv;
  std::size_t runs = 20;
  bool csv_stdout = false;
};

std::vector<Variant> parse_variants(const std::string& text) {
  std::vector<Variant> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(parse_variant(item));
    } catch (const std::invalid_argument& e) {
      throw io::ConfigError(e.what());
    }
  }
  return out;
}

/// Mean wall-clock milliseconds of one single-sample forward pass.
double time_inference(const Model& m, ProblemKind kind, std::size_t s, std::size_t runs) {
  std::vector<std::size_t> ext = io::input_extents(m.config, s);
  Shape shape{1, m.config.in_channels};
  shape.insert(shape.end(), ext.begin(), ext.end());
  Tensor x(shape);
  Rng rng(derive_seed(m.config.seed, 0x71a1));
  std::normal_distribution<double> n01;
  for (auto& v : x.vec()) v = n01(rng);
  const auto g = train::geometry_for(kind);
  auto once = [&] {
    Tape tape(false);
    Binder bind(tape, false);
    return forward(bind, m, make_grid_function(tape, x, g.domain, g.boundary)).values.value()[0];
  };
  volatile double sink = once();  // warm the FFT plan caches
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < runs; ++r) sink = once();
  (void)sink;
  return 1e3 * std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / double(runs);
}

int cmd_report(const ReportArgs& a) {
  Model model;
  ProblemKind kind;
  ModelConfig cfg;
  std::size_t grid;
  const bool from_ckpt = !a.ckpt.empty();
  if (from_ckpt) {
    io::Checkpoint ck = io::checkpoint_load(a.ckpt);
    kind = problem_of(ck.model, ck.run);
    cfg = ck.model.config;
    model = std::move(ck.model);
  } else {
    const io::RunConfig rc = resolve(a.common, {});
    kind = rc.train.kind;
    cfg = io::model_config_for(rc, training_grid(rc));
  }
  grid = cfg.extents.front();
  const std::vector<std::size_t> res = a.resolutions.empty() ? std::vector<std::size_t>{grid} : io::parse_size_list(a.resolutions);

  if (a.kind == "memory") {
    const std::vector<Variant> vs = a.variants.empty()
                                        ? std::vector<Variant>{Variant::UnoDagger, Variant::Uno, Variant::Fno}
                                        : parse_variants(a.variants);
    if (!a.depths.empty()) {
      std::cout << "activation memory per sample vs depth at " << res.front() << "x" << res.front() << "\n";
      emit(io::memory_by_depth(cfg, vs, io::parse_range(a.depths), res.front()), a.csv, a.csv_stdout);
      if (a.resolutions.empty()) return 0;
      std::cout << '\n';
    }
    std::cout << "activation memory per sample vs resolution at depth " << cfg.depth << "\n";
    const std::string csv = a.depths.empty() ? a.csv : (a.csv.empty() ? "" : a.csv + ".resolution.csv");
    emit(io::memory_by_resolution(cfg, vs, res), csv, a.csv_stdout);
  } else if (a.kind == "params") {
    if (!a.variants.empty()) {
      io::Table t;
      t.header = {"variant", "parameters"};
      for (auto v : parse_variants(a.variants)) {
        ModelConfig c = cfg;
        c.variant = v;
        t.add({variant_name(v), std::to_string(param_count(c).total)});
      }
      emit(t, a.csv, a.csv_stdout);
    } else {
      emit(io::params_table(cfg), a.csv, a.csv_stdout);
    }
  } else if (a.kind == "timing") {
    if (!from_ckpt) model = build_model(cfg);
    io::Table t;
    t.header = {"resolution", "ms per sample", "runs"};
    for (auto s : res)
      t.add({std::to_string(s) + "x" + std::to_string(s), io::fixed(time_inference(model, kind, s, a.runs), 3),
             std::to_string(a.runs)});
    emit(t, a.csv, a.csv_stdout);
  } else {
    throw io::ConfigError("report kind must be memory, params or timing");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// grad-check

struct GradArgs {
  Common common;
  std::size_t samples = 10, batch = 2;
  double tolerance = 1e-4, step = 1e-6;
};

/// Finite-difference check of the training loss gradient with respect to every
/// parameter tensor of the configured model, on random inputs.
int cmd_grad_check(const GradArgs& a) {
  const io::RunConfig rc = resolve(a.common, {});
  const std::size_t s = training_grid(rc);
  const Model base = build_model(io::model_config_for(rc, s));
  const ModelConfig& c = base.config;
  const ProblemKind kind = rc.train.kind;

  Rng rng(derive_seed(rc.train.seed, 0x9c));
  std::normal_distribution<double> n01;
  auto random = [&](Shape shape) {
    Tensor t(shape);
    for (auto& v : t.vec()) v = n01(rng);
    return t;
  };
  Shape in{a.batch, c.in_channels}, out{a.batch, c.out_channels};
  for (auto e : io::input_extents(c, s)) in.push_back(e);
  for (std::size_t i = 0; i < c.spatial_dims; ++i) out.push_back(s);
  if (c.temporal) out.push_back(c.frames_out);
  if (kind == ProblemKind::NsAutoregressive) out[1] = 2;  // two rollout steps exercise the feedback path
  const Tensor x = random(in), y = random(out);

  std::vector<ad::Value> params;
  for_each_parameter(base, [&](const auto& p) { params.push_back(p); });
  ad::GradCheckOptions opt;
  opt.step = a.step;
  opt.tolerance = a.tolerance;
  opt.samples_per_param = a.samples;
  opt.seed = rc.train.seed;
  const auto g = train::geometry_for(kind);
  const auto report = ad::grad_check(
      [&](Tape& t, const std::vector<Var>& p) {
        Model m = base;
        Binder bind(t);
        std::size_t k = 0;
        for_each_parameter(m, [&](const auto& q) { bind.assign(&q, p[k++]); });
        return train::batch_loss(bind, m, kind, make_grid_function(t, x, g.domain, g.boundary), y);
      },
      params, opt);
  std::cout << "grad-check " << variant_name(c.variant) << " " << train::problem_name(kind) << " at " << s << "x" << s
            << ": " << report.checked << " coordinates over " << params.size() << " tensors, " << report.failures
            << " failures, worst relative error " << report.worst.rel_error << " (tensor " << report.worst.param
            << ", coordinate " << report.worst.index << ")\n";
  if (!report.passed()) throw NumericalError("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"U-shaped neural operators: generate PDE data, train, evaluate and report"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a Darcy or Navier-Stokes dataset");
  add_common(g, gen.common);
  g->add_option("--kind", gen.kind, "darcy or ns")->check(CLI::IsMember({"darcy", "ns"}));
  g->add_option("--n", gen.n, "number of samples");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--out", gen.out, "dataset path (sidecar written to <out>.meta.json)");
  g->add_option("--threads", gen.threads, "worker threads (0: hardware concurrency)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model and write its checkpoint and metrics CSV");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "dataset path");
  t->add_option("--out", tr.out, "checkpoint path");
  t->add_option("--metrics", tr.metrics, "metrics CSV path (default <out>.metrics.csv)");
  t->add_option("--resume", tr.resume, "start from this checkpoint's weights")->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "relative L2 error of checkpoints across grids and frame rates");
  e->add_option("--ckpt", ev.ckpts, "checkpoint path (repeatable: one table row each)")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "dataset path")->required()->check(CLI::ExistingFile);
  e->add_option("--resolution", ev.resolutions, "evaluation grids, e.g. 32,64 (default: training grid)");
  e->add_option("--fps,--temporal-fps", ev.fps, "frame rates for space-time models, e.g. 1,1.5,2,3");
  e->add_option("--split", ev.split, "samples to score")->check(CLI::IsMember({"test", "val", "all"}));
  e->add_option("--csv", ev.csv, "also write the results as CSV");
  e->add_flag("--format-csv", ev.csv_stdout, "print CSV instead of the aligned table");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "memory, parameter or timing report");
  add_common(r, rp.common);
  r->add_option("--kind", rp.kind, "memory, params or timing")->required()->check(CLI::IsMember({"memory", "params", "timing"}));
  r->add_option("--ckpt", rp.ckpt, "report on a checkpoint instead of a configuration")->check(CLI::ExistingFile);
  r->add_option("--depths", rp.depths, "depth sweep A..B (memory)");
  r->add_option("--resolutions", rp.resolutions, "grids, e.g. 64,128,256");
  r->add_option("--variants", rp.variants, "comma-separated variants to compare (memory, params)");
  r->add_option("--runs", rp.runs, "timed runs to average (timing)")->check(CLI::PositiveNumber);
  r->add_option("--csv", rp.csv, "also write the table as CSV");
  r->add_flag("--format-csv", rp.csv_stdout, "print CSV instead of the aligned table");

  GradArgs gc;
  auto* c = app.add_subcommand("grad-check", "finite-difference check of the training gradient");
  add_common(c, gc.common);
  c->add_option("--samples", gc.samples, "coordinates per parameter tensor (0: all)");
  c->add_option("--batch", gc.batch, "random samples in the batch")->check(CLI::PositiveNumber);
  c->add_option("--tolerance", gc.tolerance, "relative tolerance");
  c->add_option("--step", gc.step, "central-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }
  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*r) return cmd_report(rp);
    if (*c) return cmd_grad_check(gc);
  } catch (const io::DataError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return 2;
  } catch (const ShapeError& err) {
    std::cerr << "shape error: " << err.what() << '\n';
    return 2;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 1;
}
