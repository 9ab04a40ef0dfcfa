#pragma once

// Relative-L2 training with Adam, a step-decayed learning rate, autoregressive
// rollout for 2D time stepping and best-validation snapshots.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <span>

#include "uno/architecture.hpp"
#include "uno/io/dataset.hpp"
#include "uno/pde/downsample.hpp"
#include "uno/random.hpp"

namespace uno::train {

using ad::Value;

enum class ProblemKind {
  Darcy,             // a -> u on a node grid
  NsAutoregressive,  // T_in frames -> next frame, composed in time
  NsSpaceTime,       // frames (0, T_in] -> frames (T_in, T] on a space-time grid
};

inline const char* problem_name(ProblemKind k) {
  switch (k) {
    case ProblemKind::Darcy: return "darcy";
    case ProblemKind::NsAutoregressive: return "ns-2d-autoregressive";
    case ProblemKind::NsSpaceTime: return "ns-3d";
  }
  return "?";
}

inline ProblemKind parse_problem(const std::string& s) {
  for (auto k : {ProblemKind::Darcy, ProblemKind::NsAutoregressive, ProblemKind::NsSpaceTime})
    if (s == problem_name(k)) return k;
  throw std::invalid_argument("unknown problem kind '" + s + "' (darcy | ns-2d-autoregressive | ns-3d)");
}

struct TrainConfig {
  ProblemKind kind = ProblemKind::Darcy;
  std::size_t epochs = 100;
  std::size_t batch_size = 10;
  double lr = 1e-3;
  double lr_decay = 0.5;  // applied every lr_step epochs
  std::size_t lr_step = 100;
  std::vector<std::size_t> split;  // {train, val, test}; empty: default proportions
  std::uint64_t seed = 0;
  std::size_t resolution = 0;  // training grid; 0 keeps the stored grid
  double t_in = 10;            // input window (0, T_in], unit times
  double t_end = 20;           // T
  double fps = 1;              // frames per unit time

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(lr >= 0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be finite and >= 0");
    if (!(lr_decay > 0) || lr_step < 1) throw std::invalid_argument("learning-rate decay must be positive");
    if (!split.empty() && split.size() != 3) throw std::invalid_argument("split needs three sizes");
    if (kind != ProblemKind::Darcy && (!(t_in > 0) || !(t_end > t_in) || !(fps > 0)))
      throw std::invalid_argument("time windows need 0 < T_in < T and fps > 0");
  }
};

/// lr0 * decay^floor(epoch / step).
inline double lr_at(std::size_t epoch, const TrainConfig& c) {
  return c.lr * std::pow(c.lr_decay, double(epoch / c.lr_step));
}

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Contiguous train/val/test blocks covering [0, n). Default proportions are
/// 75/12.5/12.5 for Darcy (1500/250/250 at n = 2000) and 80/10/10 otherwise.
inline Split make_split(std::size_t n, const TrainConfig& c) {
  std::size_t a, b, d;
  if (!c.split.empty()) {
    if (c.split.size() != 3) throw std::invalid_argument("split needs three sizes");
    a = c.split[0];
    b = c.split[1];
    d = c.split[2];
    if (a + b + d != n)
      throw std::invalid_argument("split " + std::to_string(a) + "/" + std::to_string(b) + "/" + std::to_string(d) +
                                  " does not cover " + std::to_string(n) + " samples");
  } else {
    const std::size_t den = c.kind == ProblemKind::Darcy ? 8 : 10;
    b = d = n / den;
    a = n - b - d;
  }
  Split s;
  for (std::size_t i = 0; i < n; ++i) (i < a ? s.train : i < a + b ? s.val : s.test).push_back(i);
  return s;
}

// ---------------------------------------------------------------------------
// Samples

/// One input/target pair without the batch axis: [c_in, grid...], [c_out, grid...].
struct Sample {
  Tensor input;
  Tensor target;
};

struct Geometry {
  Box domain;
  std::vector<Boundary> boundary;
};

/// Darcy grids include both boundaries; vorticity is periodic in space; time is not periodic.
inline Geometry geometry_for(ProblemKind k) {
  switch (k) {
    case ProblemKind::Darcy: return {Box::unit(2), {Boundary::Clamped, Boundary::Clamped}};
    case ProblemKind::NsAutoregressive: return {Box::unit(2), {Boundary::Periodic, Boundary::Periodic}};
    case ProblemKind::NsSpaceTime:
      return {Box::unit(3), {Boundary::Periodic, Boundary::Periodic, Boundary::Clamped}};
  }
  throw std::logic_error("unknown problem kind");
}

/// Stored frame indices of the input window (0, T_in] and target window (T_in, T].
struct FrameWindow {
  std::vector<std::size_t> input, target;
};

inline FrameWindow frame_window(double data_fps, std::size_t stored_frames, double t_in, double t_end, double fps) {
  auto whole = [](double x, const char* what) {
    if (std::abs(x - std::round(x)) > 1e-9 || x < 0.5) throw std::invalid_argument(std::string(what) + " is not a whole frame count");
    return std::size_t(std::llround(x));
  };
  const std::size_t stride = whole(data_fps / fps, "stored fps / requested fps");
  const std::size_t n_in = whole(t_in * fps, "T_in * fps"), n_end = whole(t_end * fps, "T * fps");
  if (n_end * stride >= stored_frames)
    throw io::DataError("trajectory has " + std::to_string(stored_frames) + " frames, window needs frame " +
                        std::to_string(n_end * stride));
  FrameWindow w;
  for (std::size_t k = 1; k <= n_end; ++k) (k <= n_in ? w.input : w.target).push_back(k * stride);
  return w;
}

namespace detail {

inline Tensor gather_frames(const Tensor& traj, const std::vector<std::size_t>& frames, bool frames_last) {
  const std::size_t s1 = traj.extent(1), s2 = traj.extent(2), nf = frames.size();
  Tensor out(frames_last ? Shape{1, s1, s2, nf} : Shape{nf, s1, s2});
  for (std::size_t f = 0; f < nf; ++f)
    for (std::size_t i = 0; i < s1; ++i)
      for (std::size_t j = 0; j < s2; ++j) {
        const double v = traj[(frames[f] * s1 + i) * s2 + j];
        if (frames_last)
          out[(i * s2 + j) * nf + f] = v;
        else
          out[(f * s1 + i) * s2 + j] = v;
      }
  return out;
}

inline Tensor with_leading_axis(const Tensor& t) {
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  Tensor out(s);
  std::copy(t.data().begin(), t.data().end(), out.data().begin());
  return out;
}

/// Channel c of [batch, channels, ...] as [batch, 1, ...].
inline Tensor channel_slice(const Tensor& t, std::size_t c) {
  const std::size_t batch = t.extent(0), channels = t.extent(1), per = t.numel() / (batch * channels);
  Shape s = t.shape();
  s[1] = 1;
  Tensor out(s);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(t.data().begin() + std::ptrdiff_t((b * channels + c) * per), per,
                out.data().begin() + std::ptrdiff_t(b * per));
  return out;
}

}  // namespace detail

/// Converts stored records into samples at `resolution` (0 keeps the stored
/// grid). NS windows are read at `fps` frames per unit time.
inline std::vector<Sample> prepare_samples(const io::Dataset& ds, ProblemKind kind, std::size_t resolution,
                                           double t_in, double t_end, double fps) {
  const bool darcy = kind == ProblemKind::Darcy;
  if (ds.meta.kind != (darcy ? "darcy" : "ns"))
    throw io::DataError(std::string("dataset kind '") + ds.meta.kind + "' does not match problem " + problem_name(kind));
  const std::size_t s = resolution ? resolution : ds.meta.grid;
  const auto grid = darcy ? pde::GridKind::Nodes : pde::GridKind::Periodic;
  std::vector<Sample> out;
  out.reserve(ds.records.size());
  for (const auto& rec : ds.records) {
    if (rec.size() != (darcy ? 2u : 1u)) throw io::DataError("record layout does not match the dataset kind");
    for (const auto& t : rec)
      if (t.rank() < 2 || t.extent(t.rank() - 1) != t.extent(t.rank() - 2))
        throw io::DataError("records must hold square grids");
    auto down = [&](const Tensor& t) { return t.extent(t.rank() - 1) == s ? t : pde::downsample(t, s, grid); };
    if (darcy) {
      if (rec[0].rank() != 2 || rec[1].shape() != rec[0].shape()) throw io::DataError("darcy records must be two [s, s] grids");
      out.push_back({detail::with_leading_axis(down(rec[0])), detail::with_leading_axis(down(rec[1]))});
      continue;
    }
    if (rec[0].rank() != 3) throw io::DataError("ns records must be [frames, s, s]");
    const Tensor traj = down(rec[0]);
    const FrameWindow w = frame_window(ds.meta.fps, traj.extent(0), t_in, t_end, fps);
    const bool frames_last = kind == ProblemKind::NsSpaceTime;
    out.push_back({detail::gather_frames(traj, w.input, frames_last), detail::gather_frames(traj, w.target, frames_last)});
  }
  return out;
}

/// Per-channel mean and standard deviation over the given samples. Frames of
/// an autoregressive model share one pooled statistic because predictions are
/// fed back as inputs.
inline Normalizer fit_normalizer(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx, ProblemKind kind) {
  if (idx.empty()) throw std::invalid_argument("normalizer needs at least one sample");
  const bool pooled = kind == ProblemKind::NsAutoregressive;
  auto stats = [&](bool target) {
    const std::size_t c = (target ? samples[idx[0]].target : samples[idx[0]].input).extent(0);
    const std::size_t groups = pooled ? 1 : c;
    std::vector<double> sum(groups, 0.0), sq(groups, 0.0), cnt(groups, 0.0);
    for (auto i : idx) {
      const Tensor& t = target ? samples[i].target : samples[i].input;
      const std::size_t per = t.numel() / c;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < per; ++p) {
          const double v = t[ch * per + p];
          const std::size_t g = pooled ? 0 : ch;
          sum[g] += v;
          sq[g] += v * v;
          cnt[g] += 1;
        }
    }
    std::vector<double> mean(c), sd(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t g = pooled ? 0 : ch;
      const double m = sum[g] / cnt[g];
      const double var = std::max(0.0, sq[g] / cnt[g] - m * m);
      mean[ch] = m;
      sd[ch] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return std::pair{mean, sd};
  };
  Normalizer n;
  std::tie(n.in_mean, n.in_std) = stats(false);
  std::tie(n.out_mean, n.out_std) = stats(true);
  if (pooled) {
    // The next-frame output shares the input statistic.
    n.out_mean.assign(n.out_mean.size(), n.in_mean[0]);
    n.out_std.assign(n.out_std.size(), n.in_std[0]);
  }
  return n;
}

/// Stacks inputs or targets of `idx` into [batch, ...].
inline Tensor stack(const std::vector<Sample>& samples, std::span<const std::size_t> idx, bool target) {
  const Tensor& first = target ? samples.at(idx[0]).target : samples.at(idx[0]).input;
  Shape shape = first.shape();
  shape.insert(shape.begin(), idx.size());
  Tensor out(shape);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Tensor& t = target ? samples.at(idx[b]).target : samples.at(idx[b]).input;
    if (t.shape() != first.shape()) throw ShapeError("samples in a batch have different shapes");
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + std::ptrdiff_t(b * first.numel()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rollout and losses

/// Sliding-window composition: step h reads the latest T_in entries of
/// (window frames, predictions so far) and appends one frame. `step` maps
/// [b, T_in, grid...] to [b, 1, grid...].
template <class Step>
std::vector<Var> rollout_frames(Step&& step, Var window, std::size_t horizon) {
  if (horizon < 1) throw std::invalid_argument("rollout horizon must be >= 1");
  const std::size_t t_in = window.shape().at(1);
  std::vector<Var> seq;
  for (std::size_t c = 0; c < t_in; ++c) seq.push_back(ad::slice(window, 1, c, 1));
  std::vector<Var> out;
  for (std::size_t h = 0; h < horizon; ++h) {
    std::vector<Var> parts(seq.end() - std::ptrdiff_t(t_in), seq.end());
    Var next = step(t_in == 1 ? parts[0] : ad::concat(parts, 1));
    seq.push_back(next);
    out.push_back(next);
  }
  return out;
}

/// Frames (T_in, T_in + horizon] of a 2D model fed its own predictions.
inline std::vector<Var> autoregressive_rollout(Binder& bind, const Model& m, const GridFunction& window,
                                               std::size_t horizon) {
  if (m.config.temporal || m.config.spatial_dims != 2) throw std::invalid_argument("rollout needs a 2D model");
  if (m.config.out_channels != 1) throw std::invalid_argument("rollout needs a single-frame output");
  if (window.channels() != m.config.in_channels)
    throw ShapeError("rollout window has " + std::to_string(window.channels()) + " frames, model expects " +
                     std::to_string(m.config.in_channels));
  return rollout_frames(
      [&](Var w) { return forward(bind, m, {w, window.domain, window.boundary}).values; }, window.values, horizon);
}

/// Differentiable batch loss: relative L2 (a fraction), summed over rollout steps.
inline Var batch_loss(Binder& bind, const Model& m, ProblemKind kind, const GridFunction& input, const Tensor& target) {
  if (kind != ProblemKind::NsAutoregressive) return ad::relative_l2(forward(bind, m, input).values, target);
  const std::size_t horizon = target.extent(1);
  const auto frames = autoregressive_rollout(bind, m, input, horizon);
  std::optional<Var> total;
  for (std::size_t h = 0; h < horizon; ++h) {
    Var l = ad::relative_l2(frames[h], detail::channel_slice(target, h));
    total = total ? ad::add(*total, l) : l;
  }
  return *total;
}

/// Prediction for a batch of inputs with the target's layout.
inline Tensor predict(const Model& m, ProblemKind kind, const Tensor& input, std::size_t horizon = 1) {
  Tape tape(false);
  Binder bind(tape, false);
  const Geometry g = geometry_for(kind);
  GridFunction in = make_grid_function(tape, input, g.domain, g.boundary);
  if (kind != ProblemKind::NsAutoregressive) return forward(bind, m, in).values.value();
  const auto frames = autoregressive_rollout(bind, m, in, horizon);
  return frames.size() == 1 ? frames[0].value() : ad::concat(frames, 1).value();
}

/// 100 ||pred_b - truth_b|| / ||truth_b|| for every sample b of the leading axis.
inline std::vector<double> relative_l2_per_sample(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape())
    throw ShapeError("relative_l2: shapes " + to_string(pred.shape()) + " and " + to_string(truth.shape()) + " differ");
  const std::size_t batch = truth.extent(0), per = truth.numel() / batch;
  std::vector<double> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    double dn = 0, tn = 0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      dn += (pred[i] - truth[i]) * (pred[i] - truth[i]);
      tn += truth[i] * truth[i];
    }
    if (tn == 0) throw std::invalid_argument("relative_l2: truth has zero norm");
    out[b] = 100.0 * std::sqrt(dn / tn);
  }
  return out;
}

/// Batch mean of the per-sample relative error, in percent.
inline double relative_l2(const Tensor& pred, const Tensor& truth) {
  const auto v = relative_l2_per_sample(pred, truth);
  double s = 0;
  for (double e : v) s += e;
  return s / double(v.size());
}

inline double relative_l2(const GridFunction& pred, const GridFunction& truth) {
  return relative_l2(pred.tensor(), truth.tensor());
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;  // one pair per parameter tensor, real coordinates
};

/// Real coordinates of a tensor; complex entries are (re, im) pairs.
inline std::span<double> real_view(Tensor& t) { return t.vec(); }
inline std::span<double> real_view(ComplexTensor& t) {
  return {reinterpret_cast<double*>(t.data().data()), 2 * t.numel()};
}
inline std::span<const double> real_view(const Value& v) {
  if (const auto* t = std::get_if<Tensor>(&v)) return t->vec();
  const auto& c = std::get<ComplexTensor>(v);
  return {reinterpret_cast<const double*>(c.data().data()), 2 * c.numel()};
}

/// Bias-corrected Adam update. Gradients are checked before anything changes.
inline void adam_step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads,
                      AdamState& st, double lr) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient counts differ");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size()) throw ShapeError("adam: gradient shape differs from its parameter");
    if (!all_finite(grads[k])) throw NumericalError("adam: non-finite gradient for parameter " + std::to_string(k));
  }
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.size(), 0.0);
      st.v.emplace_back(p.size(), 0.0);
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("adam: state does not match the parameter list");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, double(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = st.m[k];
    auto& v = st.v[k];
    if (m.size() != params[k].size()) throw ShapeError("adam: moment shape differs from its parameter");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = grads[k][i];
      m[i] = st.beta1 * m[i] + (1 - st.beta1) * g;
      v[i] = st.beta2 * v[i] + (1 - st.beta2) * g * g;
      params[k][i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.eps);
    }
  }
}

inline std::vector<std::span<double>> parameter_views(Model& m) {
  std::vector<std::span<double>> out;
  for_each_parameter(m, [&](auto& p) { out.push_back(real_view(p)); });
  return out;
}

/// Gradients of every parameter bound on the tape, in registry order.
inline std::vector<Value> collect_gradients(const Binder& bind, const Model& m) {
  std::vector<Value> out;
  for_each_parameter(m, [&](const auto& p) {
    const auto v = bind.find(&p);
    if (v)
      out.push_back(bind.tape().grad_or_zero(v->id));
    else
      out.push_back(Value(std::decay_t<decltype(p)>(p.shape())));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Training and evaluation

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;    // mean relative L2 (fraction), summed over rollout steps
  double val_rel_err = 0;   // percent; NaN without a validation split
  double seconds = 0;
};

struct Metrics {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  double best_val_rel_err = std::numeric_limits<double>::quiet_NaN();
  double test_rel_err = std::numeric_limits<double>::quiet_NaN();
};

inline void write_metrics_csv(std::ostream& os, const Metrics& m) {
  os << "epoch,lr,train_loss,val_rel_err,seconds\n";
  os.precision(17);
  for (const auto& e : m.epochs)
    os << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.val_rel_err << ',' << e.seconds << '\n';
}

struct EvalResult {
  double rel_err = 0;  // percent
  std::vector<double> per_sample;
};

/// Mean relative error (percent) of the model on samples `idx`.
inline EvalResult evaluate(const Model& m, const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                           ProblemKind kind, std::size_t batch = 10) {
  if (idx.empty()) throw std::invalid_argument("evaluate: no samples");
  EvalResult r;
  for (std::size_t b0 = 0; b0 < idx.size(); b0 += batch) {
    const std::span<const std::size_t> part(idx.data() + b0, std::min(batch, idx.size() - b0));
    const Tensor truth = stack(samples, part, true);
    const std::size_t horizon = kind == ProblemKind::NsAutoregressive ? truth.extent(1) : 1;
    const auto e = relative_l2_per_sample(predict(m, kind, stack(samples, part, false), horizon), truth);
    r.per_sample.insert(r.per_sample.end(), e.begin(), e.end());
  }
  double s = 0;
  for (double e : r.per_sample) s += e;
  r.rel_err = s / double(r.per_sample.size());
  return r;
}

inline void check_compatible(const Model& m, ProblemKind kind, const Sample& s) {
  const ModelConfig& c = m.config;
  const bool temporal = kind == ProblemKind::NsSpaceTime;
  if (c.temporal != temporal || c.spatial_dims != 2)
    throw std::invalid_argument(std::string("model dimensionality does not match problem ") + problem_name(kind));
  if (s.input.extent(0) != c.in_channels)
    throw ShapeError("samples have " + std::to_string(s.input.extent(0)) + " input channels, model expects " +
                     std::to_string(c.in_channels));
  const std::size_t out_c = kind == ProblemKind::NsAutoregressive ? 1 : s.target.extent(0);
  if (out_c != c.out_channels) throw ShapeError("samples and model disagree on output channels");
}

struct TrainResult {
  Model model;  // best-validation weights
  Metrics metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch Adam on the relative-L2 loss. The normalizer is fitted on the
/// training split; the returned model carries the weights of the epoch with
/// the lowest validation error (lowest training loss without a validation split).
inline TrainResult train(Model model, const std::vector<Sample>& samples, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const Split split = make_split(samples.size(), cfg);
  if (split.train.empty()) throw std::invalid_argument("training split is empty");
  check_compatible(model, cfg.kind, samples.front());
  model.norm = fit_normalizer(samples, split.train, cfg.kind);
  const Geometry geo = geometry_for(cfg.kind);

  AdamState adam;
  TrainResult result{model, {}};
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order = split.train;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    Rng rng = stream(cfg.seed, 1 + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t b0 = 0, batch = 0; b0 < order.size(); b0 += cfg.batch_size, ++batch) {
      const std::span<const std::size_t> idx(order.data() + b0, std::min(cfg.batch_size, order.size() - b0));
      try {
        Tape tape;
        Binder bind(tape);
        const GridFunction in = make_grid_function(tape, stack(samples, idx, false), geo.domain, geo.boundary);
        const Var loss = batch_loss(bind, model, cfg.kind, in, stack(samples, idx, true));
        const double value = loss.value()[0];
        if (!std::isfinite(value)) throw NumericalError("non-finite loss");
        tape.backward(loss);
        const std::vector<Value> grads = collect_gradients(bind, model);
        std::vector<std::span<const double>> gviews;
        for (const auto& g : grads) gviews.push_back(real_view(g));
        adam_step(parameter_views(model), gviews, adam, lr);
        loss_sum += value * double(idx.size());
      } catch (const NumericalError& e) {
        throw NumericalError("training aborted at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                             ": " + e.what());
      }
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    em.train_loss = loss_sum / double(order.size());
    em.val_rel_err = split.val.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : evaluate(model, samples, split.val, cfg.kind, cfg.batch_size).rel_err;
    const double score = split.val.empty() ? em.train_loss : em.val_rel_err;
    if (score < best) {
      best = score;
      result.model = model;
      result.metrics.best_epoch = epoch;
      result.metrics.best_val_rel_err = em.val_rel_err;
    }
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.epochs.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  if (!split.test.empty())
    result.metrics.test_rel_err = evaluate(result.model, samples, split.test, cfg.kind, cfg.batch_size).rel_err;
  return result;
}

}  // namespace uno::train
