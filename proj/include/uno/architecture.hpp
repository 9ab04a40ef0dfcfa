#pragma once

// Model assembly: U-NO, U-NO-dagger, FNO and FNO with skips, in 2D and in
// space-time (two spatial axes plus a trailing time axis).

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "uno/operators.hpp"

namespace uno {

enum class Variant { Uno, UnoDagger, Fno, FnoSkip };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Uno: return "uno";
    case Variant::UnoDagger: return "uno-dagger";
    case Variant::Fno: return "fno";
    case Variant::FnoSkip: return "fno-skip";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::Uno, Variant::UnoDagger, Variant::Fno, Variant::FnoSkip})
    if (s == variant_name(v)) return v;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

inline const char* embedding_name(EmbeddingKind k) {
  switch (k) {
    case EmbeddingKind::None: return "none";
    case EmbeddingKind::Torus2d: return "torus-2d";
    case EmbeddingKind::Box: return "box";
  }
  return "?";
}

inline EmbeddingKind parse_embedding(const std::string& s) {
  for (EmbeddingKind k : {EmbeddingKind::None, EmbeddingKind::Torus2d, EmbeddingKind::Box})
    if (s == embedding_name(k)) return k;
  throw std::invalid_argument("unknown embedding kind '" + s + "'");
}

struct LayerSpec {
  std::size_t c_in = 1, c_out = 1;  // c_in includes the skip width
  std::vector<double> factors;      // per grid axis; time last when temporal
  std::vector<std::size_t> modes;
  bool activation = true;
  std::optional<std::size_t> skip_from;     // encoder layer whose output is prepended to the input
  std::optional<std::size_t> extents_from;  // spatial output extents replay this layer's input
};

struct ModelConfig {
  Variant variant = Variant::UnoDagger;
  std::size_t spatial_dims = 2;
  bool temporal = false;
  std::size_t width = 32;  // lifting dimension d0
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  EmbeddingKind embedding = EmbeddingKind::Box;
  std::vector<std::size_t> extents;  // design input grid; frames last when temporal
  std::size_t frames_out = 0;        // temporal models only
  std::size_t depth = 7;             // integral layers
  std::vector<std::size_t> modes;    // empty: per-layer default; one entry: same for every axis
  std::uint64_t seed = 0;

  std::size_t grid_axes() const { return spatial_dims + (temporal ? 1 : 0); }

  void validate() const {
    if (width < 4) throw std::invalid_argument("lifting width must be >= 4");
    if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("channel counts must be >= 1");
    if (extents.size() != grid_axes()) throw std::invalid_argument("design extents do not match dimensionality");
    for (auto e : extents)
      if (e < 4) throw std::invalid_argument("design extents must be >= 4");
    if (temporal && frames_out < 1) throw std::invalid_argument("temporal model needs output frames");
    if (embedding == EmbeddingKind::Torus2d && spatial_dims != 2)
      throw std::invalid_argument("torus embedding needs two spatial axes");
    if (!modes.empty() && modes.size() != 1 && modes.size() != grid_axes())
      throw std::invalid_argument("modes need one entry or one per grid axis");
  }
};

/// Input/output channel normalization folded into the model.
struct Normalizer {
  std::vector<double> in_mean, in_std;    // per raw input channel
  std::vector<double> out_mean, out_std;  // per output channel

  static Normalizer identity(std::size_t c_in, std::size_t c_out) {
    return {std::vector<double>(c_in, 0.0), std::vector<double>(c_in, 1.0),
            std::vector<double>(c_out, 0.0), std::vector<double>(c_out, 1.0)};
  }
};

// ---------------------------------------------------------------------------
// Layer planning

/// Encoder levels and middle layers for a depth: levels = min(3, (depth-1)/2).
inline std::pair<std::size_t, std::size_t> level_split(std::size_t depth) {
  if (depth == 0) return {0, 0};
  const std::size_t levels = std::min<std::size_t>(3, (depth - 1) / 2);
  return {levels, depth - 2 * levels};
}

namespace detail {

inline std::size_t default_modes(std::size_t n_in, std::size_t n_out) {
  const auto third = [](std::size_t n) { return std::size_t(std::lround(double(n) / 3.0)); };
  std::size_t k = std::max<std::size_t>(2, std::min(third(n_in), third(n_out)));
  return std::max<std::size_t>(1, std::min(k, std::min(n_in, n_out) / 2));
}

inline std::size_t clamp_modes(std::size_t k, std::size_t n_in, std::size_t n_out) {
  return std::max<std::size_t>(1, std::min(k, std::min(n_in, n_out) / 2));
}

}  // namespace detail

/// Grid extents entering and leaving each layer for a given input grid.
struct ExtentPlan {
  std::vector<std::vector<std::size_t>> in, out;
};

inline ExtentPlan plan_extents(const std::vector<LayerSpec>& specs, const std::vector<std::size_t>& input,
                               std::size_t spatial_dims) {
  ExtentPlan plan;
  std::vector<std::size_t> cur = input;
  for (const auto& s : specs) {
    plan.in.push_back(cur);
    std::vector<std::size_t> next = scaled_extents(cur, s.factors);
    if (s.extents_from) {
      const auto& rec = plan.in.at(*s.extents_from);
      std::copy(rec.begin(), rec.begin() + spatial_dims, next.begin());
    }
    plan.out.push_back(next);
    cur = next;
  }
  return plan;
}

/// Layer specifications for `cfg` at its design grid.
inline std::vector<LayerSpec> plan_layers(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t D = cfg.depth;
  const auto [levels, middle] = level_split(D);
  const bool unet = cfg.variant == Variant::Uno || cfg.variant == Variant::UnoDagger;
  const bool skips = unet || cfg.variant == Variant::FnoSkip;
  const std::size_t naxes = cfg.grid_axes();
  const double time_ratio = cfg.temporal ? double(cfg.frames_out) / double(cfg.extents.back()) : 1.0;

  static constexpr double kUnoSpace[] = {0.75, 2.0 / 3.0, 0.5};
  std::vector<LayerSpec> specs(D);
  std::size_t c = cfg.width;
  for (std::size_t i = 0; i < D; ++i) {
    LayerSpec& s = specs[i];
    double space = 1.0;
    if (unet && i < levels) space = cfg.variant == Variant::Uno ? kUnoSpace[i] : 0.5;
    if (unet && i >= levels + middle) space = 1.0 / specs[D - 1 - i].factors[0];
    s.factors.assign(naxes, space);
    if (cfg.temporal) s.factors.back() = 1.0;

    if (skips && i >= levels + middle) {
      const std::size_t enc = D - 1 - i;
      s.skip_from = enc;
      if (unet) s.extents_from = enc;
    }
    std::size_t c_in = c;
    if (s.skip_from) c_in += specs[*s.skip_from].c_out;
    s.c_in = c_in;
    if (unet && i < levels) {
      if (cfg.variant == Variant::Uno)
        s.c_out = i == 0 ? (3 * c + 1) / 2 : 2 * c;
      else
        s.c_out = 2 * c;
    } else if (unet && i >= levels + middle) {
      s.c_out = specs[D - 1 - i].c_in;
    } else {
      s.c_out = c;
    }
    s.activation = i + 1 < D;
    c = s.c_out;
  }
  // Time grows once: after the last skip for U-nets, at the first layer otherwise.
  if (cfg.temporal && D > 0) specs[unet ? D - 1 : 0].factors.back() = time_ratio;

  const ExtentPlan plan = plan_extents(specs, cfg.extents, cfg.spatial_dims);
  for (std::size_t i = 0; i < D; ++i) {
    auto& s = specs[i];
    s.modes.resize(naxes);
    for (std::size_t a = 0; a < naxes; ++a) {
      const std::size_t n_in = plan.in[i][a], n_out = plan.out[i][a];
      if (cfg.modes.empty())
        s.modes[a] = detail::default_modes(n_in, n_out);
      else
        s.modes[a] = detail::clamp_modes(cfg.modes.size() == 1 ? cfg.modes[0] : cfg.modes[a], n_in, n_out);
    }
  }
  return specs;
}

/// Per-axis product of all layer factors.
inline std::vector<double> composed_factors(const std::vector<LayerSpec>& specs, std::size_t naxes) {
  std::vector<double> p(naxes, 1.0);
  for (const auto& s : specs)
    for (std::size_t a = 0; a < naxes; ++a) p[a] *= s.factors[a];
  return p;
}

// ---------------------------------------------------------------------------
// Model

struct Model {
  ModelConfig config;
  std::vector<LayerSpec> specs;
  PointwiseMap P, Q;
  std::vector<IntegralLayer> layers;
  Normalizer norm;

  std::size_t lifted_inputs() const {
    return config.in_channels +
           embedding_channels(config.embedding, config.spatial_dims, config.temporal);
  }
};

/// Visits trainable tensors in registry order: P, layers (R, W, bias), Q.
template <class M, class F>
void for_each_parameter(M& model, F&& f) {
  auto map = [&](auto& m) {
    for (std::size_t s = 0; s < m.weights.size(); ++s) {
      f(m.weights[s]);
      f(m.biases[s]);
    }
  };
  map(model.P);
  for (auto& L : model.layers) {
    f(L.R);
    f(L.W);
    f(L.bias);
  }
  map(model.Q);
}

inline Model build_model(const ModelConfig& cfg) {
  Model m;
  m.config = cfg;
  m.specs = plan_layers(cfg);
  Rng rng = stream(cfg.seed, 0x5eed);
  m.P = make_two_stage(m.lifted_inputs(), cfg.width, rng);
  for (const auto& s : m.specs)
    m.layers.push_back(make_integral_layer(s.c_in, s.c_out, {s.modes}, s.factors, s.activation, rng));
  const std::size_t last = m.specs.empty() ? cfg.width : m.specs.back().c_out;
  m.Q = make_two_stage(last, cfg.out_channels, rng);
  m.norm = Normalizer::identity(cfg.in_channels, cfg.out_channels);
  return m;
}

/// 2D model on an s_1 x s_2 grid.
inline Model build_uno_2d(std::size_t width, std::vector<std::size_t> modes, Variant variant, ModelConfig base) {
  if (width < 4) throw std::invalid_argument("lifting width must be >= 4");
  base.width = width;
  base.modes = std::move(modes);
  base.variant = variant;
  base.spatial_dims = 2;
  base.temporal = false;
  return build_model(base);
}

/// Space-time model mapping frames (0, T_in] to (T_in, T] at `fps` frames per unit time.
inline Model build_uno_3d(std::size_t width, std::vector<std::size_t> modes, std::size_t spatial,
                          double t_in, double t_end, double fps, ModelConfig base) {
  if (!(t_end > t_in) || !(t_in > 0) || !(fps > 0)) throw std::invalid_argument("need 0 < T_in < T and fps > 0");
  const double fin = t_in * fps, fout = (t_end - t_in) * fps;
  if (std::abs(fin - std::round(fin)) > 1e-9 || std::abs(fout - std::round(fout)) > 1e-9)
    throw std::invalid_argument("time windows must hold whole frames");
  base.width = width;
  base.modes = std::move(modes);
  base.spatial_dims = 2;
  base.temporal = true;
  base.extents = {spatial, spatial, std::size_t(std::lround(fin))};
  base.frames_out = std::size_t(std::lround(fout));
  return build_model(base);
}

// ---------------------------------------------------------------------------
// Forward

namespace detail {

inline Var channel_affine(Var x, const std::vector<double>& mul, const std::vector<double>& add) {
  bool identity = true;
  for (std::size_t c = 0; c < mul.size(); ++c) identity = identity && mul[c] == 1.0 && add[c] == 0.0;
  if (identity) return x;
  const std::size_t n = mul.size();
  Tensor w(Shape{n, n}), b(Shape{n});
  for (std::size_t c = 0; c < n; ++c) {
    w.at(c, c) = mul[c];
    b[c] = add[c];
  }
  Tape& t = *x.tape;
  return ad::channel_linear(x, t.constant(std::move(w)), t.constant(std::move(b)));
}

}  // namespace detail

/// Records the grid entering and leaving every layer of one forward pass.
struct ForwardTrace {
  ExtentPlan extents;
  std::vector<std::pair<std::size_t, std::size_t>> skips;  // (encoder, decoder) pairs joined
};

/// a: [batch, in_channels, grid...] -> [batch, out_channels, grid'...].
inline GridFunction forward(Binder& bind, const Model& m, const GridFunction& a, ForwardTrace* trace = nullptr) {
  const ModelConfig& cfg = m.config;
  validate(a);
  if (a.channels() != cfg.in_channels)
    throw ShapeError("model expects " + std::to_string(cfg.in_channels) + " input channels, got " +
                     std::to_string(a.channels()));
  if (a.naxes() != cfg.grid_axes()) throw ShapeError("model input has the wrong number of grid axes");

  const auto& N = m.norm;
  std::vector<double> inv(N.in_std.size()), shift(N.in_std.size());
  for (std::size_t c = 0; c < inv.size(); ++c) {
    inv[c] = 1.0 / N.in_std[c];
    shift[c] = -N.in_mean[c] / N.in_std[c];
  }
  Var x = detail::channel_affine(a.values, inv, shift);
  if (embedding_channels(cfg.embedding, cfg.spatial_dims, cfg.temporal) > 0) {
    Tape& t = *x.tape;
    x = ad::concat({x, t.constant(positional_embedding(a.extents(), cfg.embedding, a.batch(), cfg.temporal))}, 1);
  }
  GridFunction v = lift(bind, {x, a.domain, a.boundary}, m.P);

  const ExtentPlan plan = plan_extents(m.specs, a.extents(), cfg.spatial_dims);
  std::vector<GridFunction> outs;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& s = m.specs[i];
    if (s.skip_from) {
      v = concat_skip(outs.at(*s.skip_from), v);
      if (trace) trace->skips.emplace_back(*s.skip_from, i);
    }
    v = integral_layer_apply(bind, v, m.layers[i], plan.out[i]);
    outs.push_back(v);
  }
  if (trace) trace->extents = plan;
  GridFunction u = project(bind, v, m.Q);
  u.values = detail::channel_affine(u.values, N.out_std, N.out_mean);
  return u;
}

// ---------------------------------------------------------------------------
// Accounting

struct ParamRow {
  std::string name;
  std::size_t spectral = 0, residual = 0, bias = 0;
  std::size_t total() const { return spectral + residual + bias; }
};

struct ParamReport {
  std::vector<ParamRow> rows;
  std::size_t total = 0;
};

/// Real parameter count; complex spectral weights count twice.
inline ParamReport param_count(const Model& m) {
  ParamReport r;
  auto pointwise = [&](const char* name, const PointwiseMap& p) {
    ParamRow row{name};
    for (std::size_t s = 0; s < p.weights.size(); ++s) {
      row.residual += p.weights[s].numel();
      row.bias += p.biases[s].numel();
    }
    r.rows.push_back(row);
  };
  pointwise("P", m.P);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& L = m.layers[i];
    r.rows.push_back({"G" + std::to_string(i), 2 * L.R.numel(), L.W.numel(), L.bias.numel()});
  }
  pointwise("Q", m.Q);
  for (const auto& row : r.rows) r.total += row.total();
  return r;
}

struct MemoryRow {
  std::string name;
  std::vector<std::size_t> extents;
  std::size_t channels = 0;
  std::size_t activation_bytes = 0;  // channels x grid points x bytes
  std::size_t spectral_bytes = 0;    // retained complex mode block after mixing
  std::size_t total() const { return activation_bytes + spectral_bytes; }
};

struct MemoryReport {
  std::vector<MemoryRow> rows;
  std::size_t total = 0;
};

/// Analytic bytes of activations retained for backpropagation of one sample.
/// Depends only on the configuration, so no weights are needed.
inline MemoryReport activation_memory_report(const ModelConfig& cfg, const std::vector<LayerSpec>& specs,
                                             const std::vector<std::size_t>& input_extents,
                                             std::size_t bytes_per_scalar = 8) {
  MemoryReport r;
  const ExtentPlan plan = plan_extents(specs, input_extents, cfg.spatial_dims);
  const std::size_t lifted = cfg.in_channels + embedding_channels(cfg.embedding, cfg.spatial_dims, cfg.temporal);
  const std::size_t n_in = numel(Shape(input_extents.begin(), input_extents.end()));
  const std::size_t hidden_p = 4 * std::max(lifted, cfg.width);
  r.rows.push_back({"P", input_extents, cfg.width, (hidden_p + cfg.width) * n_in * bytes_per_scalar, 0});
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const std::size_t pts = numel(Shape(plan.out[i].begin(), plan.out[i].end()));
    const std::size_t block = spectral::ModeSpec{s.modes}.block_size();
    r.rows.push_back({"G" + std::to_string(i), plan.out[i], s.c_out, s.c_out * pts * bytes_per_scalar,
                      2 * s.c_out * block * bytes_per_scalar});
  }
  const auto& last = plan.out.empty() ? input_extents : plan.out.back();
  const std::size_t n_out = numel(Shape(last.begin(), last.end()));
  const std::size_t c_last = specs.empty() ? cfg.width : specs.back().c_out;
  const std::size_t hidden_q = 4 * std::max(c_last, cfg.out_channels);
  r.rows.push_back({"Q", last, cfg.out_channels, (hidden_q + cfg.out_channels) * n_out * bytes_per_scalar, 0});
  for (const auto& row : r.rows) r.total += row.total();
  return r;
}

inline MemoryReport activation_memory_report(const Model& m, const std::vector<std::size_t>& input_extents,
                                             std::size_t bytes_per_scalar = 8) {
  return activation_memory_report(m.config, m.specs, input_extents, bytes_per_scalar);
}

/// Parameter count from the configuration alone; equals param_count(build_model(cfg)).
inline ParamReport param_count(const ModelConfig& cfg) {
  const auto specs = plan_layers(cfg);
  ParamReport r;
  auto two_stage = [&](const char* name, std::size_t a, std::size_t b) {
    const std::size_t h = 4 * std::max(a, b);
    r.rows.push_back({name, 0, a * h + h * b, h + b});
  };
  two_stage("P", cfg.in_channels + embedding_channels(cfg.embedding, cfg.spatial_dims, cfg.temporal), cfg.width);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    r.rows.push_back({"G" + std::to_string(i), 2 * s.c_in * s.c_out * spectral::ModeSpec{s.modes}.block_size(),
                      s.c_in * s.c_out, s.c_out});
  }
  two_stage("Q", specs.empty() ? cfg.width : specs.back().c_out, cfg.out_channels);
  for (const auto& row : r.rows) r.total += row.total();
  return r;
}

}  // namespace uno
