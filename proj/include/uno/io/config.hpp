#pragma once

// Run configuration: a JSON document with sections model, train, data and
// paths. Values resolve as flag > environment (UNO_<SECTION>_<KEY>) > file >
// default; unknown keys are rejected.

#include <cctype>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "uno/architecture.hpp"
#include "uno/io/binary.hpp"
#include "uno/training.hpp"

namespace uno::io {

/// Invalid or unknown configuration keys and values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelSettings {
  Variant variant = Variant::UnoDagger;
  std::size_t width = 16;
  std::size_t depth = 7;
  std::vector<std::size_t> modes;  // empty: per-layer default
  std::string embedding = "auto";  // auto: box for darcy, torus-2d for ns
  std::uint64_t seed = 0;
};

struct DataSettings {
  std::string kind = "darcy";  // darcy | ns
  std::size_t n = 10;
  std::uint64_t seed = 0;
  std::size_t solver_grid = 0;  // 0: same as grid
  std::size_t grid = 0;         // 0: 85 for darcy, 64 for ns
  double nu = 1e-3;
  double dt = 1e-3;
  std::size_t horizon = 50;
  double fps = 1;
  double t_in = 10;
  double cg_tol = 1e-10;
};

/// Stored grid used when data.grid is 0.
inline std::size_t default_grid(const std::string& kind) { return kind == "ns" ? 64 : 85; }

struct Paths {
  std::string data;
  std::string checkpoint;
  std::string metrics;  // empty: <checkpoint>.metrics.csv
};

struct RunConfig {
  ModelSettings model;
  train::TrainConfig train;
  DataSettings data;
  Paths paths;
  std::vector<std::string> defaulted;  // keys left at their defaults
};

namespace detail {

template <class T>
T get_as(const nlohmann::json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

struct Field {
  std::string key;  // section.name
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

#define UNO_FIELD(section, name, T)                                                                         \
  Field {                                                                                                   \
    #section "." #name, [](RunConfig& c, const nlohmann::json& v) { c.section.name = get_as<T>(v, #section "." #name); }, \
        [](const RunConfig& c) { return nlohmann::json(c.section.name); }                                   \
  }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{"model.variant",
            [](RunConfig& c, const nlohmann::json& v) {
              try {
                c.model.variant = parse_variant(get_as<std::string>(v, "model.variant"));
              } catch (const ConfigError&) {
                throw;
              } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
              }
            },
            [](const RunConfig& c) { return nlohmann::json(variant_name(c.model.variant)); }},
      UNO_FIELD(model, width, std::size_t),
      UNO_FIELD(model, depth, std::size_t),
      UNO_FIELD(model, modes, std::vector<std::size_t>),
      UNO_FIELD(model, embedding, std::string),
      UNO_FIELD(model, seed, std::uint64_t),
      Field{"train.kind",
            [](RunConfig& c, const nlohmann::json& v) {
              try {
                c.train.kind = train::parse_problem(get_as<std::string>(v, "train.kind"));
              } catch (const ConfigError&) {
                throw;
              } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
              }
            },
            [](const RunConfig& c) { return nlohmann::json(train::problem_name(c.train.kind)); }},
      UNO_FIELD(train, epochs, std::size_t),
      UNO_FIELD(train, batch_size, std::size_t),
      UNO_FIELD(train, lr, double),
      UNO_FIELD(train, lr_decay, double),
      UNO_FIELD(train, lr_step, std::size_t),
      UNO_FIELD(train, split, std::vector<std::size_t>),
      UNO_FIELD(train, seed, std::uint64_t),
      UNO_FIELD(train, resolution, std::size_t),
      UNO_FIELD(train, t_in, double),
      UNO_FIELD(train, t_end, double),
      UNO_FIELD(train, fps, double),
      UNO_FIELD(data, kind, std::string),
      UNO_FIELD(data, n, std::size_t),
      UNO_FIELD(data, seed, std::uint64_t),
      UNO_FIELD(data, solver_grid, std::size_t),
      UNO_FIELD(data, grid, std::size_t),
      UNO_FIELD(data, nu, double),
      UNO_FIELD(data, dt, double),
      UNO_FIELD(data, horizon, std::size_t),
      UNO_FIELD(data, fps, double),
      UNO_FIELD(data, t_in, double),
      UNO_FIELD(data, cg_tol, double),
      UNO_FIELD(paths, data, std::string),
      UNO_FIELD(paths, checkpoint, std::string),
      UNO_FIELD(paths, metrics, std::string),
  };
  return f;
}

#undef UNO_FIELD

inline const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

inline void flatten(const nlohmann::json& j, const std::string& prefix, std::map<std::string, nlohmann::json>& out) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object" + (prefix.empty() ? "" : " at '" + prefix + "'"));
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (prefix.empty() && v.is_object())
      flatten(v, key, out);
    else
      out[key] = v;
  }
}

/// Strings that parse as JSON keep their JSON type; anything else is a string.
inline nlohmann::json parse_scalar(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json(text);
  }
}

}  // namespace detail

/// UNO_ + key path uppercased with dots as underscores, e.g. UNO_TRAIN_EPOCHS.
inline std::string env_name(const std::string& key) {
  std::string s = "UNO_";
  for (char ch : key) s += ch == '.' ? '_' : char(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& f : detail::fields()) k.push_back(f.key);
  return k;
}

/// Resolves a configuration from an optional document, the environment and
/// flag overrides (key path -> textual value).
inline RunConfig resolve_config(const nlohmann::json& file, const std::map<std::string, std::string>& flags = {},
                                const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  std::map<std::string, nlohmann::json> values;
  if (!file.is_null()) detail::flatten(file, "", values);
  for (const auto& [k, v] : values)
    if (!detail::find_field(k)) throw ConfigError("unknown config key '" + k + "'");
  for (const auto& f : detail::fields())
    if (const char* e = getenv_fn(env_name(f.key).c_str())) values[f.key] = detail::parse_scalar(e);
  for (const auto& [k, v] : flags) {
    if (!detail::find_field(k)) throw ConfigError("unknown config key '" + k + "'");
    values[k] = detail::parse_scalar(v);
  }
  RunConfig c;
  for (const auto& f : detail::fields()) {
    auto it = values.find(f.key);
    if (it == values.end())
      c.defaulted.push_back(f.key);
    else
      f.set(c, it->second);
  }
  if (c.data.kind != "darcy" && c.data.kind != "ns") throw ConfigError("data.kind must be darcy or ns");
  if (c.data.grid == 0) c.data.grid = default_grid(c.data.kind);
  if (c.model.embedding != "auto") {
    try {
      parse_embedding(c.model.embedding);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline nlohmann::json load_json(const std::string& path) {
  const std::vector<char> text = read_file(path);
  try {
    return nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

/// Every key, nested by section.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : detail::fields()) {
    const auto dot = f.key.find('.');
    j[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(c);
  }
  return j;
}

/// Model for the configured problem at training grid `s`.
inline ModelConfig model_config_for(const RunConfig& rc, std::size_t s) {
  using train::ProblemKind;
  const auto& t = rc.train;
  ModelConfig m;
  m.variant = rc.model.variant;
  m.width = rc.model.width;
  m.depth = rc.model.depth;
  m.modes = rc.model.modes;
  m.seed = rc.model.seed;
  m.spatial_dims = 2;
  m.out_channels = 1;
  const std::string emb =
      rc.model.embedding != "auto" ? rc.model.embedding : (t.kind == ProblemKind::Darcy ? "box" : "torus-2d");
  m.embedding = parse_embedding(emb);
  const auto frames = [](double x) { return std::size_t(std::llround(x)); };
  switch (t.kind) {
    case ProblemKind::Darcy:
      m.in_channels = 1;
      m.extents = {s, s};
      break;
    case ProblemKind::NsAutoregressive:
      m.in_channels = frames(t.t_in * t.fps);
      m.extents = {s, s};
      break;
    case ProblemKind::NsSpaceTime:
      m.temporal = true;
      m.in_channels = 1;
      m.extents = {s, s, frames(t.t_in * t.fps)};
      m.frames_out = frames((t.t_end - t.t_in) * t.fps);
      break;
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Model configuration and normalizer documents (checkpoint headers)

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"variant", variant_name(m.variant)},
          {"spatial_dims", m.spatial_dims},
          {"temporal", m.temporal},
          {"width", m.width},
          {"in_channels", m.in_channels},
          {"out_channels", m.out_channels},
          {"embedding", embedding_name(m.embedding)},
          {"extents", m.extents},
          {"frames_out", m.frames_out},
          {"depth", m.depth},
          {"modes", m.modes},
          {"seed", m.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.variant = parse_variant(j.at("variant").get<std::string>());
  j.at("spatial_dims").get_to(m.spatial_dims);
  j.at("temporal").get_to(m.temporal);
  j.at("width").get_to(m.width);
  j.at("in_channels").get_to(m.in_channels);
  j.at("out_channels").get_to(m.out_channels);
  m.embedding = parse_embedding(j.at("embedding").get<std::string>());
  j.at("extents").get_to(m.extents);
  j.at("frames_out").get_to(m.frames_out);
  j.at("depth").get_to(m.depth);
  j.at("modes").get_to(m.modes);
  j.at("seed").get_to(m.seed);
  m.validate();
  return m;
}

inline nlohmann::json to_json(const Normalizer& n) {
  return {{"in_mean", n.in_mean}, {"in_std", n.in_std}, {"out_mean", n.out_mean}, {"out_std", n.out_std}};
}

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  j.at("in_mean").get_to(n.in_mean);
  j.at("in_std").get_to(n.in_std);
  j.at("out_mean").get_to(n.out_mean);
  j.at("out_std").get_to(n.out_std);
  return n;
}

}  // namespace uno::io
