#pragma once

// Reports are tables of strings rendered twice from the same cells: CSV for
// machines and a space-aligned layout for people.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "uno/architecture.hpp"
#include "uno/io/config.hpp"

namespace uno::io {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    if (row.size() != header.size()) throw std::logic_error("table row width differs from header");
    rows.push_back(std::move(row));
  }
};

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline void write_csv(std::ostream& os, const Table& t) {
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << csv_field(r[i]);
    os << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

/// First column left-aligned, the rest right-aligned, two spaces between columns.
inline void write_aligned(std::ostream& os, const Table& t) {
  std::vector<std::size_t> w(t.header.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = t.header[i].size();
    for (const auto& r : t.rows) w[i] = std::max(w[i], r[i].size());
  }
  auto line = [&](const std::vector<std::string>& r) {
    std::string out;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const std::string pad(w[i] - r[i].size(), ' ');
      if (i) out += "  ";
      out += i == 0 ? r[i] + pad : pad + r[i];
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    os << out << '\n';
  };
  line(t.header);
  std::size_t total = 0;
  for (auto x : w) total += x;
  os << std::string(total + 2 * (w.size() - 1), '-') << '\n';
  for (const auto& r : t.rows) line(r);
}

inline std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// Argument lists

/// "A..B" inclusive.
inline std::vector<std::size_t> parse_range(const std::string& text) {
  const auto dots = text.find("..");
  auto num = [&](std::string_view s) {
    std::size_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty())
      throw ConfigError("bad range '" + text + "', expected A..B");
    return v;
  };
  if (dots == std::string::npos) return {num(text)};
  const std::size_t a = num(std::string_view(text).substr(0, dots)), b = num(std::string_view(text).substr(dots + 2));
  if (b < a) throw ConfigError("empty range '" + text + "'");
  std::vector<std::size_t> out;
  for (std::size_t v = a; v <= b; ++v) out.push_back(v);
  return out;
}

/// Comma-separated list; each item may also be a range A..B.
inline std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto part = parse_range(item);
    out.insert(out.end(), part.begin(), part.end());
  }
  if (out.empty()) throw ConfigError("empty list '" + text + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Architecture reports

inline std::vector<std::size_t> input_extents(const ModelConfig& c, std::size_t s) {
  std::vector<std::size_t> e(c.spatial_dims, s);
  if (c.temporal) e.push_back(c.extents.back());
  return e;
}

inline std::size_t memory_bytes(ModelConfig c, Variant v, std::size_t depth, std::size_t s) {
  c.variant = v;
  c.depth = depth;
  return activation_memory_report(c, plan_layers(c), input_extents(c, s)).total;
}

inline std::string mebibytes(std::size_t bytes) { return fixed(double(bytes) / (1024.0 * 1024.0), 3); }

/// Activation memory in MiB per depth, one column per variant, plus the
/// marginal cost of each added layer.
inline Table memory_by_depth(const ModelConfig& c, const std::vector<Variant>& variants,
                             const std::vector<std::size_t>& depths, std::size_t s) {
  Table t;
  t.header = {"depth"};
  for (auto v : variants) t.header.push_back(std::string(variant_name(v)) + " MiB");
  for (auto v : variants) t.header.push_back(std::string(variant_name(v)) + " marginal MiB");
  for (std::size_t i = 0; i < depths.size(); ++i) {
    std::vector<std::string> row{std::to_string(depths[i])};
    std::vector<std::string> marginal;
    for (auto v : variants) {
      const std::size_t b = memory_bytes(c, v, depths[i], s);
      row.push_back(mebibytes(b));
      if (i == 0 || depths[i] != depths[i - 1] + 1) {
        marginal.push_back("-");
      } else {
        const double prev = double(memory_bytes(c, v, depths[i - 1], s));
        marginal.push_back(fixed((double(b) - prev) / (1024.0 * 1024.0), 3));
      }
    }
    row.insert(row.end(), marginal.begin(), marginal.end());
    t.add(row);
  }
  return t;
}

/// Activation memory in MiB per input resolution, one column per variant.
inline Table memory_by_resolution(const ModelConfig& c, const std::vector<Variant>& variants,
                                  const std::vector<std::size_t>& resolutions) {
  Table t;
  t.header = {"resolution"};
  for (auto v : variants) t.header.push_back(std::string(variant_name(v)) + " MiB");
  for (auto s : resolutions) {
    std::vector<std::string> row{std::to_string(s) + "x" + std::to_string(s)};
    for (auto v : variants) row.push_back(mebibytes(memory_bytes(c, v, c.depth, s)));
    t.add(row);
  }
  return t;
}

inline Table params_table(const ModelConfig& c) {
  const ParamReport r = param_count(c);
  Table t;
  t.header = {"layer", "spectral", "pointwise", "bias", "total"};
  for (const auto& row : r.rows)
    t.add({row.name, std::to_string(row.spectral), std::to_string(row.residual), std::to_string(row.bias),
           std::to_string(row.total())});
  t.add({"all", "", "", "", std::to_string(r.total)});
  return t;
}

}  // namespace uno::io
