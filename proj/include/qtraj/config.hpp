#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qtraj/error.hpp"
#include "qtraj/hilbert.hpp"
#include "qtraj/sme.hpp"

namespace qtraj::cli {

namespace fs = std::filesystem;

/// Configuration problem anchored to a line of the source file.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& source, int line, const std::string& what)
      : Error(ErrorCode::invalid_config, source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  [[nodiscard]] int line() const noexcept { return line_; }

 private:
  int line_;
};

//---------------------------------------------------------------------------//
// Raw key = value file
//---------------------------------------------------------------------------//

struct ConfigValue {
  std::string text;
  int line = 0;
};

using ConfigSection = std::map<std::string, ConfigValue>;

struct ConfigFile {
  std::string source;
  ConfigSection top;
  std::string section;  // protocol section name, empty if absent
  int section_line = 0;
  ConfigSection params;
  std::map<std::string, ConfigSection> extra;  // [manifest], [summary]
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool valid_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

}  // namespace detail

/// Sections [manifest] and [summary] are kept but never interpreted, so a run
/// manifest parses as the config that produced it.
inline ConfigFile parse_config(std::istream& in, const std::string& source) {
  ConfigFile cf;
  cf.source = source;
  ConfigSection* current = &cf.top;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    std::string_view s = detail::trim(line);
    if (n == 1 && s.starts_with("\xEF\xBB\xBF")) s = detail::trim(s.substr(3));
    if (s.empty() || s.front() == '#' || s.front() == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(source, n, "unterminated section header");
      const std::string name(detail::trim(s.substr(1, s.size() - 2)));
      if (!detail::valid_key(name)) throw ConfigError(source, n, "bad section name '" + name + "'");
      if (name == "manifest" || name == "summary") {
        if (cf.extra.count(name)) throw ConfigError(source, n, "duplicate section [" + name + "]");
        current = &cf.extra[name];
      } else {
        if (!cf.section.empty()) throw ConfigError(source, n, "second protocol section [" + name + "]");
        cf.section = name;
        cf.section_line = n;
        current = &cf.params;
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError(source, n, "expected key = value");
    const std::string key(detail::trim(s.substr(0, eq)));
    std::string_view value = detail::trim(s.substr(eq + 1));
    if (const auto hash = value.find(" #"); hash != std::string_view::npos) value = detail::trim(value.substr(0, hash));
    if (!detail::valid_key(key)) throw ConfigError(source, n, "bad key '" + key + "'");
    if (current->count(key)) throw ConfigError(source, n, "duplicate key '" + key + "'");
    (*current)[key] = {std::string(value), n};
  }
  return cf;
}

inline ConfigFile load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open config " + path.string());
  return parse_config(in, path.string());
}

//---------------------------------------------------------------------------//
// Values
//---------------------------------------------------------------------------//

/// Number or product of numbers and `pi`, e.g. 2*pi*6.23.
inline std::optional<double> parse_number(std::string_view s) {
  s = detail::trim(s);
  if (s.empty()) return std::nullopt;
  double out = 1.0;
  while (true) {
    const auto star = s.find('*');
    std::string_view f = detail::trim(s.substr(0, star));
    double sign = 1.0;
    if (f.starts_with('-') && f.substr(1) == "pi") sign = -1.0, f = f.substr(1);
    if (f == "pi") {
      out *= sign * std::numbers::pi;
    } else {
      double v = 0.0;
      if (f.starts_with('+')) f.remove_prefix(1);
      const auto r = std::from_chars(f.data(), f.data() + f.size(), v);
      if (r.ec != std::errc() || r.ptr != f.data() + f.size() || !std::isfinite(v)) return std::nullopt;
      out *= v;
    }
    if (star == std::string_view::npos) break;
    s = s.substr(star + 1);
  }
  return out;
}

inline std::optional<std::uint64_t> parse_count(std::string_view s) {
  s = detail::trim(s);
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<bool> parse_flag(std::string_view s) {
  s = detail::trim(s);
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  return std::nullopt;
}

/// Shortest decimal that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

//---------------------------------------------------------------------------//
// Schemas
//---------------------------------------------------------------------------//

enum class Kind { real, count, flag, choice, text };
enum class Range { any, positive, nonnegative, unit, at_least_one };

struct Param {
  std::string key;
  Kind kind = Kind::real;
  std::string def;
  Range range = Range::any;
  std::vector<std::string> choices = {};
};

struct ProtocolSchema {
  std::string name;
  std::vector<Param> top;     // run-level keys with protocol defaults
  std::vector<Param> params;  // keys of the [name] section
};

namespace detail {

inline std::vector<Param> top_keys(std::string n, std::string duration, std::string dt, std::string thinning,
                                   std::string write_records) {
  return {{"master_seed", Kind::count, "1"},
          {"n_trajectories", Kind::count, std::move(n), Range::at_least_one},
          {"duration", Kind::real, std::move(duration), Range::positive},
          {"dt", Kind::real, std::move(dt), Range::positive},
          {"thinning", Kind::count, std::move(thinning), Range::at_least_one},
          {"write_records", Kind::count, std::move(write_records)},
          {"output", Kind::text, ""}};
}

inline std::vector<Param> qubit_params(std::string eta) {
  return {{"gamma_d", Kind::real, "1", Range::nonnegative},
          {"eta", Kind::real, std::move(eta), Range::unit},
          {"phi", Kind::real, "0"},
          {"omega_r", Kind::real, "0"},
          {"initial", Kind::choice, "+x", Range::any, {"e", "g", "+x", "-x", "+y", "-y"}},
          {"integrator", Kind::choice, "kraus", Range::any, {"kraus", "ito"}}};
}

}  // namespace detail

inline const std::vector<ProtocolSchema>& protocol_schemas() {
  using detail::top_keys;
  static const std::vector<ProtocolSchema> s = {
      {"trajectory", top_keys("1", "10", "1e-3", "10", "100"), detail::qubit_params("1")},
      {"ensemble", top_keys("2000", "5", "1e-3", "10", "1"), detail::qubit_params("0.4")},
      {"rabi",
       top_keys("200", "40", "5e-3", "4", "1"),
       {{"omega_r", Kind::real, "2*pi*2", Range::positive},
        {"gamma_d", Kind::real, "1", Range::nonnegative},
        {"eta", Kind::real, "0.4", Range::unit},
        {"gain", Kind::real, "0.15"},
        {"feedback", Kind::flag, "true"},
        {"window", Kind::count, "0"}}},
      {"halfparity",
       top_keys("100", "10", "1e-3", "10", "1"),
       {{"gamma", Kind::real, "1", Range::positive}, {"eta", Kind::real, "1", Range::unit}}},
      {"phase",
       top_keys("2000", "1", "2e-4", "1", "1"),
       {{"eta", Kind::real, "1", Range::unit},
        {"strategy", Kind::choice, "adaptive", Range::any, {"adaptive", "heterodyne", "fixed"}},
        {"fixed_phi", Kind::real, "0"},
        {"delay_steps", Kind::count, "0"},
        {"tail_steps", Kind::count, "40"},
        {"bins", Kind::count, "36", Range::at_least_one}}},
      {"zeno-drag",
       top_keys("1000", "5", "1e-3", "100", "1"),
       {{"nu", Kind::real, "2*pi*0.05", Range::nonnegative},
        {"gamma_d", Kind::real, "2", Range::positive},
        {"eta", Kind::real, "1", Range::unit},
        {"frame", Kind::choice, "rotating", Range::any, {"rotating", "lab"}}}},
      {"zeno-blockade",
       top_keys("1", "10", "1e-3", "100", "0"),
       {{"N", Kind::count, "3", Range::at_least_one},
        {"omega_r", Kind::real, "2*pi*6.23", Range::nonnegative},
        {"gamma", Kind::real, "2*pi*0.77", Range::nonnegative},
        {"epsilon", Kind::real, "0.5"},
        {"kappa", Kind::real, "0", Range::nonnegative},
        {"n_max", Kind::count, "10", Range::at_least_one},
        {"blockade", Kind::flag, "true"},
        {"wigner_extent", Kind::real, "3", Range::positive},
        {"wigner_points", Kind::count, "25", Range::at_least_one}}},
      {"kerrcat",
       top_keys("1", "30", "0.5", "1", "0"),
       {{"K", Kind::real, "1", Range::positive},
        {"eps2", Kind::real, "4"},
        {"kappa2", Kind::real, "0.5", Range::nonnegative},
        {"kappa1", Kind::real, "0", Range::nonnegative},
        {"n_max", Kind::count, "24", Range::at_least_one},
        {"initial", Kind::choice, "vacuum", Range::any, {"vacuum", "plus", "minus", "even", "odd"}}}},
      {"wigner",
       top_keys("1", "1", "1", "1", "0"),
       {{"state", Kind::choice, "vacuum", Range::any, {"vacuum", "coherent", "fock", "cat-even", "cat-odd"}},
        {"alpha_re", Kind::real, "0"},
        {"alpha_im", Kind::real, "0"},
        {"n", Kind::count, "0"},
        {"n_max", Kind::count, "20", Range::at_least_one},
        {"extent", Kind::real, "3", Range::positive},
        {"points", Kind::count, "61", Range::at_least_one}}},
  };
  return s;
}

inline const ProtocolSchema* find_schema(std::string_view name) {
  for (const auto& p : protocol_schemas())
    if (p.name == name) return &p;
  return nullptr;
}

//---------------------------------------------------------------------------//
// Validated run configuration
//---------------------------------------------------------------------------//

struct RunConfig {
  std::string source;
  std::string protocol;
  int protocol_line = 0;
  std::vector<std::pair<std::string, ConfigValue>> top;     // schema order, defaults filled
  std::vector<std::pair<std::string, ConfigValue>> params;  // schema order, defaults filled

  [[nodiscard]] const ConfigValue& value(std::string_view key) const {
    for (const auto* list : {&top, &params})
      for (const auto& [k, v] : *list)
        if (k == key) return v;
    fail(ErrorCode::invalid_config, "no key '" + std::string(key) + "'");
  }
  [[nodiscard]] double real(std::string_view key) const { return *parse_number(value(key).text); }
  [[nodiscard]] std::uint64_t count(std::string_view key) const { return *parse_count(value(key).text); }
  [[nodiscard]] bool flag(std::string_view key) const { return *parse_flag(value(key).text); }
  [[nodiscard]] const std::string& text(std::string_view key) const { return value(key).text; }
  [[nodiscard]] int line(std::string_view key) const { return value(key).line; }

  [[nodiscard]] std::uint64_t master_seed() const { return count("master_seed"); }
  [[nodiscard]] std::size_t n_trajectories() const { return count("n_trajectories"); }
  [[nodiscard]] double duration() const { return real("duration"); }
  [[nodiscard]] double dt() const { return real("dt"); }
  [[nodiscard]] std::size_t thinning() const { return count("thinning"); }
  [[nodiscard]] std::size_t write_records() const {
    return std::min<std::size_t>(count("write_records"), n_trajectories());
  }

  void set(std::string_view key, std::string text) {
    for (auto* list : {&top, &params})
      for (auto& [k, v] : *list)
        if (k == key) {
          v.text = std::move(text);
          return;
        }
    fail(ErrorCode::invalid_config, "no key '" + std::string(key) + "'");
  }
};

namespace detail {

inline void check_param(const std::string& source, const Param& p, const ConfigValue& v) {
  const auto bad = [&](const std::string& why) { throw ConfigError(source, v.line, p.key + ": " + why); };
  switch (p.kind) {
    case Kind::text:
      return;
    case Kind::flag:
      if (!parse_flag(v.text)) bad("expected true or false, got '" + v.text + "'");
      return;
    case Kind::choice: {
      for (const auto& c : p.choices)
        if (c == v.text) return;
      std::string all;
      for (const auto& c : p.choices) all += (all.empty() ? "" : ", ") + c;
      bad("expected one of {" + all + "}, got '" + v.text + "'");
      return;
    }
    case Kind::count: {
      const auto c = parse_count(v.text);
      if (!c) bad("expected a nonnegative integer, got '" + v.text + "'");
      if (p.range == Range::at_least_one && *c < 1) bad("must be >= 1");
      return;
    }
    case Kind::real: {
      const auto x = parse_number(v.text);
      if (!x) bad("expected a number, got '" + v.text + "'");
      if (p.range == Range::positive && !(*x > 0.0)) bad("must be > 0");
      if (p.range == Range::nonnegative && !(*x >= 0.0)) bad("must be >= 0");
      if (p.range == Range::unit && !(*x >= 0.0 && *x <= 1.0)) bad("must lie in [0, 1]");
      return;
    }
  }
}

inline std::vector<std::pair<std::string, ConfigValue>> resolve_keys(const std::string& source,
                                                                     const std::vector<Param>& schema,
                                                                     ConfigSection given, int default_line) {
  std::vector<std::pair<std::string, ConfigValue>> out;
  for (const auto& p : schema) {
    ConfigValue v{p.def, default_line};
    if (auto it = given.find(p.key); it != given.end()) {
      v = it->second;
      given.erase(it);
    }
    check_param(source, p, v);
    out.emplace_back(p.key, v);
  }
  if (!given.empty()) {
    // Report the earliest stray key.
    auto first = given.begin();
    for (auto it = given.begin(); it != given.end(); ++it)
      if (it->second.line < first->second.line) first = it;
    throw ConfigError(source, first->second.line, "unknown key '" + first->first + "'");
  }
  return out;
}

}  // namespace detail

inline RunConfig resolve(ConfigFile cf) {
  RunConfig rc;
  rc.source = cf.source;
  const auto it = cf.top.find("protocol");
  if (it == cf.top.end()) throw ConfigError(cf.source, 1, "missing 'protocol' key");
  rc.protocol = it->second.text;
  rc.protocol_line = it->second.line;
  cf.top.erase(it);
  const ProtocolSchema* schema = find_schema(rc.protocol);
  if (!schema) throw ConfigError(cf.source, rc.protocol_line, "unknown protocol '" + rc.protocol + "'");
  if (!cf.section.empty() && cf.section != rc.protocol)
    throw ConfigError(cf.source, cf.section_line,
                      "section [" + cf.section + "] does not match protocol '" + rc.protocol + "'");
  rc.top = detail::resolve_keys(cf.source, schema->top, std::move(cf.top), rc.protocol_line);
  rc.params = detail::resolve_keys(cf.source, schema->params, std::move(cf.params),
                                   cf.section.empty() ? rc.protocol_line : cf.section_line);
  return rc;
}

inline RunConfig load_run_config(const fs::path& path) { return resolve(load_config(path)); }

/// Canonical text form: run keys, then the protocol section.
inline std::string echo_config(const RunConfig& rc) {
  std::string s = "protocol = " + rc.protocol + "\n";
  for (const auto& [k, v] : rc.top) s += k + " = " + v.text + "\n";
  s += "\n[" + rc.protocol + "]\n";
  for (const auto& [k, v] : rc.params) s += k + " = " + v.text + "\n";
  return s;
}

//---------------------------------------------------------------------------//
// CSV
//---------------------------------------------------------------------------//

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t index(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorCode::io, "no column '" + std::string(name) + "'");
  }
  [[nodiscard]] bool has(std::string_view name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
  [[nodiscard]] std::vector<double> column(std::string_view name) const { return column(index(name)); }
  [[nodiscard]] std::vector<double> column(std::size_t i) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
      double v = 0.0;
      const std::string& cell = r.at(i);
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) fail(ErrorCode::io, "bad number '" + cell + "'");
      out.push_back(v);
    }
    return out;
  }
};

inline Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  Table t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line)) fail(ErrorCode::io, path.string() + " is empty");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size())
      fail(ErrorCode::io, path.string() + ": row with " + std::to_string(cells.size()) + " cells, header has " +
                              std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

/// Writes via a temporary file and a rename.
inline void write_file(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".part";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
    out << content;
    if (!out) fail(ErrorCode::io, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Column-major numeric table.
inline std::string csv_text(const std::vector<std::string>& header, const std::vector<std::vector<double>>& cols) {
  require(header.size() == cols.size(), ErrorCode::invalid_argument, "header and columns differ");
  std::string s;
  for (std::size_t i = 0; i < header.size(); ++i) s += (i ? "," : "") + header[i];
  s += '\n';
  const std::size_t n = cols.empty() ? 0 : cols.front().size();
  for (const auto& c : cols) require(c.size() == n, ErrorCode::invalid_argument, "ragged columns");
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) s += ',';
      s += format_double(cols[i][r]);
    }
    s += '\n';
  }
  return s;
}

inline void write_csv(const fs::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& cols) {
  write_file(path, csv_text(header, cols));
}

//---------------------------------------------------------------------------//
// State series files: t_us, re_i_j, im_i_j row-major
//---------------------------------------------------------------------------//

inline std::string shape_text(const SpaceShape& s) {
  std::string out;
  for (int d : s.dims()) out += (out.empty() ? "" : "x") + std::to_string(d);
  return out;
}

inline SpaceShape parse_shape(std::string_view text) {
  std::vector<int> dims;
  std::string t(text);
  std::stringstream ss(t);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    const auto c = parse_count(part);
    require(c.has_value(), ErrorCode::io, "bad shape '" + t + "'");
    dims.push_back(static_cast<int>(*c));
  }
  return SpaceShape(std::span<const int>(dims));
}

inline void write_states(const fs::path& path, std::span<const double> times, std::span<const DensityMatrix> states) {
  require(times.size() == states.size(), ErrorCode::invalid_argument, "times and states differ in length");
  std::vector<std::string> header{"t_us"};
  std::vector<std::vector<double>> cols{std::vector<double>(times.begin(), times.end())};
  if (!states.empty()) {
    const auto n = states.front().dim();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const std::string ij = std::to_string(i) + "_" + std::to_string(j);
        header.push_back("re_" + ij);
        header.push_back("im_" + ij);
        std::vector<double> re, im;
        for (const auto& s : states) re.push_back(s(i, j).real()), im.push_back(s(i, j).imag());
        cols.push_back(std::move(re));
        cols.push_back(std::move(im));
      }
  }
  write_csv(path, header, cols);
}

inline StateSeries read_states(const fs::path& path, const SpaceShape& shape) {
  const Table t = read_csv(path);
  const auto n = shape.total();
  require(t.header.size() == static_cast<std::size_t>(1 + 2 * n * n), ErrorCode::io,
          path.string() + " does not hold " + shape_text(shape) + " states");
  StateSeries s;
  s.times = t.column(0);
  std::vector<std::vector<double>> cols;
  for (std::size_t c = 1; c < t.header.size(); ++c) cols.push_back(t.column(c));
  for (std::size_t r = 0; r < s.times.size(); ++r) {
    Matrix m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const std::size_t c = static_cast<std::size_t>(2 * (i * n + j));
        m(i, j) = Complex(cols[c][r], cols[c + 1][r]);
      }
    s.states.emplace_back(Operator(shape, m), DensityMatrix::Unchecked{});
  }
  return s;
}

}  // namespace qtraj::cli
