#pragma once

// Run configuration: line-oriented `key = value` with dotted sections.
//
//   model.name = heston_like      # catalog model; other model.* keys are its parameters
//   model.lambda = 1
//   grid.t = 0, 0.5, 1            # list, or a:b:n for n evenly spaced points
//   grid.u = -1+2i, 0.5i; -0.2, -i
//   sim.seed = 42
//
// Comments start with '#'. Unknown or repeated keys are errors reported with
// line and column.

#include "affine/core.hpp"
#include "affine/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace affine {

struct SimConfig {
  std::optional<std::size_t> paths;
  std::optional<std::uint64_t> seed;
  double step = 0.01;
  double horizon = 1.0;
  std::optional<RVec> x0;
};

struct FrameConfig {
  double t = 0.5;
  double grid_step = 2e-3;
  std::vector<int> N{64, 128, 256};
  double j_shift = 2.0;
  std::size_t paths_out = 10;
};

struct RunConfig {
  std::string model_name;
  ParamMap model_params;
  std::vector<double> t_grid{0.0, 0.25, 0.5, 1.0, 2.0};
  std::vector<double> s_grid{0.0, 0.5, 1.0};
  std::optional<std::vector<CVec>> u_grid;
  Tolerances tol;
  SimConfig sim;
  FrameConfig frame;
  /// check name -> threshold override.
  std::map<std::string, double> thresholds;
  std::string out_dir = "out";
  std::string source = "<config>";

  [[nodiscard]] std::uint64_t require_seed() const {
    if (!sim.seed) throw ConfigError(source + ": sim.seed is required for stochastic commands");
    return *sim.seed;
  }
  [[nodiscard]] std::size_t paths_or(std::size_t fallback) const { return sim.paths.value_or(fallback); }
  [[nodiscard]] double threshold_or(const std::string& check, double fallback) const {
    const auto it = thresholds.find(check);
    return it == thresholds.end() ? fallback : it->second;
  }
};

/// Check names accepted under check.<name>.threshold.
inline const std::vector<std::string>& known_check_names() {
  static const std::vector<std::string> names{
      "affine_factorization", "feller_decay",  "linearity_J",    "monotonicity",
      "moving_frame",         "posdef",        "property_A",     "property_B",
      "recovery",             "regularity_closed_loop", "regularity_empirical", "riccati_consistency",
      "semiflow",             "semihomogeneity"};
  return names;
}

namespace detail {

struct ConfigCursor {
  std::string source;
  int line;
  int column;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + msg);
  }
};

inline std::string strip(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

inline double parse_real(const std::string& text, const ConfigCursor& at) {
  const std::string s = strip(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || !std::isfinite(v)) at.fail("expected a finite number, found '" + s + "'");
  return v;
}

inline std::uint64_t parse_count(const std::string& text, const ConfigCursor& at) {
  const std::string s = strip(text);
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    at.fail("expected a nonnegative integer, found '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    at.fail("integer out of range: '" + s + "'");
  }
}

/// a+bi, a-bi, bi, i, -i, a.
inline cplx parse_complex(const std::string& text, const ConfigCursor& at) {
  std::string s;
  for (char c : text) {
    if (c != ' ' && c != '\t') s += c;
  }
  if (s.empty()) at.fail("expected a complex number, found nothing");
  if (s.back() != 'i') return {parse_real(s, at), 0.0};
  const std::string body = s.substr(0, s.size() - 1);
  std::size_t split = std::string::npos;
  for (std::size_t k = body.size(); k-- > 1;) {
    if ((body[k] == '+' || body[k] == '-') && body[k - 1] != 'e' && body[k - 1] != 'E') {
      split = k;
      break;
    }
  }
  auto imag_of = [&](const std::string& t) {
    if (t.empty() || t == "+") return 1.0;
    if (t == "-") return -1.0;
    return parse_real(t, at);
  };
  if (split == std::string::npos) return {0.0, imag_of(body)};
  return {parse_real(body.substr(0, split), at), imag_of(body.substr(split))};
}

inline std::vector<double> parse_real_list(const std::string& text, const ConfigCursor& at) {
  const std::string s = strip(text);
  std::vector<double> out;
  if (s.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string p;
    while (std::getline(ss, p, ':')) parts.push_back(p);
    if (parts.size() != 3) at.fail("range must be a:b:n");
    const double a = parse_real(parts[0], at), b = parse_real(parts[1], at);
    const auto n = parse_count(parts[2], at);
    if (n < 1) at.fail("range needs n >= 1");
    for (std::uint64_t k = 0; k < n; ++k) out.push_back(n == 1 ? a : a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1));
    return out;
  }
  std::stringstream ss(s);
  std::string p;
  while (std::getline(ss, p, ',')) out.push_back(parse_real(p, at));
  if (out.empty()) at.fail("empty list");
  return out;
}

inline std::vector<CVec> parse_point_list(const std::string& text, const ConfigCursor& at) {
  std::vector<CVec> out;
  std::stringstream ss(text);
  std::string point;
  while (std::getline(ss, point, ';')) {
    std::vector<cplx> comps;
    std::stringstream ps(point);
    std::string c;
    while (std::getline(ps, c, ',')) comps.push_back(parse_complex(c, at));
    CVec v(static_cast<Eigen::Index>(comps.size()));
    for (std::size_t k = 0; k < comps.size(); ++k) v[static_cast<Eigen::Index>(k)] = comps[k];
    if (!out.empty() && v.size() != out.front().size()) at.fail("points in a list must have equal length");
    out.push_back(v);
  }
  if (out.empty()) at.fail("empty point list");
  return out;
}

}  // namespace detail

inline RunConfig parse_config(std::istream& is, const std::string& source = "<config>") {
  RunConfig cfg;
  cfg.source = source;
  static const std::regex key_re(R"(^[a-z][a-z0-9_]*(\.[a-zA-Z0-9_]+)+$)");
  std::set<std::string> seen;
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = raw;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (detail::strip(line).empty()) continue;
    const int key_col = static_cast<int>(line.find_first_not_of(" \t")) + 1;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      detail::ConfigCursor{source, lineno, static_cast<int>(detail::strip(line).size()) + key_col}.fail("expected '='");
    }
    const std::string key = detail::strip(line.substr(0, eq));
    const std::string value = detail::strip(line.substr(eq + 1));
    const auto vpos = line.find_first_not_of(" \t", eq + 1);
    const int val_col = vpos == std::string::npos ? static_cast<int>(eq) + 2 : static_cast<int>(vpos) + 1;
    const detail::ConfigCursor at_key{source, lineno, key_col};
    const detail::ConfigCursor at{source, lineno, val_col};
    if (!std::regex_match(key, key_re)) at_key.fail("malformed key '" + key + "'");
    if (!seen.insert(key).second) at_key.fail("duplicate key '" + key + "'");
    if (value.empty()) at.fail("missing value for '" + key + "'");

    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    const std::string rest = key.substr(dot + 1);
    if (section == "model") {
      if (rest == "name") cfg.model_name = value;
      else cfg.model_params[rest] = value;
    } else if (key == "grid.t") {
      cfg.t_grid = detail::parse_real_list(value, at);
    } else if (key == "grid.s") {
      cfg.s_grid = detail::parse_real_list(value, at);
    } else if (key == "grid.u") {
      cfg.u_grid = detail::parse_point_list(value, at);
    } else if (key == "tol.ode_rel") {
      cfg.tol.ode_rel = detail::parse_real(value, at);
    } else if (key == "tol.ode_abs") {
      cfg.tol.ode_abs = detail::parse_real(value, at);
    } else if (key == "tol.region_eps") {
      cfg.tol.region_eps = detail::parse_real(value, at);
    } else if (key == "tol.q_zero_eps") {
      cfg.tol.q_zero_eps = detail::parse_real(value, at);
    } else if (key == "sim.paths") {
      cfg.sim.paths = detail::parse_count(value, at);
    } else if (key == "sim.seed") {
      cfg.sim.seed = detail::parse_count(value, at);
    } else if (key == "sim.step") {
      cfg.sim.step = detail::parse_real(value, at);
    } else if (key == "sim.horizon") {
      cfg.sim.horizon = detail::parse_real(value, at);
    } else if (key == "sim.x0") {
      const auto xs = detail::parse_real_list(value, at);
      cfg.sim.x0 = Eigen::Map<const RVec>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    } else if (key == "frame.t") {
      cfg.frame.t = detail::parse_real(value, at);
    } else if (key == "frame.grid_step") {
      cfg.frame.grid_step = detail::parse_real(value, at);
    } else if (key == "frame.N") {
      cfg.frame.N.clear();
      for (double v : detail::parse_real_list(value, at)) {
        if (v < 1 || v != std::floor(v)) at.fail("frame.N entries must be positive integers");
        cfg.frame.N.push_back(static_cast<int>(v));
      }
    } else if (key == "frame.j_shift") {
      cfg.frame.j_shift = detail::parse_real(value, at);
    } else if (key == "frame.paths_out") {
      cfg.frame.paths_out = detail::parse_count(value, at);
    } else if (key == "out.dir") {
      cfg.out_dir = value;
    } else if (section == "check") {
      const auto dot2 = rest.find('.');
      const std::string name = rest.substr(0, dot2);
      const std::string field = dot2 == std::string::npos ? "" : rest.substr(dot2 + 1);
      const auto& names = known_check_names();
      if (std::find(names.begin(), names.end(), name) == names.end()) at_key.fail("unknown check '" + name + "'");
      if (field != "threshold") at_key.fail("unknown key '" + key + "' (only check.<name>.threshold)");
      cfg.thresholds[name] = detail::parse_real(value, at);
    } else {
      at_key.fail("unknown key '" + key + "'");
    }
  }
  if (cfg.model_name.empty()) throw ConfigError(source + ": model.name is required");
  try {
    cfg.tol.validate();
  } catch (const std::exception& ex) {
    throw ConfigError(source + ": " + ex.what());
  }
  return cfg;
}

inline RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>") {
  std::istringstream is(text);
  return parse_config(is, source);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot open");
  return parse_config(is, path);
}

/// Model from the config; parameter errors become ConfigError.
inline AffineModel model_from_config(const RunConfig& cfg) {
  try {
    return make_model(cfg.model_name, cfg.model_params);
  } catch (const ConfigError& ex) {
    throw ConfigError(cfg.source + ": " + ex.what());
  } catch (const Error& ex) {
    throw ConfigError(cfg.source + ": invalid model parameters: " + ex.what());
  }
}

}  // namespace affine
