#pragma once

// CSV tables: paths (wide or long format), flow grids, ECF estimates and
// derivative estimates. Numbers use the round-trip format of fmt().

#include "affine/core.hpp"
#include "affine/empirical.hpp"
#include "affine/flow.hpp"
#include "affine/models.hpp"
#include "affine/regularity.hpp"
#include "affine/report.hpp"

#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace affine {

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_cell(const std::string& cell, std::size_t line) {
  const std::string c = trim(cell);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(c, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (c.empty() || used != c.size()) {
    throw ConfigError("csv line " + std::to_string(line) + ": not a number: '" + c + "'");
  }
  return v;
}

inline void complex_header(std::ostream& os, const std::string& prefix, int d) {
  for (int k = 1; k <= d; ++k) os << ",re_" << prefix << k;
  for (int k = 1; k <= d; ++k) os << ",im_" << prefix << k;
}

inline void complex_cells(std::ostream& os, const CVec& v) {
  for (Eigen::Index k = 0; k < v.size(); ++k) os << ',' << fmt(v[k].real());
  for (Eigen::Index k = 0; k < v.size(); ++k) os << ',' << fmt(v[k].imag());
}

}  // namespace detail

/// Header `t,x1..xd` (wide, single path) or `path_id,t,x1..xd` (long).
/// `frame` adds a `# frame=<value>` comment line.
inline void write_paths_csv(std::ostream& os, const std::vector<Path>& paths, bool long_format = true,
                            const std::string& frame = "") {
  if (paths.empty()) throw DomainError("write_paths_csv: no paths");
  if (!long_format && paths.size() != 1) throw DomainError("write_paths_csv: wide format holds one path");
  const auto d = paths.front().values.empty() ? 0 : paths.front().values.front().size();
  if (!frame.empty()) os << "# frame=" << frame << '\n';
  if (long_format) os << "path_id,";
  os << 't';
  for (Eigen::Index k = 1; k <= d; ++k) os << ",x" << k;
  os << '\n';
  for (std::size_t p = 0; p < paths.size(); ++p) {
    for (std::size_t i = 0; i < paths[p].size(); ++i) {
      if (long_format) os << p << ',';
      os << fmt(paths[p].times[i]);
      for (Eigen::Index k = 0; k < d; ++k) os << ',' << fmt(paths[p].values[i][k]);
      os << '\n';
    }
  }
}

struct PathTable {
  std::vector<Path> paths;
  /// Values of `# key=value` comment lines.
  std::map<std::string, std::string> meta;
};

/// Reads either layout; rows of a path must be contiguous and time-sorted.
inline PathTable read_paths_csv(std::istream& is) {
  PathTable table;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string s = detail::trim(line);
    if (s.empty()) continue;
    if (s[0] == '#') {
      const auto body = detail::trim(s.substr(1));
      const auto eq = body.find('=');
      if (eq != std::string::npos) table.meta[detail::trim(body.substr(0, eq))] = detail::trim(body.substr(eq + 1));
      continue;
    }
    if (header.empty()) {
      for (auto& h : detail::split(s, ',')) header.push_back(detail::trim(h));
      const bool ok = (header[0] == "t") || (header.size() > 1 && header[0] == "path_id" && header[1] == "t");
      if (!ok) throw ConfigError("csv line " + std::to_string(lineno) + ": expected header t,x1,... or path_id,t,x1,...");
      continue;
    }
    const auto cells = detail::split(s, ',');
    if (cells.size() != header.size()) {
      throw ConfigError("csv line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                        " columns, found " + std::to_string(cells.size()));
    }
    const bool long_format = header[0] == "path_id";
    const std::size_t offset = long_format ? 2 : 1;
    const std::size_t id = long_format ? static_cast<std::size_t>(detail::parse_cell(cells[0], lineno)) : 0;
    if (id > table.paths.size() || (id + 1 < table.paths.size())) {
      throw ConfigError("csv line " + std::to_string(lineno) + ": path rows must be contiguous and numbered from 0");
    }
    if (id == table.paths.size()) table.paths.emplace_back();
    Path& p = table.paths[id];
    const double t = detail::parse_cell(cells[offset - 1], lineno);
    if (!p.times.empty() && t < p.times.back()) {
      throw ConfigError("csv line " + std::to_string(lineno) + ": times must be nondecreasing");
    }
    RVec x(static_cast<Eigen::Index>(cells.size() - offset));
    for (std::size_t k = offset; k < cells.size(); ++k) x[static_cast<Eigen::Index>(k - offset)] = detail::parse_cell(cells[k], lineno);
    p.times.push_back(t);
    p.values.push_back(x);
  }
  if (header.empty()) throw ConfigError("csv: missing header");
  return table;
}

/// One row per (t, u): t, u components, Phi, log Phi, psi, in_Q, error.
inline void write_flow_csv(std::ostream& os, const Dims& dims, const std::vector<double>& t_grid,
                           const std::vector<CVec>& u_grid, const std::vector<std::vector<FlowCell>>& grid) {
  const int d = dims.d();
  os << "t";
  detail::complex_header(os, "u", d);
  os << ",re_phi,im_phi,re_log_phi,im_log_phi";
  detail::complex_header(os, "psi", d);
  os << ",in_Q,error\n";
  for (std::size_t j = 0; j < u_grid.size(); ++j) {
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
      const auto& cell = grid[i][j];
      os << fmt(t_grid[i]);
      detail::complex_cells(os, u_grid[j]);
      if (cell.ok()) {
        const auto& e = *cell.value;
        os << ',' << fmt(e.phi.real()) << ',' << fmt(e.phi.imag()) << ',' << fmt(e.log_phi.real()) << ','
           << fmt(e.log_phi.imag());
        detail::complex_cells(os, e.psi);
        os << ',' << (e.in_Q ? "true" : "false") << ",\n";
      } else {
        for (int k = 0; k < 4 + 2 * d; ++k) os << ",nan";
        std::string msg = cell.error;
        for (char& c : msg) {
          if (c == ',' || c == '\n') c = ';';
        }
        os << ",false," << msg << '\n';
      }
    }
  }
}

/// Header `t,re_u...,im_u...,re_g,im_g,stderr,n`.
inline void write_ecf_csv(std::ostream& os, const std::vector<EcfEstimate>& rows) {
  if (rows.empty()) throw DomainError("write_ecf_csv: no rows");
  const int d = static_cast<int>(rows.front().u.size());
  os << "t";
  detail::complex_header(os, "u", d);
  os << ",re_g,im_g,stderr,n\n";
  for (const auto& e : rows) {
    os << fmt(e.t);
    detail::complex_cells(os, e.u);
    os << ',' << fmt(e.value.real()) << ',' << fmt(e.value.imag()) << ',' << fmt(e.standard_error) << ','
       << e.n_samples << '\n';
  }
}

inline void write_derivatives_csv(std::ostream& os, const std::vector<DerivativeEstimate>& rows) {
  if (rows.empty()) throw DomainError("write_derivatives_csv: no rows");
  const int d = static_cast<int>(rows.front().u.size());
  os << "u_index";
  detail::complex_header(os, "u", d);
  os << ",re_F,im_F";
  detail::complex_header(os, "R", d);
  os << ",extrapolation_order,error_estimate,converged,steps\n";
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto& e = rows[j];
    os << j;
    detail::complex_cells(os, e.u);
    os << ',' << fmt(e.F_hat.real()) << ',' << fmt(e.F_hat.imag());
    detail::complex_cells(os, e.R_hat);
    os << ',' << e.extrapolation_order << ',' << fmt(e.error_estimate) << ',' << (e.converged ? "true" : "false")
       << ',';
    for (std::size_t k = 0; k < e.step_schedule.size(); ++k) os << (k ? ";" : "") << fmt(e.step_schedule[k]);
    os << '\n';
  }
}

}  // namespace affine
