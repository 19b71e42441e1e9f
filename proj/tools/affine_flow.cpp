// affine_flow: command-line driver for flows, checks and the moving frame.
//
// Exit codes: 0 pass, 1 check failed, 2 usage or config error, 3 numerical failure.

#include "affine/affine.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace affine;

namespace {

constexpr int kPass = 0, kCheckFailed = 1, kConfigError = 2, kNumericalFailure = 3;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool json = false;
};

RunConfig load(const Common& c) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.sim.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + p.string());
  os << text;
}

std::vector<CVec> u_points(const SuiteContext& ctx) { return ctx.u_set(); }

int cmd_flow(const Common& c) {
  const RunConfig cfg = load(c);
  const SuiteContext ctx{model_from_config(cfg), cfg};
  std::vector<double> ts = cfg.t_grid;
  std::sort(ts.begin(), ts.end());
  const auto us = u_points(ctx);
  const auto grid = flow_on_grid(ctx.model.gen, ctx.dims(), ts, us, cfg.tol);
  std::ostringstream os;
  write_flow_csv(os, ctx.dims(), ts, us, grid);
  bool numerical = false;
  for (const auto& row : grid) {
    for (const auto& cell : row) numerical = numerical || !cell.ok();
  }
  if (c.json) std::cout << os.str();
  write_file(out_dir(cfg) / "flow.csv", os.str());
  return numerical ? kNumericalFailure : kPass;
}

int cmd_verify(const Common& c, const std::string& checks, bool all) {
  const RunConfig cfg = load(c);
  std::vector<std::string> names;
  if (all) {
    for (const auto& s : check_registry()) names.push_back(s.name);
  } else {
    std::stringstream ss(checks);
    std::string n;
    while (std::getline(ss, n, ',')) {
      if (!n.empty()) names.push_back(n);
    }
  }
  if (names.empty()) throw ConfigError("verify: give --checks a,b,c or --all");
  for (const auto& n : names) (void)find_check(n);
  const SuiteContext ctx{model_from_config(cfg), cfg};
  const auto reports = run_checks(ctx, names);
  const auto summary = summary_json(ctx, reports);
  const fs::path dir = out_dir(cfg);
  nlohmann::ordered_json bundle;
  bundle["summary"] = summary;
  auto& arr = bundle["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    const auto j = to_json(r);
    write_file(dir / (r.check_name + ".json"), j.dump(2) + "\n");
    arr.push_back(j);
  }
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  if (c.json) {
    std::cout << bundle.dump(2) << "\n";
  } else {
    for (const auto& r : reports) {
      std::cout << (r.passed ? "PASS " : "FAIL ") << r.check_name << " max_violation=" << fmt(r.max_violation)
                << " threshold=" << fmt(r.threshold) << "\n";
      if (!r.passed && !r.witnesses.empty()) {
        const auto& w = r.witnesses.front();
        std::cout << "  witness: " << w.inputs << " | observed " << w.observed << " | expected " << w.expected << "\n";
      }
      for (const auto& f : r.failures) std::cout << "  failure: " << f << "\n";
    }
  }
  return summary["passed"].get<bool>() ? kPass : kCheckFailed;
}

int cmd_frame(const Common& c) {
  const RunConfig cfg = load(c);
  const SuiteContext ctx{model_from_config(cfg), cfg};
  const auto report = find_check("moving_frame").run(ctx);
  const fs::path dir = out_dir(cfg);

  RMat beta = RMat::Zero(ctx.dims().n, ctx.dims().n);
  if (ctx.dims().n > 0) beta = extract_beta(ctx.flow(), ctx.dims(), 0.1, 1e-6).beta;
  const FrameMatrix frame = build_frame(beta, ctx.dims());
  const auto grid = uniform_grid(cfg.frame.t, cfg.frame.grid_step);
  std::vector<Path> raw(cfg.frame.paths_out), transformed(cfg.frame.paths_out);
  const std::uint64_t path_seed = derive_seed(ctx.seed(), 0xF7);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    Stream rng = stream_for(path_seed, i);
    raw[i] = simulate_path(ctx.model.sampler, ctx.x0(), grid, rng);
    transformed[i] = transform_path(raw[i], frame);
  }
  std::ostringstream xs, zs;
  if (!raw.empty()) {
    write_paths_csv(xs, raw, true, "original");
    write_paths_csv(zs, transformed, true, "transformed");
    write_file(dir / "paths_original.csv", xs.str());
    write_file(dir / "paths_transformed.csv", zs.str());
  }
  const auto j = to_json(report);
  write_file(dir / "moving_frame.json", j.dump(2) + "\n");
  if (c.json) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << (report.passed ? "PASS " : "FAIL ") << report.check_name
              << " max_violation=" << fmt(report.max_violation) << "\n";
    for (const auto& [k, v] : report.details) std::cout << "  " << k << " = " << fmt(v) << "\n";
    for (const auto& n : report.notes) std::cout << "  note: " << n << "\n";
    for (const auto& f : report.failures) std::cout << "  failure: " << f << "\n";
  }
  return report.passed ? kPass : kCheckFailed;
}

int cmd_simulate(const Common& c) {
  const RunConfig cfg = load(c);
  const SuiteContext ctx{model_from_config(cfg), cfg};
  const auto paths = simulate(ctx.model, ctx.x0(), cfg.sim.horizon, cfg.sim.step, cfg.paths_or(100), ctx.seed());
  std::ostringstream os;
  write_paths_csv(os, paths, true);
  if (c.json) std::cout << os.str();
  write_file(out_dir(cfg) / "paths.csv", os.str());
  return kPass;
}

int cmd_ecf(const Common& c, const std::string& paths_file) {
  const RunConfig cfg = load(c);
  const SuiteContext ctx{model_from_config(cfg), cfg};
  std::vector<Path> paths;
  if (!paths_file.empty()) {
    std::ifstream is(paths_file);
    if (!is) throw ConfigError("cannot open " + paths_file);
    paths = read_paths_csv(is).paths;
  } else {
    paths = simulate(ctx.model, ctx.x0(), cfg.sim.horizon, cfg.sim.step, cfg.paths_or(10000), ctx.seed());
  }
  std::vector<EcfEstimate> rows;
  for (const auto& u : ctx.u_set()) {
    for (double t : cfg.t_grid) {
      if (t <= paths.front().times.back() + 1e-12) rows.push_back(ecf(paths, t, u));
    }
  }
  std::ostringstream os;
  write_ecf_csv(os, rows);
  if (c.json) std::cout << os.str();
  write_file(out_dir(cfg) / "ecf.csv", os.str());
  return kPass;
}

int cmd_regularity(const Common& c) {
  const RunConfig cfg = load(c);
  const SuiteContext ctx{model_from_config(cfg), cfg};
  std::vector<DerivativeEstimate> rows;
  for (const auto& u : ctx.u_set()) rows.push_back(estimate_FR(ctx.ode(), ctx.dims(), u, default_h_schedule(), cfg.tol));
  std::ostringstream os;
  write_derivatives_csv(os, rows);
  if (c.json) std::cout << os.str();
  write_file(out_dir(cfg) / "derivatives.csv", os.str());
  bool converged = true;
  for (const auto& r : rows) converged = converged && r.converged;
  return converged ? kPass : kNumericalFailure;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Configuration file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Output directory (overrides out.dir)");
  sub->add_option("--seed", c.seed, "Seed (overrides sim.seed)");
  sub->add_flag("--json", c.json, "Write reports or tables to stdout");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transform pairs of affine processes: flows, property checks, moving frame"};
  app.require_subcommand(1);
  Common common;
  std::string checks, paths_file;
  bool all = false;

  auto* flow = app.add_subcommand("flow", "Tabulate (Phi, psi) over grid.t x grid.u");
  add_common(flow, common);
  auto* verify = app.add_subcommand("verify", "Run property checks and write JSON reports");
  add_common(verify, common);
  verify->add_option("--checks", checks, "Comma-separated check names");
  verify->add_flag("--all", all, "Run every registered check");
  auto* frame = app.add_subcommand("frame", "Run the moving-frame pipeline and write transformed paths");
  add_common(frame, common);
  auto* sim = app.add_subcommand("simulate", "Simulate paths to CSV");
  add_common(sim, common);
  auto* ecfc = app.add_subcommand("ecf", "Empirical characteristic functions to CSV");
  add_common(ecfc, common);
  ecfc->add_option("--paths", paths_file, "Read paths from CSV instead of simulating");
  auto* reg = app.add_subcommand("regularity", "Estimate F and R at grid.u to CSV");
  add_common(reg, common);
  auto* list = app.add_subcommand("checks", "List check names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kConfigError;
  }

  try {
    if (*list) {
      for (const auto& s : check_registry()) std::cout << s.name << (s.stochastic ? " (stochastic)" : "") << "\n";
      return kPass;
    }
    if (*flow) return cmd_flow(common);
    if (*verify) return cmd_verify(common, checks, all);
    if (*frame) return cmd_frame(common);
    if (*sim) return cmd_simulate(common);
    if (*ecfc) return cmd_ecf(common, paths_file);
    if (*reg) return cmd_regularity(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericalFailure;
  }
  return kConfigError;
}
