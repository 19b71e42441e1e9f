#pragma once

// Check registry for `verify`: each named check builds its inputs from a
// RunConfig and a catalog model and returns one CheckReport.

#include "affine/config.hpp"
#include "affine/empirical.hpp"
#include "affine/models.hpp"
#include "affine/movingframe.hpp"
#include "affine/parallel.hpp"
#include "affine/regularity.hpp"
#include "affine/report.hpp"
#include "affine/verify.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace affine {

struct SuiteContext {
  AffineModel model;
  RunConfig cfg;

  [[nodiscard]] const Dims& dims() const { return model.dims; }
  [[nodiscard]] FlowSource flow() const { return model_flow(model, cfg.tol); }
  [[nodiscard]] FlowSource ode() const { return model_ode_flow(model, cfg.tol); }

  /// grid.u, or a default set mixing interior, boundary and imaginary points.
  [[nodiscard]] std::vector<CVec> u_set() const {
    if (cfg.u_grid) {
      for (const auto& u : *cfg.u_grid) {
        if (u.size() != dims().d()) {
          throw ConfigError(cfg.source + ": grid.u points must have " + std::to_string(dims().d()) + " components");
        }
        if (!in_U(u, dims(), cfg.tol)) throw ConfigError(cfg.source + ": grid.u point " + fmt(u) + " is outside U");
      }
      return *cfg.u_grid;
    }
    const std::vector<std::pair<double, double>> I_vals{{-0.5, 1.0}, {-1.0, -0.5}, {0.0, 2.0}};
    const std::vector<double> J_vals{0.7, -1.3, 0.4};
    std::vector<CVec> out;
    for (std::size_t r = 0; r < 3; ++r) {
      CVec u(dims().d());
      for (int k = 0; k < dims().m; ++k) u[k] = cplx(I_vals[r].first, I_vals[r].second + 0.3 * k);
      for (int k = 0; k < dims().n; ++k) u[dims().m + k] = cplx(0.0, J_vals[r] - 0.2 * k);
      out.push_back(u);
    }
    return out;
  }

  [[nodiscard]] std::vector<CVec> imaginary_u_set(std::size_t limit) const {
    std::vector<CVec> out;
    for (const auto& u : u_set()) {
      CVec v = u.imag().cast<cplx>() * I_unit;
      if (v.cwiseAbs().maxCoeff() == 0.0) continue;
      out.push_back(v);
      if (out.size() == limit) break;
    }
    return out;
  }

  [[nodiscard]] std::vector<double> positive_times(std::size_t limit) const {
    std::vector<double> out;
    for (double t : cfg.t_grid) {
      if (t > 0.0 && out.size() < limit) out.push_back(t);
    }
    if (out.empty()) throw ConfigError(cfg.source + ": grid.t needs a positive time");
    return out;
  }

  [[nodiscard]] StatePoint x0() const {
    if (cfg.sim.x0) {
      if (cfg.sim.x0->size() != dims().d()) throw ConfigError(cfg.source + ": sim.x0 has wrong length");
      if (!in_D(*cfg.sim.x0, dims())) throw ConfigError(cfg.source + ": sim.x0 is outside D");
      return *cfg.sim.x0;
    }
    StatePoint x(dims().d());
    for (int k = 0; k < dims().d(); ++k) x[k] = k < dims().m ? 0.5 : 0.3;
    return x;
  }

  [[nodiscard]] std::size_t paths() const { return cfg.paths_or(20000); }
  [[nodiscard]] std::uint64_t seed() const { return cfg.require_seed(); }
};

/// Combines sub-reports; the violation is the worst ratio to its own threshold
/// rescaled to `threshold`.
inline CheckReport merge_reports(const std::string& name, const std::vector<CheckReport>& parts, double threshold) {
  CheckReport out;
  out.check_name = name;
  double worst = 0.0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& p = parts[k];
    out.grid_spec += (k ? " | " : "") + p.grid_spec;
    const double ratio = p.threshold > 0 ? p.max_violation / p.threshold
                                         : (p.max_violation > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    worst = std::max(worst, ratio);
    for (const auto& w : p.witnesses) {
      if (!p.passed || out.witnesses.empty()) out.witnesses.push_back(w);
    }
    for (const auto& f : p.failures) out.failures.push_back(f);
    for (const auto& n : p.notes) out.notes.push_back(n);
    for (const auto& [key, v] : p.details) out.details[std::to_string(k) + "." + key] = v;
  }
  out.max_violation = worst * threshold;
  out.threshold = threshold;
  if (out.witnesses.size() > 8) out.witnesses.resize(8);
  out.finalize();
  return out;
}

struct CheckSpec {
  std::string name;
  bool stochastic;
  std::function<CheckReport(const SuiteContext&)> run;
};

inline const std::vector<CheckSpec>& check_registry() {
  static const std::vector<CheckSpec> registry = [] {
    std::vector<CheckSpec> r;
    r.push_back({"semiflow", false, [](const SuiteContext& c) {
                   const auto us = c.u_set();
                   return check_semiflow(c.ode(), c.dims(), c.cfg.t_grid, c.cfg.s_grid, us,
                                         c.cfg.threshold_or("semiflow", 1e-8), c.cfg.tol);
                 }});
    r.push_back({"monotonicity", false, [](const SuiteContext& c) {
                   std::vector<std::pair<CVec, CVec>> pairs;
                   for (const auto& u : c.u_set()) pairs.emplace_back(u, CVec(0.5 * u.real().cast<cplx>()));
                   return check_monotonicity(c.ode(), c.dims(), c.positive_times(8), pairs,
                                             c.cfg.threshold_or("monotonicity", 1e-10), c.cfg.tol);
                 }});
    r.push_back({"property_A", false, [](const SuiteContext& c) {
                   std::vector<CVec> us;
                   for (CVec u : c.u_set()) {
                     for (int k = 0; k < c.dims().m; ++k) {
                       if (u[k].real() > -0.1) u[k] = cplx(-0.1, u[k].imag());
                     }
                     us.push_back(u);
                   }
                   auto rep = check_property_A(c.ode(), c.dims(), c.cfg.t_grid, us, c.cfg.tol);
                   return rep;
                 }});
    r.push_back({"property_B", false, [](const SuiteContext& c) {
                   const double thr = c.cfg.threshold_or("property_B", 1e-8);
                   if (c.dims().n == 0) {
                     CheckReport rep;
                     rep.check_name = "property_B";
                     rep.grid_spec = "n=0";
                     rep.threshold = thr;
                     rep.notes.push_back("J is empty; the check is vacuous");
                     rep.finalize();
                     return rep;
                   }
                   auto ex = extract_beta(c.ode(), c.dims(), 0.1, thr);
                   if (c.model.beta) {
                     const double err = (ex.beta - *c.model.beta).cwiseAbs().maxCoeff();
                     ex.report.details["beta_error"] = err;
                     if (err > 1e-6) {
                       ex.report.max_violation = std::max(ex.report.max_violation, err);
                       ex.report.witnesses.push_back({"known beta", fmt(err), "<= 1e-6"});
                       ex.report.finalize();
                     }
                   } else {
                     ex.report.notes.push_back("model carries no reference beta");
                   }
                   return ex.report;
                 }});
    r.push_back({"linearity_J", false, [](const SuiteContext& c) {
                   return check_linearity(c.flow(), c.dims(), c.positive_times(3), 3.0, 30,
                                          c.cfg.threshold_or("linearity_J", 1e-8), 1);
                 }});
    r.push_back({"posdef", false, [](const SuiteContext& c) {
                   const double thr = c.cfg.threshold_or("posdef", 1e-10);
                   const auto pairs = random_probe_pairs(c.dims().d(), 50, 2.0, 2);
                   std::vector<CheckReport> parts;
                   for (double t : c.positive_times(2)) {
                     auto rep = posdef_certificate(flow_theta(c.flow(), t, c.x0()), pairs, thr);
                     rep.grid_spec = "flow t=" + fmt(t) + " " + rep.grid_spec;
                     parts.push_back(rep);
                   }
                   if (c.cfg.sim.seed) {
                     const double t = c.positive_times(1).front();
                     auto xs = sample_terminal(c.model.sampler, c.x0(), t, std::min<std::size_t>(c.paths(), 5000),
                                               derive_seed(c.seed(), 0x9d));
                     auto rep = posdef_certificate(empirical_theta(std::move(xs)), pairs, thr);
                     rep.grid_spec = "empirical t=" + fmt(t) + " " + rep.grid_spec;
                     parts.push_back(rep);
                   }
                   auto out = merge_reports("posdef", parts, thr);
                   if (!c.cfg.sim.seed) out.notes.push_back("no sim.seed: empirical CF not probed");
                   return out;
                 }});
    r.push_back({"feller_decay", false, [](const SuiteContext& c) {
                   const Dims& dims = c.dims();
                   const double thr = c.cfg.threshold_or("feller_decay", 0.05);
                   TestFunction h;
                   h.u_I = CVec(dims.m);
                   for (int k = 0; k < dims.m; ++k) h.u_I[k] = cplx(-0.5, 0.3);
                   h.center = RVec::Constant(dims.n, 0.5);
                   h.half_width = RVec::Constant(dims.n, 1.0);
                   h.nodes_per_dim = dims.n <= 1 ? 201 : 41;
                   std::vector<CheckReport> parts;
                   for (double t : c.positive_times(2)) {
                     for (int axis = 0; axis < dims.d(); ++axis) {
                       RVec dir = RVec::Zero(dims.d());
                       dir[axis] = 1.0;
                       const auto ray = make_ray(RVec::Zero(dims.d()), dir, 40.0, 41);
                       parts.push_back(feller_decay(c.model, h, t, ray, thr, c.cfg.tol));
                     }
                   }
                   return merge_reports("feller_decay", parts, thr);
                 }});
    r.push_back({"affine_factorization", true, [](const SuiteContext& c) {
                   const Dims& dims = c.dims();
                   const StatePoint x = c.x0();
                   StatePoint xi(dims.d());
                   for (int k = 0; k < dims.d(); ++k) xi[k] = k < dims.m ? 1.5 : -0.8;
                   std::vector<FactorizationProbe> probes;
                   const auto us = c.u_set();
                   for (double t : c.positive_times(2)) {
                     for (std::size_t j = 0; j < std::min<std::size_t>(2, us.size()); ++j) probes.push_back({t, us[j], x, xi});
                   }
                   return affine_factorization_test(c.model.sampler, probes, c.paths(), c.seed(),
                                                    c.cfg.threshold_or("affine_factorization", 3.0));
                 }});
    r.push_back({"recovery", true, [](const SuiteContext& c) {
                   auto us = c.u_set();
                   if (us.size() > 2) us.resize(2);
                   return check_recovery(c.model.sampler, c.flow(), c.positive_times(4), us, c.paths(), c.seed(),
                                         c.cfg.threshold_or("recovery", 3.0));
                 }});
    r.push_back({"semihomogeneity", true, [](const SuiteContext& c) {
                   const double thr = c.cfg.threshold_or("semihomogeneity", 3.0);
                   if (c.dims().n == 0) {
                     CheckReport rep;
                     rep.check_name = "semihomogeneity";
                     rep.grid_spec = "n=0";
                     rep.threshold = thr;
                     rep.notes.push_back("J is empty; the check is vacuous");
                     rep.finalize();
                     return rep;
                   }
                   StatePoint x = c.x0();
                   for (int k = c.dims().m; k < c.dims().d(); ++k) x[k] += c.cfg.frame.j_shift;
                   std::vector<CheckReport> parts;
                   const auto us = c.imaginary_u_set(2);
                   const auto ts = c.positive_times(2);
                   std::uint64_t tag = 0;
                   for (double t : ts) {
                     for (const auto& u : us) {
                       parts.push_back(semihomogeneity_test(c.model.sampler, t, u, x, c.paths(),
                                                            derive_seed(c.seed(), tag++), thr));
                     }
                   }
                   return merge_reports("semihomogeneity", parts, thr);
                 }});
    r.push_back({"regularity_closed_loop", false, [](const SuiteContext& c) {
                   const Dims& dims = c.dims();
                   std::vector<CVec> us = c.u_set();
                   Stream rng(derive_seed(0, 0xF2));
                   for (int k = 0; k < 20; ++k) {
                     CVec u(dims.d());
                     for (int i = 0; i < dims.m; ++i) u[i] = cplx(-2.0 * rng.uniform(), 4.0 * rng.uniform() - 2.0);
                     for (int i = dims.m; i < dims.d(); ++i) u[i] = cplx(0.0, 4.0 * rng.uniform() - 2.0);
                     us.push_back(u);
                   }
                   return check_closed_loop(c.ode(), c.model.gen, dims, us,
                                            c.cfg.threshold_or("regularity_closed_loop", 1e-6),
                                            default_h_schedule(), c.cfg.tol);
                 }});
    r.push_back({"riccati_consistency", false, [](const SuiteContext& c) {
                   const double thr = c.cfg.threshold_or("riccati_consistency", 1e-8);
                   const double t = *std::max_element(c.cfg.t_grid.begin(), c.cfg.t_grid.end());
                   std::vector<CheckReport> parts;
                   for (const auto& u : c.u_set()) {
                     parts.push_back(riccati_consistency(c.ode(), c.model.gen, c.dims(), t, u, thr, c.cfg.tol));
                   }
                   return merge_reports("riccati_consistency", parts, thr);
                 }});
    r.push_back({"regularity_empirical", true, [](const SuiteContext& c) {
                   auto us = c.u_set();
                   if (us.size() > 2) us.resize(2);
                   return check_empirical_FR(c.model.sampler, c.model.gen, us, c.paths(), c.seed(),
                                             c.cfg.threshold_or("regularity_empirical", 5.0));
                 }});
    r.push_back({"moving_frame", true, [](const SuiteContext& c) {
                   FrameOptions opt;
                   opt.grid_step = c.cfg.frame.grid_step;
                   opt.N_schedule = c.cfg.frame.N;
                   opt.j_shift = c.cfg.frame.j_shift;
                   opt.z_threshold = c.cfg.threshold_or("moving_frame", 3.0);
                   return frame_pipeline(c.model, c.cfg.frame.t, c.imaginary_u_set(2), c.x0(), c.paths(), c.seed(),
                                         opt, c.cfg.tol);
                 }});
    std::sort(r.begin(), r.end(), [](const CheckSpec& a, const CheckSpec& b) { return a.name < b.name; });
    return r;
  }();
  return registry;
}

inline const CheckSpec& find_check(const std::string& name) {
  for (const auto& c : check_registry()) {
    if (c.name == name) return c;
  }
  throw ConfigError("unknown check '" + name + "'");
}

/// Runs the named checks concurrently; reports are returned sorted by name.
/// Errors outside node evaluation become failed reports.
inline std::vector<CheckReport> run_checks(const SuiteContext& ctx, std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  std::vector<const CheckSpec*> specs;
  for (const auto& n : names) specs.push_back(&find_check(n));
  for (const auto* s : specs) {
    if (s->stochastic) (void)ctx.seed();
  }
  return parallel_map<CheckReport>(specs.size(), [&](std::size_t k) {
    try {
      return specs[k]->run(ctx);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      CheckReport rep;
      rep.check_name = specs[k]->name;
      rep.failures.push_back(ex.what());
      rep.finalize();
      return rep;
    }
  });
}

inline nlohmann::ordered_json summary_json(const SuiteContext& ctx, const std::vector<CheckReport>& reports) {
  nlohmann::ordered_json s;
  s["model"] = ctx.model.name;
  s["seed"] = ctx.cfg.sim.seed ? nlohmann::ordered_json(*ctx.cfg.sim.seed) : nlohmann::ordered_json(nullptr);
  s["paths"] = ctx.paths();
  bool all = true;
  auto& arr = s["checks"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    all = all && r.passed;
    arr.push_back({{"check_name", r.check_name},
                   {"passed", r.passed},
                   {"max_violation", json_number(r.max_violation)},
                   {"threshold", json_number(r.threshold)}});
  }
  s["passed"] = all;
  return s;
}

}  // namespace affine
