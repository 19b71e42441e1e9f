#pragma once

// Monte Carlo side: empirical characteristic functions, the affine
// factorization test, recovery of (Phi, psi) from simulated paths and the
// semi-homogeneity test.

#include "affine/core.hpp"
#include "affine/models.hpp"
#include "affine/parallel.hpp"
#include "affine/report.hpp"
#include "affine/rng.hpp"

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace affine {

/// Estimate of g(t,u,x0) = E^{x0}[exp(<u, X_t>)].
struct EcfEstimate {
  double t = 0.0;
  CVec u;
  StatePoint x0;
  cplx value{0.0, 0.0};
  double standard_error = 0.0;
  std::size_t n_samples = 0;
};

namespace detail {

/// Pairwise summation; the result depends only on the order of `xs`.
template <typename T>
T pairwise_sum(std::span<const T> xs) {
  if (xs.size() <= 16) {
    T acc{};
    for (const auto& x : xs) acc += x;
    return acc;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double z_score(double deviation, double sigma) { return deviation / std::max(sigma, 1e-12); }

}  // namespace detail

/// Mean and standard error of precomputed values f_u(X_t^{(i)}).
inline EcfEstimate ecf_from_values(std::span<const cplx> values) {
  if (values.empty()) throw DomainError("ecf: empty sample");
  EcfEstimate e;
  e.n_samples = values.size();
  const double n = static_cast<double>(values.size());
  e.value = detail::pairwise_sum<cplx>(values) / n;
  if (values.size() > 1) {
    std::vector<double> sq(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) sq[i] = std::norm(values[i] - e.value);
    const double var = detail::pairwise_sum<double>(sq) / (n - 1.0);
    e.standard_error = std::sqrt(var / n);
  }
  return e;
}

/// ECF over terminal draws X_t^{(i)}.
inline EcfEstimate ecf_from_samples(std::span<const RVec> samples, double t, const CVec& u,
                                    const StatePoint& x0) {
  if (samples.empty()) throw DomainError("ecf: empty sample");
  std::vector<cplx> f(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) f[i] = exp_functional(u, samples[i]);
  EcfEstimate e = ecf_from_values(f);
  e.t = t;
  e.u = u;
  e.x0 = x0;
  return e;
}

/// ECF from paths started at a common x0, using the grid value at the
/// largest grid time <= t.
inline EcfEstimate ecf(std::span<const Path> paths, double t, const CVec& u) {
  if (paths.empty()) throw DomainError("ecf: empty path set");
  const Path& first = paths.front();
  if (first.empty()) throw DomainError("ecf: empty path");
  if (t > first.times.back() + 1e-12 * std::max(1.0, t)) throw DomainError("ecf: t beyond the horizon");
  if (u.size() != first.values.front().size()) throw DimensionError("ecf: u has wrong length");
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    if (!std::isfinite(u[k].real()) || !std::isfinite(u[k].imag())) throw DomainError("ecf: non-finite u");
  }
  std::vector<RVec> xs(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) xs[i] = paths[i].at(t);
  return ecf_from_samples(xs, t, u, first.values.front());
}

/// ECF from fresh terminal draws of the model's sampler.
inline EcfEstimate ecf_from_model(const ProcessSampler& sampler, const StatePoint& x0, double t,
                                  const CVec& u, std::size_t n_paths, std::uint64_t seed) {
  require_length(u.size(), sampler.dims, "ecf_from_model");
  const auto xs = sample_terminal(sampler, x0, t, n_paths, seed);
  return ecf_from_samples(xs, t, u, x0);
}

// Affine factorization -------------------------------------------------------------

/// One probe (t, u, x, xi) of g(x) g(xi) = g(x+xi) g(0).
struct FactorizationProbe {
  double t;
  CVec u;
  StatePoint x;
  StatePoint xi;
};

/// z-score of |g(x)g(xi) - g(x+xi)g(0)| against its propagated standard
/// error, each ECF from an independent path set.
inline CheckReport affine_factorization_test(const ProcessSampler& sampler,
                                             std::span<const FactorizationProbe> probes,
                                             std::size_t n_paths, std::uint64_t seed,
                                             double z_threshold = 3.0) {
  CheckReport report;
  report.check_name = "affine_factorization";
  report.grid_spec = "probes=" + std::to_string(probes.size()) + " paths=" + std::to_string(n_paths);
  ViolationTracker tracker(z_threshold);
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const auto& pr = probes[p];
    const StatePoint zero = StatePoint::Zero(sampler.dims.d());
    const StatePoint sum = pr.x + pr.xi;
    for (const auto* pt : {&pr.x, &pr.xi, &sum}) require_in_D(*pt, sampler.dims, "affine_factorization_test");
    const std::uint64_t base = derive_seed(seed, p);
    try {
      const auto gx = ecf_from_model(sampler, pr.x, pr.t, pr.u, n_paths, derive_seed(base, 1));
      const auto gxi = ecf_from_model(sampler, pr.xi, pr.t, pr.u, n_paths, derive_seed(base, 2));
      const auto gs = ecf_from_model(sampler, sum, pr.t, pr.u, n_paths, derive_seed(base, 3));
      const auto g0 = ecf_from_model(sampler, zero, pr.t, pr.u, n_paths, derive_seed(base, 4));
      const cplx lhs = gx.value * gxi.value, rhs = gs.value * g0.value;
      const double sigma = std::sqrt(std::norm(gxi.value) * gx.standard_error * gx.standard_error +
                                     std::norm(gx.value) * gxi.standard_error * gxi.standard_error +
                                     std::norm(g0.value) * gs.standard_error * gs.standard_error +
                                     std::norm(gs.value) * g0.standard_error * g0.standard_error);
      const double z = detail::z_score(std::abs(lhs - rhs), sigma);
      tracker.observe(z, [&] {
        return Witness{"t=" + fmt(pr.t) + " u=" + fmt(pr.u) + " x=" + fmt(pr.x) + " xi=" + fmt(pr.xi),
                       "g(x)g(xi)=" + fmt(lhs) + " g(x+xi)g(0)=" + fmt(rhs) + " sigma=" + fmt(sigma),
                       "z <= " + fmt(z_threshold)};
      });
    } catch (const std::exception& ex) {
      report.failures.push_back("probe " + std::to_string(p) + ": " + ex.what());
    }
  }
  report.details["seed"] = static_cast<double>(seed);
  report.details["n_paths"] = static_cast<double>(n_paths);
  tracker.fill(report);
  return report;
}

inline CheckReport affine_factorization_test(const ProcessSampler& sampler, double t, const CVec& u,
                                             const StatePoint& x, const StatePoint& xi,
                                             std::size_t n_paths, std::uint64_t seed) {
  const FactorizationProbe probe{t, u, x, xi};
  return affine_factorization_test(sampler, std::span<const FactorizationProbe>(&probe, 1), n_paths, seed);
}

inline CheckReport affine_factorization_test(const AffineModel& model, double t, const CVec& u,
                                             const StatePoint& x, const StatePoint& xi,
                                             std::size_t n_paths, std::uint64_t seed) {
  return affine_factorization_test(model.sampler, t, u, x, xi, n_paths, seed);
}

// Recovery of (Phi, psi) -----------------------------------------------------------

/// Recovered value with delta-method standard errors.
struct RecoveredEvaluation {
  FlowEvaluation eval;
  double phi_stderr = 0.0;
  RVec psi_stderr;
};

struct RecoveryOptions {
  /// Also estimate g(t,u,2e_k) and report the consistency of 2 psi_k.
  bool overdetermined = false;
  double q_sigma = 5.0;
};

namespace detail {

/// Logarithm of z on the branch nearest `reference`.
inline cplx log_near(cplx z, cplx reference) {
  cplx l = std::log(z);
  const double two_pi = 2.0 * std::numbers::pi;
  l += cplx(0.0, two_pi * std::round((reference.imag() - l.imag()) / two_pi));
  return l;
}

inline std::vector<double> with_origin(std::span<const double> t_grid) {
  std::vector<double> grid{0.0};
  for (double t : t_grid) {
    if (t < 0.0) throw DomainError("recover_phi_psi: negative time");
    if (t > grid.back()) grid.push_back(t);
    else if (t < grid.back()) throw DomainError("recover_phi_psi: t_grid must be sorted");
  }
  return grid;
}

}  // namespace detail

/// Phi^(t,u) = g^(t,u,0) and psi^_k = log(g^(t,u,e_k)/Phi^) continued along
/// t_grid from psi(0,u) = u. Each start point uses its own path set.
inline std::vector<RecoveredEvaluation> recover_phi_psi(const ProcessSampler& sampler,
                                                        std::span<const double> t_grid, const CVec& u,
                                                        std::size_t n_paths, std::uint64_t seed,
                                                        const RecoveryOptions& opt = {},
                                                        std::map<std::string, double>* diagnostics = nullptr,
                                                        const Tolerances& tol = {}) {
  const Dims& dims = sampler.dims;
  require_length(u.size(), dims, "recover_phi_psi");
  if (!in_U(u, dims, tol)) throw DomainError("recover_phi_psi: u is outside U");
  const int d = dims.d();
  const auto grid = detail::with_origin(t_grid);

  auto paths_from = [&](const StatePoint& x0, std::uint64_t s) {
    std::vector<Path> paths(n_paths);
    parallel_for(n_paths, [&](std::size_t i) {
      Stream rng = stream_for(s, i);
      paths[i] = simulate_path(sampler, x0, grid, rng);
    });
    return paths;
  };
  const auto base = paths_from(StatePoint::Zero(d), derive_seed(seed, 0));
  std::vector<std::vector<Path>> unit(static_cast<std::size_t>(d));
  std::vector<std::vector<Path>> twice(opt.overdetermined ? static_cast<std::size_t>(d) : 0);
  for (int k = 0; k < d; ++k) {
    StatePoint e = StatePoint::Zero(d);
    e[k] = 1.0;
    unit[static_cast<std::size_t>(k)] = paths_from(e, derive_seed(seed, 1 + k));
    if (opt.overdetermined) twice[static_cast<std::size_t>(k)] = paths_from(2.0 * e, derive_seed(seed, 1 + d + k));
  }

  std::vector<RecoveredEvaluation> out;
  CVec prev = u;
  bool in_q = true;
  double consistency = 0.0;
  for (const double t : t_grid) {
    RecoveredEvaluation r;
    r.eval = FlowEvaluation::identity(u);
    r.eval.t = t;
    r.eval.reached = t;
    r.psi_stderr = RVec::Zero(d);
    if (t == 0.0) {
      out.push_back(r);
      continue;
    }
    const auto g0 = ecf(base, t, u);
    r.eval.phi = g0.value;
    r.eval.log_phi = std::log(g0.value);
    r.phi_stderr = g0.standard_error;
    if (!in_q || std::abs(g0.value) < opt.q_sigma * g0.standard_error || g0.value == 0.0) {
      in_q = false;
      r.eval.in_Q = false;
      r.eval.psi.setConstant(cplx(std::nan(""), std::nan("")));
      out.push_back(r);
      continue;
    }
    for (int k = 0; k < d; ++k) {
      const auto gk = ecf(unit[static_cast<std::size_t>(k)], t, u);
      const cplx psi_k = detail::log_near(gk.value / g0.value, prev[k]);
      if (std::abs(psi_k - prev[k]) > std::numbers::pi) {
        throw NumericalFailure("recover_phi_psi: branch jump larger than pi in component " +
                               std::to_string(k) + " at t=" + fmt(t) + "; refine t_grid");
      }
      r.eval.psi[k] = psi_k;
      const double rel = std::sqrt(std::pow(gk.standard_error / std::abs(gk.value), 2) +
                                   std::pow(g0.standard_error / std::abs(g0.value), 2));
      r.psi_stderr[k] = rel;
      if (opt.overdetermined) {
        const auto g2 = ecf(twice[static_cast<std::size_t>(k)], t, u);
        const cplx psi2 = detail::log_near(g2.value / g0.value, 2.0 * psi_k);
        const double s2 = std::sqrt(std::pow(g2.standard_error / std::abs(g2.value), 2) + 4 * rel * rel);
        consistency = std::max(consistency, detail::z_score(std::abs(psi2 - 2.0 * psi_k), s2));
      }
    }
    prev = r.eval.psi;
    out.push_back(r);
  }
  if (diagnostics && opt.overdetermined) (*diagnostics)["overdetermined_z"] = consistency;
  return out;
}

inline std::vector<RecoveredEvaluation> recover_phi_psi(const AffineModel& model, std::span<const double> t_grid,
                                                        const CVec& u, std::size_t n_paths, std::uint64_t seed,
                                                        const RecoveryOptions& opt = {}) {
  return recover_phi_psi(model.sampler, t_grid, u, n_paths, seed, opt);
}

/// Recovered (Phi, psi) against a reference flow, in standard errors.
inline CheckReport check_recovery(const ProcessSampler& sampler, const FlowSource& reference,
                                  std::span<const double> t_grid, std::span<const CVec> u_set,
                                  std::size_t n_paths, std::uint64_t seed, double z_threshold = 3.0,
                                  const RecoveryOptions& opt = {}) {
  CheckReport report;
  report.check_name = "recovery";
  report.grid_spec = "t=" + [&] {
    std::string s = "[";
    for (std::size_t k = 0; k < t_grid.size(); ++k) s += (k ? "," : "") + fmt(t_grid[k]);
    return s + "]";
  }() + " |u_set|=" + std::to_string(u_set.size()) + " paths=" + std::to_string(n_paths);
  ViolationTracker tracker(z_threshold);
  for (std::size_t j = 0; j < u_set.size(); ++j) {
    const CVec& u = u_set[j];
    try {
      std::map<std::string, double> diag;
      const auto rec = recover_phi_psi(sampler, t_grid, u, n_paths, derive_seed(seed, j), opt, &diag);
      for (const auto& r : rec) {
        if (!r.eval.in_Q) {
          report.failures.push_back("u=" + fmt(u) + " t=" + fmt(r.eval.t) +
                                    ": Phi indistinguishable from 0 (outside Q)");
          continue;
        }
        const auto truth = reference(r.eval.t, u);
        double z = detail::z_score(std::abs(r.eval.phi - truth.phi), r.phi_stderr);
        for (int k = 0; k < sampler.dims.d(); ++k) {
          z = std::max(z, detail::z_score(std::abs(r.eval.psi[k] - truth.psi[k]), r.psi_stderr[k]));
        }
        tracker.observe(z, [&] {
          return Witness{"t=" + fmt(r.eval.t) + " u=" + fmt(u),
                         "Phi^=" + fmt(r.eval.phi) + " psi^=" + fmt(r.eval.psi),
                         "Phi=" + fmt(truth.phi) + " psi=" + fmt(truth.psi)};
        });
      }
      if (opt.overdetermined) {
        report.details["overdetermined_z_" + std::to_string(j)] = diag["overdetermined_z"];
      }
    } catch (const std::exception& ex) {
      report.failures.push_back("u=" + fmt(u) + ": " + ex.what());
    }
  }
  report.details["seed"] = static_cast<double>(seed);
  report.details["n_paths"] = static_cast<double>(n_paths);
  tracker.fill(report);
  return report;
}

// Semi-homogeneity ------------------------------------------------------------------

/// g(t,u,x) = exp(<x_J,u_J>) g(t,u,(x_I,0)) with u in iR^d.
inline CheckReport semihomogeneity_test(const ProcessSampler& sampler, double t, const CVec& u,
                                        const StatePoint& x, std::size_t n_paths, std::uint64_t seed,
                                        double z_threshold = 3.0, const Tolerances& tol = {}) {
  const Dims& dims = sampler.dims;
  require_length(u.size(), dims, "semihomogeneity_test");
  require_in_D(x, dims, "semihomogeneity_test");
  if (classify_region(u, dims, tol) != Region::PureImaginary) {
    throw DomainError("semihomogeneity_test: u must be purely imaginary");
  }
  StatePoint x_base = x;
  x_base.tail(dims.n).setZero();
  const bool same = x_base == x;
  const auto gx = ecf_from_model(sampler, x, t, u, n_paths, derive_seed(seed, 1));
  const auto gb = same ? gx : ecf_from_model(sampler, x_base, t, u, n_paths, derive_seed(seed, 2));
  cplx shift = 0.0;
  for (int k = dims.m; k < dims.d(); ++k) shift += x[k] * u[k];
  const cplx predicted = std::exp(shift) * gb.value;
  const double sigma = std::hypot(gx.standard_error, same ? 0.0 : gb.standard_error);
  const double z = same ? 0.0 : detail::z_score(std::abs(gx.value - predicted), sigma);

  CheckReport report;
  report.check_name = "semihomogeneity";
  report.grid_spec = "t=" + fmt(t) + " u=" + fmt(u) + " x=" + fmt(x) + " paths=" + std::to_string(n_paths);
  ViolationTracker tracker(z_threshold);
  tracker.observe(z, [&] {
    return Witness{report.grid_spec, "g(x)=" + fmt(gx.value) + " sigma=" + fmt(sigma),
                   "exp(<x_J,u_J>) g((x_I,0))=" + fmt(predicted)};
  });
  report.details["seed"] = static_cast<double>(seed);
  report.details["n_paths"] = static_cast<double>(n_paths);
  tracker.fill(report);
  return report;
}

inline CheckReport semihomogeneity_test(const AffineModel& model, double t, const CVec& u, const StatePoint& x,
                                        std::size_t n_paths, std::uint64_t seed) {
  return semihomogeneity_test(model.sampler, t, u, x, n_paths, seed);
}

/// |Theta| bound and positive-definiteness inputs from terminal draws:
/// y -> mean exp(i <y, X_t>).
inline std::function<cplx(const RVec&)> empirical_theta(std::vector<RVec> samples) {
  return [samples = std::move(samples)](const RVec& y) {
    std::vector<cplx> f(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) f[i] = std::exp(cplx(0.0, y.dot(samples[i])));
    return detail::pairwise_sum<cplx>(f) / static_cast<double>(samples.size());
  };
}

}  // namespace affine
