#pragma once

// Regularity: F(u) and R(u) as one-sided t = 0 derivatives of the flow, the
// integral identities psi(t,u) - u = int_0^t R(psi(s,u)) ds and
// log Phi(t,u) = int_0^t F(psi(s,u)) ds, and u-derivatives on U°.

#include "affine/core.hpp"
#include "affine/empirical.hpp"
#include "affine/generator.hpp"
#include "affine/models.hpp"
#include "affine/parallel.hpp"
#include "affine/report.hpp"

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace affine {

struct DerivativeEstimate {
  CVec u;
  cplx F_hat{0.0, 0.0};
  CVec R_hat;
  std::vector<double> step_schedule;
  int extrapolation_order = 0;
  double error_estimate = 0.0;
  /// Extrapolation increments shrink along the schedule.
  bool converged = true;
  /// Standard errors when the estimate comes from Monte Carlo.
  double F_stderr = 0.0;
  RVec R_stderr;
};

inline const std::vector<double>& default_h_schedule() {
  static const std::vector<double> s{1e-2, 5e-3, 2.5e-3, 1.25e-3};
  return s;
}

namespace detail {

/// Neville tableau extrapolating samples y(h_k) to h = 0. Returns the
/// diagonal T_{k,k}; increments are |T_{k,k} - T_{k-1,k-1}|.
inline std::vector<CVec> neville_diagonal(std::span<const double> h, std::span<const CVec> y) {
  const std::size_t n = h.size();
  std::vector<std::vector<CVec>> T(n);
  std::vector<CVec> diag;
  for (std::size_t i = 0; i < n; ++i) {
    T[i].push_back(y[i]);
    for (std::size_t j = 1; j <= i; ++j) {
      const double denom = h[i - j] - h[i];
      T[i].push_back(CVec((h[i - j] * T[i][j - 1] - h[i] * T[i - 1][j - 1]) / denom));
    }
    diag.push_back(T[i].back());
  }
  return diag;
}

}  // namespace detail

/// Forward differences (Phi(h,u) - 1)/h and (psi(h,u) - u)/h, extrapolated
/// to h = 0 over `h_schedule` (strictly decreasing).
inline DerivativeEstimate estimate_FR(const FlowSource& flow, const Dims& dims, const CVec& u,
                                      std::span<const double> h_schedule = default_h_schedule(),
                                      const Tolerances& tol = {}) {
  require_length(u.size(), dims, "estimate_FR");
  if (!in_U(u, dims, tol)) throw DomainError("estimate_FR: u is outside U");
  if (h_schedule.empty()) throw DomainError("estimate_FR: empty schedule");
  for (std::size_t k = 0; k < h_schedule.size(); ++k) {
    if (!(h_schedule[k] > 0.0) || (k > 0 && !(h_schedule[k] < h_schedule[k - 1]))) {
      throw DomainError("estimate_FR: schedule must be positive and strictly decreasing");
    }
  }
  const int d = dims.d();
  std::vector<CVec> samples;
  for (const double h : h_schedule) {
    const auto e = flow(h, u);
    if (!e.in_Q) throw NumericalFailure("estimate_FR: flow left Q at h=" + fmt(h));
    CVec s(d + 1);
    s[0] = std::exp(e.log_phi) - 1.0;
    if (std::abs(e.log_phi) < 1.0) {
      // expm1 for complex arguments: exp(z) - 1 = expm1(x) cos y - 2 sin^2(y/2) + i e^x sin y
      const double x = e.log_phi.real(), y = e.log_phi.imag();
      const double sy2 = std::sin(0.5 * y);
      s[0] = cplx(std::expm1(x) * std::cos(y) - 2.0 * sy2 * sy2, std::exp(x) * std::sin(y));
    }
    s.tail(d) = e.psi - u;
    samples.emplace_back(s / h);
  }
  const auto diag = detail::neville_diagonal(h_schedule, samples);
  DerivativeEstimate out;
  out.u = u;
  out.step_schedule.assign(h_schedule.begin(), h_schedule.end());
  out.extrapolation_order = static_cast<int>(h_schedule.size());
  out.F_hat = diag.back()[0];
  out.R_hat = diag.back().tail(d);
  out.R_stderr = RVec::Zero(d);
  std::vector<double> inc;
  for (std::size_t k = 1; k < diag.size(); ++k) inc.push_back((diag[k] - diag[k - 1]).cwiseAbs().maxCoeff());
  out.error_estimate = inc.empty() ? 0.0 : inc.back();
  const double floor = 1e-12 * std::max(1.0, diag.back().cwiseAbs().maxCoeff());
  for (std::size_t k = 1; k < inc.size(); ++k) {
    if (inc[k] >= inc[k - 1] && inc[k] > floor) out.converged = false;
  }
  return out;
}

/// Closed loop: |F_hat - F(u)| and |R_hat - R(u)| over a u set.
inline CheckReport check_closed_loop(const FlowSource& flow, const GeneratorPair& gen, const Dims& dims,
                                     std::span<const CVec> u_set, double threshold,
                                     std::span<const double> h_schedule = default_h_schedule(),
                                     const Tolerances& tol = {}) {
  CheckReport report;
  report.check_name = "regularity_closed_loop";
  report.grid_spec = "|u_set|=" + std::to_string(u_set.size()) + " h=" + [&] {
    std::string s = "[";
    for (std::size_t k = 0; k < h_schedule.size(); ++k) s += (k ? "," : "") + fmt(h_schedule[k]);
    return s + "]";
  }();
  struct Node {
    double v = 0;
    Witness w;
    std::string failure;
    bool converged = true;
  };
  const auto nodes = parallel_map<Node>(u_set.size(), [&](std::size_t j) {
    Node node;
    const CVec& u = u_set[j];
    try {
      const auto est = estimate_FR(flow, dims, u, h_schedule, tol);
      const cplx F = gen.F(u);
      const CVec R = gen.R(u);
      node.v = std::max(std::abs(est.F_hat - F), (est.R_hat - R).cwiseAbs().maxCoeff());
      node.converged = est.converged;
      node.w = {"u=" + fmt(u), "F^=" + fmt(est.F_hat) + " R^=" + fmt(est.R_hat), "F=" + fmt(F) + " R=" + fmt(R)};
    } catch (const std::exception& ex) {
      node.failure = "u=" + fmt(u) + ": " + ex.what();
    }
    return node;
  });
  ViolationTracker tracker(threshold);
  int nonconverged = 0;
  for (const auto& n : nodes) {
    if (!n.failure.empty()) {
      report.failures.push_back(n.failure);
      continue;
    }
    nonconverged += n.converged ? 0 : 1;
    tracker.observe(n.v, [&] { return n.w; });
  }
  report.details["nonconverged_points"] = nonconverged;
  tracker.fill(report);
  return report;
}

// Riccati consistency ------------------------------------------------------------------

namespace detail {

struct GK15 {
  static constexpr std::array<double, 8> x{0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                                            0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                                            0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                                            0.207784955007898467600689403773245, 0.0};
  static constexpr std::array<double, 8> wk{0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                                             0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                                             0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                                             0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
  static constexpr std::array<double, 4> wg{0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                                             0.381830050505118944950369775488975, 0.417959183673469387755102040816327};
};

/// Gauss-Kronrod 7/15 on [a,b] for a vector integrand; returns (Kronrod, |K - G|).
template <typename Fn>
std::pair<CVec, double> gk15(Fn&& f, double a, double b) {
  const double c = 0.5 * (a + b), r = 0.5 * (b - a);
  const CVec fc = f(c);
  CVec K = GK15::wk[7] * fc;
  CVec G = GK15::wg[3] * fc;
  for (int k = 0; k < 7; ++k) {
    const CVec f1 = f(c - r * GK15::x[k]);
    const CVec f2 = f(c + r * GK15::x[k]);
    K += GK15::wk[k] * (f1 + f2);
    if (k % 2 == 1) G += GK15::wg[k / 2] * (f1 + f2);
  }
  K *= r;
  G *= r;
  return {K, (K - G).cwiseAbs().maxCoeff()};
}

/// Adaptive bisection until the summed error estimate is below `abs_tol`.
template <typename Fn>
CVec adaptive_gk(Fn&& f, double a, double b, double abs_tol, int max_intervals = 256) {
  struct Piece {
    double a, b;
    CVec value;
    double err;
  };
  std::vector<Piece> pieces;
  auto [v0, e0] = gk15(f, a, b);
  pieces.push_back({a, b, v0, e0});
  while (true) {
    double total = 0.0;
    std::size_t worst = 0;
    for (std::size_t k = 0; k < pieces.size(); ++k) {
      total += pieces[k].err;
      if (pieces[k].err > pieces[worst].err) worst = k;
    }
    if (total <= abs_tol) break;
    if (static_cast<int>(pieces.size()) >= max_intervals) {
      throw NumericalFailure("riccati_consistency: quadrature did not converge (error " + fmt(total) + ")");
    }
    const Piece p = pieces[worst];
    const double mid = 0.5 * (p.a + p.b);
    auto [vl, el] = gk15(f, p.a, mid);
    auto [vr, er] = gk15(f, mid, p.b);
    pieces[worst] = {p.a, mid, vl, el};
    pieces.push_back({mid, p.b, vr, er});
  }
  CVec sum = CVec::Zero(pieces.front().value.size());
  for (const auto& p : pieces) sum += p.value;
  return sum;
}

}  // namespace detail

/// ||int_0^t R(psi(s,u)) ds - (psi(t,u) - u)|| and
/// |int_0^t F(psi(s,u)) ds - log Phi(t,u)|, both against `threshold`.
inline CheckReport riccati_consistency(const FlowSource& flow, const GeneratorPair& gen, const Dims& dims,
                                       double t, const CVec& u, double threshold, const Tolerances& tol = {}) {
  require_length(u.size(), dims, "riccati_consistency");
  if (!in_U(u, dims, tol)) throw DomainError("riccati_consistency: u is outside U");
  if (!(t >= 0.0)) throw DomainError("riccati_consistency: t must be >= 0");
  CheckReport report;
  report.check_name = "riccati_consistency";
  report.grid_spec = "t=" + fmt(t) + " u=" + fmt(u);
  ViolationTracker tracker(threshold);
  const int d = dims.d();
  try {
    CVec integral = CVec::Zero(d + 1);
    if (t > 0.0) {
      auto integrand = [&](double s) {
        const auto e = flow(s, u);
        if (!e.in_Q) throw NumericalFailure("riccati_consistency: (s,u) left Q at s=" + fmt(s));
        CVec v(d + 1);
        v[0] = gen.F(e.psi);
        v.tail(d) = gen.R(e.psi);
        return v;
      };
      integral = detail::adaptive_gk(integrand, 0.0, t, 0.1 * threshold);
    }
    const auto end = t > 0.0 ? flow(t, u) : FlowEvaluation::identity(u);
    const double r_psi = (integral.tail(d) - (end.psi - u)).norm();
    const double r_phi = std::abs(integral[0] - end.log_phi);
    tracker.observe(std::max(r_psi, r_phi), [&] {
      return Witness{"t=" + fmt(t) + " u=" + fmt(u),
                     "int R=" + fmt(CVec(integral.tail(d))) + " int F=" + fmt(integral[0]),
                     "psi-u=" + fmt(CVec(end.psi - u)) + " log Phi=" + fmt(end.log_phi)};
    });
    report.details["psi_residual"] = r_psi;
    report.details["phi_residual"] = r_phi;
  } catch (const std::exception& ex) {
    report.failures.push_back(ex.what());
  }
  tracker.fill(report);
  return report;
}

// u-derivatives -------------------------------------------------------------------------

struct UJacobian {
  /// 1 x m: dPhi/du_i for i in I.
  CMat dphi;
  /// d x m: dpsi/du_i for i in I.
  CMat dpsi;
  double step = 0.0;
  /// max over entries of |J(u - step e_i) - J(u)| / step.
  double continuity_defect = 0.0;
};

namespace detail {

inline std::pair<CMat, CMat> central_jacobian(const FlowSource& flow, const Dims& dims, double t, const CVec& u,
                                              double step) {
  CMat dphi(1, dims.m), dpsi(dims.d(), dims.m);
  for (int i = 0; i < dims.m; ++i) {
    CVec up = u, dn = u;
    up[i] += step;
    dn[i] -= step;
    const auto ep = flow(t, up), en = flow(t, dn);
    if (!ep.in_Q || !en.in_Q) throw NumericalFailure("u_jacobian: flow left Q");
    dphi(0, i) = (ep.phi - en.phi) / (2.0 * step);
    dpsi.col(i) = (ep.psi - en.psi) / (2.0 * step);
  }
  return {dphi, dpsi};
}

}  // namespace detail

/// Central differences in the real directions e_i, i in I. The step is
/// shrunk so that u +- step e_i stays in U°.
inline UJacobian u_jacobian(const FlowSource& flow, const Dims& dims, double t, const CVec& u, double fd_step,
                            const Tolerances& tol = {}) {
  require_length(u.size(), dims, "u_jacobian");
  if (!in_U_interior(u, dims, tol)) throw DomainError("u_jacobian: u must lie in U°");
  if (!(fd_step > 0.0)) throw DomainError("u_jacobian: fd_step must be > 0");
  UJacobian out;
  out.dphi = CMat(1, dims.m);
  out.dpsi = CMat(dims.d(), dims.m);
  if (dims.m == 0) return out;
  double step = fd_step;
  for (int i = 0; i < dims.m; ++i) step = std::min(step, 0.5 * (-u[i].real() - tol.region_eps));
  if (!(step > 1e-10)) throw NumericalFailure("u_jacobian: step underflow near the boundary of U°");
  out.step = step;
  auto [dphi, dpsi] = detail::central_jacobian(flow, dims, t, u, step);
  out.dphi = dphi;
  out.dpsi = dpsi;
  double defect = 0.0;
  for (int i = 0; i < dims.m; ++i) {
    CVec shifted = u;
    shifted[i] -= step;
    auto [p2, s2] = detail::central_jacobian(flow, dims, t, shifted, step);
    defect = std::max({defect, (p2 - dphi).cwiseAbs().maxCoeff() / step, (s2 - dpsi).cwiseAbs().maxCoeff() / step});
  }
  out.continuity_defect = defect;
  return out;
}

// Empirical derivatives -------------------------------------------------------------------

struct EmpiricalFROptions {
  double h = 0.05;
  /// Maximum accepted standard error of F_hat and R_hat; h is doubled (and
  /// the adjustment reported) until the estimate is below it.
  double noise_cap = std::numeric_limits<double>::infinity();
  int max_doublings = 4;
};

struct EmpiricalFR {
  DerivativeEstimate estimate;
  double h_requested = 0.0;
  double h_used = 0.0;
  bool h_adjusted = false;
};

namespace detail {

/// Two-point Richardson 2 D(h/2) - D(h) from MC path sets with per-path
/// influence functions; pass returns estimate and stderr.
inline DerivativeEstimate empirical_fr_at(const ProcessSampler& sampler, const CVec& u, double h,
                                          std::size_t n_paths, std::uint64_t seed) {
  const Dims& dims = sampler.dims;
  const int d = dims.d();
  const std::vector<double> grid{0.0, 0.5 * h, h};
  auto terminal_pair = [&](const StatePoint& x0, std::uint64_t s) {
    std::vector<std::array<cplx, 2>> f(n_paths);
    parallel_for(n_paths, [&](std::size_t i) {
      Stream rng = stream_for(s, i);
      const Path p = simulate_path(sampler, x0, grid, rng);
      f[i] = {exp_functional(u, p.values[1]), exp_functional(u, p.values[2])};
    });
    return f;
  };
  auto means = [&](const std::vector<std::array<cplx, 2>>& f) {
    std::vector<cplx> a(f.size()), b(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      a[i] = f[i][0];
      b[i] = f[i][1];
    }
    return std::array<cplx, 2>{pairwise_sum<cplx>(a) / static_cast<double>(f.size()),
                               pairwise_sum<cplx>(b) / static_cast<double>(f.size())};
  };
  /// Standard error of sum_k w_k * mean(f[.][k]) / g_k divided by n.
  auto combo_stderr = [&](const std::vector<std::array<cplx, 2>>& f, cplx w0, cplx w1) {
    std::vector<cplx> z(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) z[i] = w0 * f[i][0] + w1 * f[i][1];
    return ecf_from_values(z).standard_error;
  };

  const double hh = 0.5 * h;
  DerivativeEstimate out;
  out.u = u;
  out.step_schedule = {h, hh};
  out.extrapolation_order = 2;
  out.R_hat = CVec(d);
  out.R_stderr = RVec(d);

  const auto f0 = terminal_pair(StatePoint::Zero(d), derive_seed(seed, 0));
  const auto g0 = means(f0);
  // F^ = 2 (g0(hh) - 1)/hh - (g0(h) - 1)/h, linear in the means.
  out.F_hat = 2.0 * (g0[0] - 1.0) / hh - (g0[1] - 1.0) / h;
  out.F_stderr = combo_stderr(f0, 2.0 / hh, -1.0 / h);
  double err = 0.0;
  for (int k = 0; k < d; ++k) {
    StatePoint e = StatePoint::Zero(d);
    e[k] = 1.0;
    const auto fk = terminal_pair(e, derive_seed(seed, 1 + k));
    const auto gk = means(fk);
    // psi_k(s) = log(gk(s)/g0(s)); D(s) = (psi_k(s) - u_k)/s.
    const cplx p_hh = log_near(gk[0] / g0[0], u[k]);
    const cplx p_h = log_near(gk[1] / g0[1], p_hh);
    out.R_hat[k] = 2.0 * (p_hh - u[k]) / hh - (p_h - u[k]) / h;
    // Delta method: d psi = d gk / gk - d g0 / g0 with independent sets.
    const double s_k = combo_stderr(fk, 2.0 / (hh * gk[0]), -1.0 / (h * gk[1]));
    const double s_0 = combo_stderr(f0, 2.0 / (hh * g0[0]), -1.0 / (h * g0[1]));
    out.R_stderr[k] = std::hypot(s_k, s_0);
    err = std::max(err, std::abs((p_hh - u[k]) / hh - (p_h - u[k]) / h));
  }
  out.error_estimate = std::max(err, std::abs((g0[0] - 1.0) / hh - (g0[1] - 1.0) / h));
  return out;
}

}  // namespace detail

/// estimate_FR on the empirically recovered flow at a coarse h.
inline EmpiricalFR estimate_FR_empirical(const ProcessSampler& sampler, const CVec& u, std::size_t n_paths,
                                         std::uint64_t seed, const EmpiricalFROptions& opt = {},
                                         const Tolerances& tol = {}) {
  require_length(u.size(), sampler.dims, "estimate_FR_empirical");
  if (!in_U(u, sampler.dims, tol)) throw DomainError("estimate_FR_empirical: u is outside U");
  if (!(opt.h > 0.0)) throw DomainError("estimate_FR_empirical: h must be > 0");
  EmpiricalFR out;
  out.h_requested = opt.h;
  double h = opt.h;
  for (int k = 0;; ++k) {
    out.estimate = detail::empirical_fr_at(sampler, u, h, n_paths, seed);
    const double noise = std::max(out.estimate.F_stderr,
                                  out.estimate.R_stderr.size() ? out.estimate.R_stderr.maxCoeff() : 0.0);
    if (noise <= opt.noise_cap || k >= opt.max_doublings) break;
    h *= 2.0;
    out.h_adjusted = true;
  }
  out.h_used = h;
  return out;
}

/// |F^ - F(u)| and |R^ - R(u)| in standard errors over a u set.
inline CheckReport check_empirical_FR(const ProcessSampler& sampler, const GeneratorPair& gen,
                                      std::span<const CVec> u_set, std::size_t n_paths, std::uint64_t seed,
                                      double z_threshold = 5.0, const EmpiricalFROptions& opt = {}) {
  CheckReport report;
  report.check_name = "regularity_empirical";
  report.grid_spec = "|u_set|=" + std::to_string(u_set.size()) + " paths=" + std::to_string(n_paths) +
                     " h=" + fmt(opt.h);
  ViolationTracker tracker(z_threshold);
  for (std::size_t j = 0; j < u_set.size(); ++j) {
    const CVec& u = u_set[j];
    try {
      const auto r = estimate_FR_empirical(sampler, u, n_paths, derive_seed(seed, j), opt);
      const auto& e = r.estimate;
      const cplx F = gen.F(u);
      const CVec R = gen.R(u);
      double z = detail::z_score(std::abs(e.F_hat - F), e.F_stderr);
      for (int k = 0; k < R.size(); ++k) z = std::max(z, detail::z_score(std::abs(e.R_hat[k] - R[k]), e.R_stderr[k]));
      tracker.observe(z, [&] {
        return Witness{"u=" + fmt(u) + " h=" + fmt(r.h_used),
                       "F^=" + fmt(e.F_hat) + " R^=" + fmt(e.R_hat) + " sF=" + fmt(e.F_stderr) +
                           " sR=" + fmt(e.R_stderr),
                       "F=" + fmt(F) + " R=" + fmt(R)};
      });
      if (r.h_adjusted) {
        report.notes.push_back("u=" + fmt(u) + ": h raised from " + fmt(r.h_requested) + " to " + fmt(r.h_used) +
                               " to meet the noise cap");
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

}  // namespace affine
