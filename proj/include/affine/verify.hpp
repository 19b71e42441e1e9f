#pragma once

// Executable property checks on a transform pair: semi-flow, monotonicity,
// Property A (interior to interior), Property B (beta extraction and
// linearity on J), positive-definiteness certificates and Feller decay.

#include "affine/core.hpp"
#include "affine/flow.hpp"
#include "affine/generator.hpp"
#include "affine/matrix_exp.hpp"
#include "affine/models.hpp"
#include "affine/parallel.hpp"
#include "affine/report.hpp"
#include "affine/rng.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace affine {

namespace detail {

inline FlowEvaluation eval_in_Q(const FlowSource& flow, double t, const CVec& u) {
  FlowEvaluation e = flow(t, u);
  if (!e.in_Q) throw NumericalFailure("(t,u) left Q at s = " + fmt(e.reached));
  return e;
}

inline std::string grid_text(std::span<const double> xs) {
  std::string s = "[";
  for (std::size_t k = 0; k < xs.size(); ++k) s += (k ? "," : "") + fmt(xs[k]);
  return s + "]";
}

}  // namespace detail

// Semi-flow --------------------------------------------------------------------

/// max over the grid of |Phi(t+s,u) - Phi(t,u) Phi(s,psi(t,u))| and
/// |psi(t+s,u) - psi(s,psi(t,u))|, plus the mirrored order psi(t, psi(s,u)).
inline CheckReport check_semiflow(const FlowSource& flow, const Dims& dims,
                                  std::span<const double> t_grid, std::span<const double> s_grid,
                                  std::span<const CVec> u_set, double threshold,
                                  const Tolerances& tol = {}) {
  for (const auto& u : u_set) {
    require_length(u.size(), dims, "check_semiflow");
    if (!in_U(u, dims, tol)) throw DomainError("check_semiflow: u_set must lie in U");
  }
  CheckReport report;
  report.check_name = "semiflow";
  report.grid_spec = "t=" + detail::grid_text(t_grid) + " s=" + detail::grid_text(s_grid) +
                     " |u_set|=" + std::to_string(u_set.size());

  struct Node {
    double violation = 0.0;
    Witness witness;
    std::string failure;
  };
  const std::size_t nt = t_grid.size(), ns = s_grid.size();
  const auto nodes = parallel_map<Node>(nt * ns * u_set.size(), [&](std::size_t idx) {
    const std::size_t iu = idx / (nt * ns);
    const std::size_t it = (idx / ns) % nt;
    const std::size_t is = idx % ns;
    const double t = t_grid[it], s = s_grid[is];
    const CVec& u = u_set[iu];
    Node node;
    try {
      const auto joint = detail::eval_in_Q(flow, t + s, u);
      const auto first = detail::eval_in_Q(flow, t, u);
      const auto second = detail::eval_in_Q(flow, s, first.psi);
      const auto s_first = detail::eval_in_Q(flow, s, u);
      const auto t_second = detail::eval_in_Q(flow, t, s_first.psi);
      const double r_phi = std::abs(joint.phi - first.phi * second.phi);
      const double r_psi = (joint.psi - second.psi).norm();
      const double r_phi_m = std::abs(joint.phi - s_first.phi * t_second.phi);
      const double r_psi_m = (joint.psi - t_second.psi).norm();
      node.violation = std::max({r_phi, r_psi, r_phi_m, r_psi_m});
      node.witness = {"t=" + fmt(t) + " s=" + fmt(s) + " u=" + fmt(u),
                      "Phi(t+s)=" + fmt(joint.phi) + " psi(t+s)=" + fmt(joint.psi),
                      "Phi(t)Phi(s,psi(t))=" + fmt(first.phi * second.phi) +
                          " psi(s,psi(t))=" + fmt(second.psi)};
    } catch (const std::exception& ex) {
      node.failure = "t=" + fmt(t) + " s=" + fmt(s) + " u=" + fmt(u) + ": " + ex.what();
    }
    return node;
  });

  ViolationTracker tracker(threshold);
  for (const auto& node : nodes) {
    if (!node.failure.empty()) {
      report.failures.push_back(node.failure);
      continue;
    }
    tracker.observe(node.violation, [&] { return node.witness; });
  }
  tracker.fill(report);
  return report;
}

// Monotonicity -----------------------------------------------------------------

/// |Phi(t,u)| <= Phi(t,Re w) and Re psi(t,u) <= psi(t,Re w) for Re u <= Re w;
/// the flow at the real point Re w is also required to be real.
inline CheckReport check_monotonicity(const FlowSource& flow, const Dims& dims,
                                      std::span<const double> t_grid,
                                      std::span<const std::pair<CVec, CVec>> pairs,
                                      double threshold, const Tolerances& tol = {}) {
  for (const auto& [u, w] : pairs) {
    require_length(u.size(), dims, "check_monotonicity");
    require_length(w.size(), dims, "check_monotonicity");
    if (!in_U(u, dims, tol) || !in_U(w, dims, tol)) {
      throw DomainError("check_monotonicity: pair outside U");
    }
    for (int k = 0; k < dims.d(); ++k) {
      if (u[k].real() > w[k].real() + tol.region_eps) {
        throw DomainError("check_monotonicity: pair violates Re u <= Re w");
      }
    }
  }
  CheckReport report;
  report.check_name = "monotonicity";
  report.grid_spec = "t=" + detail::grid_text(t_grid) + " |pairs|=" + std::to_string(pairs.size());
  ViolationTracker tracker(threshold);
  for (const auto& [u, w] : pairs) {
    const CVec re_w = real_part_vec(w);
    for (const double t : t_grid) {
      try {
        const auto fu = detail::eval_in_Q(flow, t, u);
        const auto fw = detail::eval_in_Q(flow, t, re_w);
        double v = std::abs(fu.phi) - fw.phi.real();
        v = std::max(v, std::abs(fw.phi.imag()));
        for (int k = 0; k < dims.d(); ++k) {
          v = std::max(v, fu.psi[k].real() - fw.psi[k].real());
          v = std::max(v, std::abs(fw.psi[k].imag()));
        }
        tracker.observe(v, [&] {
          return Witness{"t=" + fmt(t) + " u=" + fmt(u) + " w=" + fmt(w),
                         "|Phi(t,u)|=" + fmt(std::abs(fu.phi)) + " Re psi(t,u)=" + fmt(CVec(fu.psi.real().cast<cplx>())),
                         "Phi(t,Re w)=" + fmt(fw.phi) + " psi(t,Re w)=" + fmt(fw.psi)};
        });
      } catch (const std::exception& ex) {
        report.failures.push_back("t=" + fmt(t) + " u=" + fmt(u) + ": " + ex.what());
      }
    }
  }
  tracker.fill(report);
  return report;
}

// Property A -------------------------------------------------------------------

/// Every psi(t,u) with u in U° is again in U°. Reports
/// max(0, Re psi_I + region_eps) and |Re psi_J| - region_eps; threshold 0.
inline CheckReport check_property_A(const FlowSource& flow, const Dims& dims,
                                    std::span<const double> t_grid, std::span<const CVec> u_set,
                                    const Tolerances& tol = {}) {
  for (const auto& u : u_set) {
    require_length(u.size(), dims, "check_property_A");
    if (!in_U_interior(u, dims, tol)) throw DomainError("check_property_A: u must lie in U°");
  }
  CheckReport report;
  report.check_name = "property_A";
  report.grid_spec = "t=" + detail::grid_text(t_grid) + " |u_set|=" + std::to_string(u_set.size());
  ViolationTracker tracker(0.0);
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& u : u_set) {
    for (const double t : t_grid) {
      try {
        const auto e = detail::eval_in_Q(flow, t, u);
        double v = 0.0;
        for (int k = 0; k < dims.m; ++k) {
          v = std::max(v, e.psi[k].real() + tol.region_eps);
          margin = std::min(margin, -e.psi[k].real());
        }
        for (int k = dims.m; k < dims.d(); ++k) {
          v = std::max(v, std::abs(e.psi[k].real()) - tol.region_eps);
        }
        tracker.observe(v, [&] {
          return Witness{"t=" + fmt(t) + " u=" + fmt(u), "psi=" + fmt(e.psi), "psi in U°"};
        });
      } catch (const std::exception& ex) {
        report.failures.push_back("t=" + fmt(t) + " u=" + fmt(u) + ": " + ex.what());
      }
    }
  }
  if (dims.m == 0) report.notes.push_back("I is empty; the I-part of the check is vacuous");
  else report.details["min_margin"] = margin;
  tracker.fill(report);
  return report;
}

// Property B: beta extraction ----------------------------------------------------

struct BetaExtraction {
  RMat beta;
  CheckReport report;
};

/// beta = log(M)/t_probe with M_{.,j} = psi_J(t_probe, i e_j)/i, validated
/// against psi_J(t,u) = exp(t beta) u_J on an independent (t,u) grid; the
/// imaginary part of the principal logarithm counts as a violation.
inline BetaExtraction extract_beta(const FlowSource& flow, const Dims& dims, double t_probe,
                                   double threshold, std::span<const double> check_t,
                                   std::span<const CVec> check_u) {
  if (dims.n < 1) throw DomainError("extract_beta: requires n >= 1");
  if (!(t_probe > 0.0)) throw DomainError("extract_beta: t_probe must be > 0");
  const int m = dims.m, n = dims.n;
  CMat M(n, n);
  for (int j = 0; j < n; ++j) {
    CVec u = CVec::Zero(dims.d());
    u[m + j] = I_unit;
    const auto e = detail::eval_in_Q(flow, t_probe, u);
    M.col(j) = e.psi.tail(n) / I_unit;
  }
  Eigen::ComplexEigenSolver<CMat> ces(M);
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  for (Eigen::Index k = 0; k < ces.eigenvalues().size(); ++k) {
    const cplx lam = ces.eigenvalues()[k];
    if (std::abs(lam) < 1e-13 * scale) {
      throw NumericalFailure("extract_beta: M is singular; reduce t_probe");
    }
    if (lam.real() <= 0.0 && std::abs(lam.imag()) <= 1e-13 * scale) {
      throw NumericalFailure("extract_beta: M has an eigenvalue on the closed negative real axis; reduce t_probe");
    }
  }
  const CMat log_m = M.log();
  const CMat beta_c = log_m / t_probe;
  BetaExtraction out;
  out.beta = beta_c.real();

  CheckReport& report = out.report;
  report.check_name = "property_B";
  report.grid_spec = "t_probe=" + fmt(t_probe) + " t=" + detail::grid_text(check_t) +
                     " |u_set|=" + std::to_string(check_u.size());
  ViolationTracker tracker(threshold);
  const double leak = beta_c.imag().cwiseAbs().maxCoeff();
  tracker.observe(leak, [&] {
    return Witness{"imaginary part of log(M)/t_probe", fmt(leak), "0"};
  });
  for (const auto& u : check_u) {
    require_length(u.size(), dims, "extract_beta");
    for (const double t : check_t) {
      try {
        const auto e = detail::eval_in_Q(flow, t, u);
        const CVec predicted = matrix_exp(out.beta, t).cast<cplx>() * u.tail(n);
        const double v = (e.psi.tail(n) - predicted).norm();
        tracker.observe(v, [&] {
          return Witness{"t=" + fmt(t) + " u=" + fmt(u), "psi_J=" + fmt(CVec(e.psi.tail(n))),
                         "exp(t beta) u_J=" + fmt(predicted)};
        });
      } catch (const std::exception& ex) {
        report.failures.push_back("t=" + fmt(t) + " u=" + fmt(u) + ": " + ex.what());
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      report.details["beta_" + std::to_string(i) + "_" + std::to_string(j)] = out.beta(i, j);
    }
  }
  tracker.fill(report);
  return out;
}

/// Default independent validation grid for extract_beta.
inline BetaExtraction extract_beta(const FlowSource& flow, const Dims& dims, double t_probe,
                                   double threshold) {
  const std::vector<double> ts{0.1, 0.5, 1.0, 2.0};
  std::vector<CVec> us;
  for (int r = 0; r < 3; ++r) {
    CVec u(dims.d());
    for (int k = 0; k < dims.m; ++k) u[k] = cplx(-0.3 - 0.2 * r, 0.7 - 0.5 * k + 0.3 * r);
    for (int k = 0; k < dims.n; ++k) u[dims.m + k] = cplx(0.0, 0.4 - 0.75 * r + 0.3 * k);
    us.push_back(u);
  }
  return extract_beta(flow, dims, t_probe, threshold, ts, us);
}

// Linearity fit ------------------------------------------------------------------

struct LinearFitResult {
  int k = 0;
  RVec zeta;
  double residual = 0.0;
  double sample_radius = 0.0;
};

struct LinearitySample {
  RVec y;          // full-length point supported on K
  cplx psi_value;  // psi_k(t, i y)
};

/// Real least squares zeta minimizing sum |psi_k(t,iy) - <zeta, i y_K>|^2.
/// The real part of psi_k and the imaginary misfit both enter the RMS residual.
inline LinearFitResult fit_linearity(std::span<const LinearitySample> samples,
                                     std::span<const int> K_indices, double radius, int k = 0) {
  const auto kk = static_cast<Eigen::Index>(K_indices.size());
  if (static_cast<Eigen::Index>(samples.size()) < kk || kk == 0) {
    throw DomainError("fit_linearity: need at least |K| samples and nonempty K");
  }
  RMat A(static_cast<Eigen::Index>(samples.size()), kk);
  RVec b(A.rows());
  double r_max = 0.0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const RVec& y = samples[s].y;
    const double r = y.norm();
    if (!(r < radius)) throw DomainError("fit_linearity: sample outside the radius");
    for (Eigen::Index c = 0; c < y.size(); ++c) {
      bool in_k = false;
      for (int idx : K_indices) in_k = in_k || idx == c;
      if (!in_k && y[c] != 0.0) throw DomainError("fit_linearity: sample not supported on K");
    }
    r_max = std::max(r_max, r);
    for (Eigen::Index c = 0; c < kk; ++c) A(static_cast<Eigen::Index>(s), c) = y[K_indices[c]];
    b[static_cast<Eigen::Index>(s)] = samples[s].psi_value.imag();
  }
  LinearFitResult out;
  out.k = k;
  out.zeta = A.colPivHouseholderQr().solve(b);
  double sq = 0.0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const double fit = A.row(static_cast<Eigen::Index>(s)).dot(out.zeta);
    sq += std::norm(samples[s].psi_value - cplx(0.0, fit));
  }
  out.residual = std::sqrt(sq / static_cast<double>(samples.size()));
  out.sample_radius = r_max;
  return out;
}

/// Random samples y supported on K with |y| < radius, psi_k(t, i y) from the flow.
inline std::vector<LinearitySample> linearity_samples(const FlowSource& flow, const Dims& dims,
                                                      double t, int k, std::span<const int> K_indices,
                                                      double radius, std::size_t count,
                                                      std::uint64_t seed) {
  Stream rng(seed);
  std::vector<RVec> ys;
  for (std::size_t s = 0; s < count; ++s) {
    RVec y = RVec::Zero(dims.d());
    for (int idx : K_indices) y[idx] = 2.0 * rng.uniform() - 1.0;
    const double r = y.norm();
    const double target = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(K_indices.size()));
    if (r > 0) y *= 0.999 * target / r;
    ys.push_back(y);
  }
  return parallel_map<LinearitySample>(count, [&](std::size_t s) {
    const CVec u = ys[s].cast<cplx>() * I_unit;
    return LinearitySample{ys[s], detail::eval_in_Q(flow, t, u).psi[k]};
  });
}

/// Property B restricted to J: the fit residual of psi_k, k in J, over all
/// coordinates must vanish.
inline CheckReport check_linearity(const FlowSource& flow, const Dims& dims,
                                   std::span<const double> t_grid, double radius,
                                   std::size_t count, double threshold, std::uint64_t seed) {
  CheckReport report;
  report.check_name = "linearity_J";
  report.grid_spec = "t=" + detail::grid_text(t_grid) + " radius=" + fmt(radius) +
                     " samples=" + std::to_string(count);
  ViolationTracker tracker(threshold);
  std::vector<int> all(static_cast<std::size_t>(dims.d()));
  for (int c = 0; c < dims.d(); ++c) all[static_cast<std::size_t>(c)] = c;
  for (int k = dims.m; k < dims.d(); ++k) {
    for (const double t : t_grid) {
      try {
        const auto samples = linearity_samples(flow, dims, t, k, all, radius, count, derive_seed(seed, k));
        const auto fit = fit_linearity(samples, all, radius * 1.0000001, k);
        tracker.observe(fit.residual, [&] {
          return Witness{"k=" + std::to_string(k) + " t=" + fmt(t), "residual=" + fmt(fit.residual),
                         "zeta=" + fmt(fit.zeta)};
        });
      } catch (const std::exception& ex) {
        report.failures.push_back("k=" + std::to_string(k) + " t=" + fmt(t) + ": " + ex.what());
      }
    }
  }
  if (dims.n == 0) report.notes.push_back("J is empty; the check is vacuous");
  tracker.fill(report);
  return report;
}

// Positive definiteness -----------------------------------------------------------

using ThetaFunction = std::function<cplx(const RVec&)>;

/// Per pair (y, z): the chain
///   |Θ(y+z) - Θ(y)Θ(z)|^2 <= (1 - |Θ(y)|^2)(1 - |Θ(z)|^2) <= 1,
/// det M_Θ(y,z) >= 0 and the 2x2 principal minors 1 - |Θ(.)|^2 >= 0 of the
/// Hermitian matrix M_Θ built from the points {0, y, -z}.
inline CheckReport posdef_certificate(const ThetaFunction& theta,
                                      std::span<const std::pair<RVec, RVec>> probe_pairs,
                                      double threshold) {
  CheckReport report;
  report.check_name = "posdef";
  report.grid_spec = "|pairs|=" + std::to_string(probe_pairs.size());
  if (probe_pairs.empty()) throw DomainError("posdef_certificate: no probe pairs");
  const cplx t0 = theta(RVec::Zero(probe_pairs.front().first.size()));
  if (std::abs(t0 - 1.0) > 1e-12) throw DomainError("posdef_certificate: theta(0) must equal 1");
  ViolationTracker tracker(threshold);
  for (const auto& [y, z] : probe_pairs) {
    const cplx a = theta(y), b = theta(z), c = theta(y + z);
    for (cplx v : {a, b, c}) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
        throw NumericalFailure("posdef_certificate: non-finite theta value");
      }
    }
    const double lhs = std::norm(c - a * b);
    const double mid = (1.0 - std::norm(a)) * (1.0 - std::norm(b));
    Eigen::Matrix3cd M;
    M << t0, std::conj(a), b, a, t0, c, std::conj(b), std::conj(c), t0;
    const double det = M.determinant().real();
    const double minor = std::max({std::norm(a), std::norm(b), std::norm(c)}) - 1.0;
    const double v = std::max({lhs - mid, mid - 1.0, -det, minor});
    tracker.observe(v, [&] {
      return Witness{"y=" + fmt(y) + " z=" + fmt(z),
                     "|T(y+z)-T(y)T(z)|^2=" + fmt(lhs) + " det=" + fmt(det),
                     "(1-|T(y)|^2)(1-|T(z)|^2)=" + fmt(mid) + " in [lhs, 1], det >= 0"};
    });
  }
  tracker.fill(report);
  return report;
}

/// Random probe pairs with entries uniform in [-scale, scale].
inline std::vector<std::pair<RVec, RVec>> random_probe_pairs(int dim, std::size_t count, double scale,
                                                             std::uint64_t seed) {
  Stream rng(seed);
  std::vector<std::pair<RVec, RVec>> out;
  for (std::size_t s = 0; s < count; ++s) {
    RVec y(dim), z(dim);
    for (int c = 0; c < dim; ++c) y[c] = scale * (2 * rng.uniform() - 1);
    for (int c = 0; c < dim; ++c) z[c] = scale * (2 * rng.uniform() - 1);
    out.emplace_back(y, z);
  }
  return out;
}

/// y -> Phi(t,iy) exp(<x, psi(t,iy)>), normalized by its value at y = 0.
inline ThetaFunction flow_theta(FlowSource flow, double t, RVec x) {
  const CVec zero = CVec::Zero(x.size());
  const auto e0 = flow(t, zero);
  const cplx norm0 = e0.phi * std::exp(pairing(e0.psi, x));
  return [flow = std::move(flow), t, x = std::move(x), norm0](const RVec& y) {
    const auto e = flow(t, CVec(y.cast<cplx>() * I_unit));
    return e.phi * std::exp(pairing(e.psi, x)) / norm0;
  };
}

// Feller decay --------------------------------------------------------------------

/// h(x) = exp(<x_I, u_I>) * int exp(i <x_J, y>) g(y) dy with g a product of
/// smooth bumps exp(-1/(1-r^2)) on the box center +- half_width.
struct TestFunction {
  CVec u_I;
  RVec center;
  RVec half_width;
  int nodes_per_dim = 201;
  std::string window = "bump";

  [[nodiscard]] double g(const RVec& y) const {
    double v = 1.0;
    for (Eigen::Index k = 0; k < y.size(); ++k) {
      const double r = (y[k] - center[k]) / half_width[k];
      if (std::abs(r) >= 1.0) return 0.0;
      v *= std::exp(-1.0 / (1.0 - r * r));
    }
    return v;
  }

  /// Interior nodes of the tensor trapezoid rule (g vanishes on the boundary).
  [[nodiscard]] std::vector<std::pair<RVec, double>> quadrature() const {
    const Eigen::Index n = center.size();
    std::vector<std::pair<RVec, double>> q;
    if (n == 0) {
      q.emplace_back(RVec(0), 1.0);
      return q;
    }
    const int per = nodes_per_dim;
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    while (true) {
      RVec y(n);
      double w = 1.0;
      for (Eigen::Index k = 0; k < n; ++k) {
        const double hstep = 2.0 * half_width[k] / (per + 1);
        y[k] = center[k] - half_width[k] + hstep * (idx[static_cast<std::size_t>(k)] + 1);
        w *= hstep;
      }
      const double gv = g(y);
      if (gv != 0.0) q.emplace_back(y, w * gv);
      Eigen::Index k = 0;
      while (k < n && ++idx[static_cast<std::size_t>(k)] == per) idx[static_cast<std::size_t>(k++)] = 0;
      if (k == n) break;
    }
    return q;
  }
};

/// A ray x_k = origin + s_k * direction, s_k uniform in [0, length].
inline std::vector<RVec> make_ray(const RVec& origin, const RVec& direction, double length, int points) {
  std::vector<RVec> ray;
  for (int k = 0; k < points; ++k) ray.push_back(origin + direction * (length * k / (points - 1)));
  return ray;
}

/// Evaluates P_t h(x) = int Phi(t,u_I,iy) exp(<x_I,psi_I> + <x_J, e^{t beta} iy>) g(y) dy
/// along the ray. Passes when the quarter-block maxima of |P_t h| are
/// nonincreasing after the first quarter and the final value is below
/// `ratio_threshold` times the initial one.
inline CheckReport feller_decay(const FlowSource& flow, const Dims& dims, const RMat& beta,
                                const TestFunction& test_fn, double t, std::span<const RVec> ray,
                                double ratio_threshold = 0.05, const Tolerances& tol = {}) {
  if (test_fn.u_I.size() != dims.m || test_fn.center.size() != dims.n) {
    throw DimensionError("feller_decay: test function shape does not match dims");
  }
  for (int k = 0; k < dims.m; ++k) {
    if (!(test_fn.u_I[k].real() < -tol.region_eps)) {
      throw DomainError("feller_decay: Re u_I must be strictly negative");
    }
  }
  if (ray.size() < 8) throw DomainError("feller_decay: ray needs at least 8 points");
  if (beta.rows() != dims.n || beta.cols() != dims.n) throw DimensionError("feller_decay: beta must be n x n");
  const auto nodes = test_fn.quadrature();
  struct NodeValue {
    cplx phi;
    CVec psi_I;
    CVec moved_y;  // e^{t beta} i y
    double weight;
  };
  const RMat etb = matrix_exp(beta, t);
  const auto values = parallel_map<NodeValue>(nodes.size(), [&](std::size_t q) {
    const auto& [y, w] = nodes[q];
    CVec u(dims.d());
    u.head(dims.m) = test_fn.u_I;
    u.tail(dims.n) = y.cast<cplx>() * I_unit;
    const auto e = detail::eval_in_Q(flow, t, u);
    return NodeValue{e.phi, e.psi.head(dims.m), etb.cast<cplx>() * (y.cast<cplx>() * I_unit), w};
  });

  std::vector<double> mags;
  for (const auto& x : ray) {
    require_length(x.size(), dims, "feller_decay");
    cplx acc = 0.0;
    for (const auto& v : values) {
      cplx expo = 0.0;
      for (int k = 0; k < dims.m; ++k) expo += x[k] * v.psi_I[k];
      for (int k = 0; k < dims.n; ++k) expo += x[dims.m + k] * v.moved_y[k];
      acc += v.phi * std::exp(expo) * v.weight;
    }
    mags.push_back(std::abs(acc));
  }

  CheckReport report;
  report.check_name = "feller_decay";
  report.grid_spec = "t=" + fmt(t) + " ray " + fmt(ray.front()) + " -> " + fmt(ray.back()) +
                     " points=" + std::to_string(ray.size()) + " nodes=" + std::to_string(nodes.size());
  const double initial = mags.front();
  if (!(initial > 0.0)) throw NumericalFailure("feller_decay: |P_t h| vanishes at the ray origin");
  const double ratio = mags.back() / initial;
  const std::size_t q = mags.size() / 4;
  double block[4];
  for (int b = 0; b < 4; ++b) {
    const std::size_t lo = b * q, hi = (b == 3) ? mags.size() : (b + 1) * q;
    block[b] = *std::max_element(mags.begin() + static_cast<long>(lo), mags.begin() + static_cast<long>(hi));
  }
  double growth = 0.0;
  for (int b = 1; b < 3; ++b) growth = std::max(growth, block[b + 1] / block[b]);
  const bool decreasing = growth <= 1.0;
  const double violation = decreasing ? ratio : std::max(ratio, growth);
  ViolationTracker tracker(ratio_threshold);
  tracker.observe(violation, [&] {
    return Witness{"t=" + fmt(t) + " x_end=" + fmt(ray.back()),
                   "|P_t h(x_end)|/|P_t h(x_0)|=" + fmt(ratio) + " block growth=" + fmt(growth),
                   "< " + fmt(ratio_threshold) + ", eventually decreasing"};
  });
  report.details["initial_magnitude"] = initial;
  report.details["final_magnitude"] = mags.back();
  report.details["final_ratio"] = ratio;
  report.details["block_growth"] = growth;
  tracker.fill(report);
  return report;
}

/// Model form: uses the model's flow and its beta, extracting beta when absent.
inline CheckReport feller_decay(const AffineModel& model, const TestFunction& test_fn, double t,
                                std::span<const RVec> ray, double ratio_threshold = 0.05,
                                const Tolerances& tol = {}) {
  const FlowSource flow = model_flow(model, tol);
  RMat beta = RMat::Zero(model.dims.n, model.dims.n);
  if (model.beta && model.beta->rows() == model.dims.n) beta = *model.beta;
  else if (model.dims.n > 0) beta = extract_beta(flow, model.dims, 0.1, 1e-6).beta;
  return feller_decay(flow, model.dims, beta, test_fn, t, ray, ratio_threshold, tol);
}

}  // namespace affine
