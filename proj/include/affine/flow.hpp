#pragma once

// Transform pair (Phi, psi) from generator data by integrating the
// generalized Riccati system
//
//   d/ds psi(s,u) = R(psi(s,u)),  psi(0,u) = u
//   d/ds phi(s,u) = F(psi(s,u)),  phi(0,u) = 0,     Phi = exp(phi)
//
// Integrating phi = log Phi instead of Phi keeps the logarithm continuous in
// s without any branch bookkeeping.

#include "affine/core.hpp"
#include "affine/generator.hpp"
#include "affine/matrix_exp.hpp"
#include "affine/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace affine {

namespace detail {

struct DormandPrince {
  static constexpr double a21 = 1.0 / 5.0;
  static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
  static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
  static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                          a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
  static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                          a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
  static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                          b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
  static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                          e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
};

/// Right-hand side of the (phi, psi) system packed as y = (phi, psi_1..psi_d).
inline CVec riccati_rhs(const GeneratorPair& gen, const CVec& y) {
  const Eigen::Index d = y.size() - 1;
  const CVec psi = y.tail(d);
  const cplx f = gen.F(psi);
  const CVec r = gen.R(psi);
  if (r.size() != d) throw DimensionError("generator R returned a vector of wrong length");
  if (!std::isfinite(f.real()) || !std::isfinite(f.imag()) || !r.allFinite()) {
    throw NumericalFailure("generator returned a non-finite value");
  }
  CVec out(d + 1);
  out[0] = f;
  out.tail(d) = r;
  return out;
}

inline FlowEvaluation pack_evaluation(double t, const CVec& u, const CVec& y, bool in_q,
                                      double reached) {
  FlowEvaluation e;
  e.t = t;
  e.u = u;
  e.log_phi = y[0];
  e.phi = std::exp(y[0]);
  e.psi = y.tail(y.size() - 1);
  e.in_Q = in_q;
  e.reached = reached;
  return e;
}

/// True when psi left U by more than region_eps.
inline bool psi_exits_U(const CVec& psi, const Dims& dims, double eps) {
  for (int k = 0; k < dims.m; ++k) {
    if (psi[k].real() > eps) return true;
  }
  for (int k = dims.m; k < dims.d(); ++k) {
    if (std::abs(psi[k].real()) > eps) return true;
  }
  return false;
}

/// Integrates from s = 0 through every time in `checkpoints` (sorted,
/// nonnegative); emit(i, evaluation) is called once per checkpoint. After a
/// Q-exit the remaining checkpoints receive the halted state with in_Q =
/// false.
template <typename Emit>
void integrate_riccati(const GeneratorPair& gen, const Dims& dims, const CVec& u,
                       std::span<const double> checkpoints, const Tolerances& tol, Emit&& emit) {
  using DP = DormandPrince;
  const Eigen::Index n = dims.d() + 1;
  CVec y(n);
  y[0] = 0.0;
  y.tail(dims.d()) = u;
  const double log_q_floor = std::log(tol.q_zero_eps);

  double s = 0.0;
  std::size_t next = 0;
  while (next < checkpoints.size() && checkpoints[next] <= 0.0) {
    emit(next, FlowEvaluation::identity(u));
    ++next;
  }
  if (next == checkpoints.size()) return;

  CVec k1 = riccati_rhs(gen, y);
  const double t_end = checkpoints.back();

  auto err_scale = [&](const CVec& a, const CVec& b, const CVec& err) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sc = tol.ode_abs + tol.ode_rel * std::max(std::abs(a[i]), std::abs(b[i]));
      worst = std::max(worst, std::abs(err[i]) / sc);
    }
    return worst;
  };

  // Initial step (Hairer, Norsett, Wanner; II.4).
  double h;
  {
    const double d0 = err_scale(y, y, y);
    const double d1 = err_scale(y, y, k1);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, t_end);
    const CVec y1 = y + h0 * k1;
    const CVec k2 = riccati_rhs(gen, y1);
    const double d2 = err_scale(y, y, CVec(k2 - k1)) / h0;
    const double h1 = (std::max(d1, d2) <= 1e-15) ? std::max(1e-6, h0 * 1e-3)
                                                  : std::pow(0.01 / std::max(d1, d2), 0.2);
    h = std::min({100.0 * h0, h1, t_end});
  }

  constexpr double safety = 0.9, alpha = 0.17, beta_pi = 0.04;
  constexpr double min_fac = 0.2, max_fac = 5.0;
  constexpr long max_steps = 5'000'000;
  double err_prev = 1e-4;
  long steps = 0;
  bool rejected_last = false;

  while (next < checkpoints.size()) {
    const double target = checkpoints[next];
    if (++steps > max_steps) throw StiffnessFailure("ode_flow: step budget exhausted", s);
    bool hits_target = false;
    double step = h;
    if (s + step >= target - 1e-14 * std::max(1.0, target)) {
      step = target - s;
      hits_target = true;
    }
    if (step < 1e-14 * std::max(1.0, s)) {
      if (hits_target) {
        s = target;
      } else {
        throw StiffnessFailure("ode_flow: step size underflow", s);
      }
    } else {
      const CVec k2 = riccati_rhs(gen, y + step * DP::a21 * k1);
      const CVec k3 = riccati_rhs(gen, y + step * (DP::a31 * k1 + DP::a32 * k2));
      const CVec k4 = riccati_rhs(gen, y + step * (DP::a41 * k1 + DP::a42 * k2 + DP::a43 * k3));
      const CVec k5 = riccati_rhs(
          gen, y + step * (DP::a51 * k1 + DP::a52 * k2 + DP::a53 * k3 + DP::a54 * k4));
      const CVec k6 = riccati_rhs(gen, y + step * (DP::a61 * k1 + DP::a62 * k2 + DP::a63 * k3 +
                                                   DP::a64 * k4 + DP::a65 * k5));
      const CVec y_new =
          y + step * (DP::b1 * k1 + DP::b3 * k3 + DP::b4 * k4 + DP::b5 * k5 + DP::b6 * k6);
      const CVec k7 = riccati_rhs(gen, y_new);
      const CVec err = step * (DP::e1 * k1 + DP::e3 * k3 + DP::e4 * k4 + DP::e5 * k5 +
                               DP::e6 * k6 + DP::e7 * k7);
      const double e = err_scale(y, y_new, err);
      if (!std::isfinite(e)) throw NumericalFailure("ode_flow: non-finite error estimate");

      if (e <= 1.0) {
        s = hits_target ? target : s + step;
        y = y_new;
        k1 = k7;
        double fac = safety * std::pow(std::max(e, 1e-10), -alpha) * std::pow(err_prev, beta_pi);
        fac = std::clamp(fac, min_fac, max_fac);
        if (rejected_last) fac = std::min(fac, 1.0);
        if (!hits_target) h = step * fac;
        else h = std::max(h, step) * fac;
        err_prev = std::max(e, 1e-4);
        rejected_last = false;
      } else {
        h = step * std::max(min_fac, safety * std::pow(e, -alpha));
        rejected_last = true;
        continue;
      }
    }

    const bool left_q = y[0].real() < log_q_floor || psi_exits_U(y.tail(dims.d()), dims, tol.region_eps);
    if (left_q) {
      for (; next < checkpoints.size(); ++next) {
        emit(next, pack_evaluation(checkpoints[next], u, y, false, s));
      }
      return;
    }
    if (s >= target) {
      emit(next, pack_evaluation(target, u, y, true, target));
      ++next;
      while (next < checkpoints.size() && checkpoints[next] <= s) {
        emit(next, pack_evaluation(checkpoints[next], u, y, true, s));
        ++next;
      }
    }
  }
}

}  // namespace detail

/// Dims inferred from a generator needs to be explicit, so the public entry
/// points take it alongside the generator.
inline FlowEvaluation ode_flow(const GeneratorPair& gen, const Dims& dims, double t,
                               const ComplexPoint& u, const Tolerances& tol = {}) {
  require_length(u.size(), dims, "ode_flow");
  if (!(t >= 0.0) || !std::isfinite(t)) throw DomainError("ode_flow: t must be finite and >= 0");
  if (!in_U(u, dims, tol)) throw DomainError("ode_flow: u is outside U");
  if (!gen.valid()) throw Error("ode_flow: generator pair is empty");
  FlowEvaluation out = FlowEvaluation::identity(u);
  const std::array<double, 1> cps{t};
  detail::integrate_riccati(gen, dims, u, cps, tol,
                            [&](std::size_t, FlowEvaluation e) { out = std::move(e); });
  out.t = t;
  return out;
}

inline FlowSource ode_source(GeneratorPair gen, Dims dims, Tolerances tol = {}) {
  return [gen = std::move(gen), dims, tol](double t, const CVec& u) {
    return ode_flow(gen, dims, t, u, tol);
  };
}

/// One cell of a flow grid; failures are kept per cell.
struct FlowCell {
  std::optional<FlowEvaluation> value;
  std::string error;

  [[nodiscard]] bool ok() const { return value.has_value(); }
};

/// grid[i][j] = flow at (t_grid[i], u_grid[j]); one integration per u.
inline std::vector<std::vector<FlowCell>> flow_on_grid(const GeneratorPair& gen, const Dims& dims,
                                                       std::span<const double> t_grid,
                                                       std::span<const ComplexPoint> u_grid,
                                                       const Tolerances& tol = {}) {
  if (t_grid.empty() || u_grid.empty()) throw DomainError("flow_on_grid: empty grid");
  if (!std::is_sorted(t_grid.begin(), t_grid.end())) {
    throw DomainError("flow_on_grid: t_grid must be sorted");
  }
  if (t_grid.front() < 0.0) throw DomainError("flow_on_grid: negative time");
  std::vector<std::vector<FlowCell>> grid(t_grid.size(), std::vector<FlowCell>(u_grid.size()));
  parallel_for(u_grid.size(), [&](std::size_t j) {
    const CVec& u = u_grid[j];
    try {
      require_length(u.size(), dims, "flow_on_grid");
      if (!in_U(u, dims, tol)) throw DomainError("flow_on_grid: u is outside U");
      detail::integrate_riccati(gen, dims, u, t_grid, tol, [&](std::size_t i, FlowEvaluation e) {
        grid[i][j].value = std::move(e);
      });
    } catch (const std::exception& ex) {
      for (auto& row : grid) {
        if (!row[j].value) row[j].error = ex.what();
      }
    }
  });
  return grid;
}

}  // namespace affine
