#pragma once

// Catalog of concrete affine models: generator pairs, closed-form flows where
// they exist, and transition samplers.

#include "affine/core.hpp"
#include "affine/flow.hpp"
#include "affine/generator.hpp"
#include "affine/matrix_exp.hpp"
#include "affine/parallel.hpp"
#include "affine/rng.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace affine {

/// Discrete cadlag trajectory, piecewise constant between grid times.
struct Path {
  std::vector<double> times;
  std::vector<RVec> values;

  [[nodiscard]] std::size_t size() const { return times.size(); }
  [[nodiscard]] bool empty() const { return times.empty(); }

  /// Value at the largest grid time <= t.
  [[nodiscard]] const RVec& at(double t) const {
    if (times.empty()) throw DomainError("Path::at: empty path");
    const double slack = 1e-12 * std::max(1.0, std::abs(t));
    auto it = std::upper_bound(times.begin(), times.end(), t + slack);
    if (it == times.begin()) throw DomainError("Path::at: t precedes the first grid time");
    return values[static_cast<std::size_t>(std::distance(times.begin(), it) - 1)];
  }
};

/// Draws X_{s+dt} given X_s = x.
using TransitionSampler = std::function<StatePoint(const StatePoint& x, double dt, Stream& rng)>;

struct ProcessSampler {
  Dims dims;
  TransitionSampler transition;
  /// True when the transition is exact in law for any dt.
  bool exact = false;
  std::string scheme;
};

struct AffineModel {
  std::string name;
  Dims dims;
  GeneratorPair gen;
  std::optional<FlowSource> closed_flow;
  /// Matrix of the linear J-dynamics psi_J(t,u) = exp(t beta) u_J when known.
  std::optional<RMat> beta;
  ProcessSampler sampler;
  std::map<std::string, std::string> params;
};

/// Closed form when available, else the Riccati integrator.
inline FlowSource model_flow(const AffineModel& model, const Tolerances& tol = {}) {
  if (model.closed_flow) return *model.closed_flow;
  return ode_source(model.gen, model.dims, tol);
}

inline FlowSource model_ode_flow(const AffineModel& model, const Tolerances& tol = {}) {
  return ode_source(model.gen, model.dims, tol);
}

// Random variates -------------------------------------------------------------

/// Standard normal via Box-Muller; one variate per call, no hidden state.
inline double standard_normal(Stream& rng) {
  double u1 = rng.uniform();
  while (u1 <= 0.0) u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Symmetric square root of a PSD matrix; throws on a negative eigenvalue.
inline RMat psd_sqrt(const RMat& cov, const char* what) {
  if (cov.rows() != cov.cols()) throw DimensionError(std::string(what) + ": matrix not square");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff())) {
    throw DomainError(std::string(what) + ": matrix not symmetric");
  }
  if (cov.size() == 0) return cov;
  Eigen::SelfAdjointEigenSolver<RMat> es(0.5 * (cov + cov.transpose()));
  const double floor = -1e-12 * (1.0 + es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < floor) {
    throw DomainError(std::string(what) + ": matrix not positive semidefinite");
  }
  const RVec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

inline RVec gaussian_vector(const RMat& root, Stream& rng) {
  RVec z(root.cols());
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = standard_normal(rng);
  return root * z;
}

/// CIR transition dV = (a - bV)dt + sigma sqrt(V) dW over dt, exact in law
/// (scaled noncentral chi-square as a Poisson mixture of Gammas).
inline double cir_exact_step(double v, double a, double b, double sigma, double dt, Stream& rng) {
  const double s2 = sigma * sigma;
  const double growth = (b == 0.0) ? dt : -std::expm1(-b * dt) / b;
  const double c = s2 * growth / 4.0;
  const double dof = 4.0 * a / s2;
  const double noncentral = v * std::exp(-b * dt) / c;
  long draws = 0;
  if (noncentral > 0.0) {
    std::poisson_distribution<long> pois(noncentral / 2.0);
    draws = pois(rng);
  }
  const double shape = 0.5 * dof + static_cast<double>(draws);
  if (shape <= 0.0) return 0.0;
  std::gamma_distribution<double> gam(shape, 1.0);
  return 2.0 * c * gam(rng);
}

// Levy ------------------------------------------------------------------------

/// Brownian motion with drift on R^n: psi(t,u) = u,
/// F(u) = <drift, u> + u^T cov u / 2.
inline AffineModel make_levy(const RVec& drift, const RMat& covariance) {
  const int n = static_cast<int>(drift.size());
  if (n < 1) throw DimensionError("make_levy: need at least one component");
  if (covariance.rows() != n || covariance.cols() != n) {
    throw DimensionError("make_levy: covariance must be n x n");
  }
  const RMat root = psd_sqrt(covariance, "make_levy");
  const Dims dims(0, n);
  auto cumulant = [drift, covariance](const CVec& u) -> cplx {
    const CVec cu = covariance.cast<cplx>() * u;
    return pairing(u, drift) + 0.5 * (u.transpose() * cu)(0, 0);
  };

  AffineModel model;
  model.name = "levy";
  model.dims = dims;
  model.gen.F = cumulant;
  model.gen.R = [n](const CVec&) { return CVec::Zero(n).eval(); };
  model.closed_flow = [cumulant](double t, const CVec& u) {
    FlowEvaluation e = FlowEvaluation::identity(u);
    e.t = t;
    e.reached = t;
    e.log_phi = t * cumulant(u);
    e.phi = std::exp(e.log_phi);
    return e;
  };
  model.beta = RMat::Zero(n, n);
  model.sampler = ProcessSampler{
      dims,
      [drift, root](const StatePoint& x, double dt, Stream& rng) -> StatePoint {
        return x + drift * dt + gaussian_vector(root, rng) * std::sqrt(dt);
      },
      true, "exact Gaussian increments"};
  return model;
}

// Ornstein-Uhlenbeck ----------------------------------------------------------

namespace detail {

struct GaussianMoments {
  RMat transition;  // exp(dt B)
  RVec mean;        // int_0^dt exp(s B) drift ds
  RMat cov;         // int_0^dt exp(s B) Sigma exp(s B^T) ds
};

/// Van Loan block exponentials for the moments of dX = (drift + B X)dt + dW.
inline GaussianMoments ou_moments(const RMat& B, const RVec& drift, const RMat& sigma, double dt) {
  const Eigen::Index n = B.rows();
  RMat block_mean = RMat::Zero(n + 1, n + 1);
  block_mean.topLeftCorner(n, n) = B;
  block_mean.topRightCorner(n, 1) = drift;
  const RMat em = matrix_exp(block_mean, dt);

  RMat block_cov = RMat::Zero(2 * n, 2 * n);
  block_cov.topLeftCorner(n, n) = -B;
  block_cov.topRightCorner(n, n) = sigma;
  block_cov.bottomRightCorner(n, n) = B.transpose();
  const RMat ec = matrix_exp(block_cov, dt);
  const RMat f22 = ec.bottomRightCorner(n, n);
  const RMat f12 = ec.topRightCorner(n, n);
  RMat cov = f22.transpose() * f12;
  cov = 0.5 * (cov + cov.transpose()).eval();
  return {em.topLeftCorner(n, n), em.topRightCorner(n, 1), cov};
}

}  // namespace detail

/// Multivariate OU on R^n with psi(t,u) = exp(t beta) u, i.e. drift matrix
/// B = beta^T in dX = (drift + B X)dt + dW, Cov(dW) = covariance dt.
inline AffineModel make_ou(const RMat& beta, const RVec& drift, const RMat& covariance) {
  const int n = static_cast<int>(drift.size());
  if (n < 1) throw DimensionError("make_ou: need at least one component");
  if (beta.rows() != n || beta.cols() != n) throw DimensionError("make_ou: beta must be n x n");
  if (covariance.rows() != n || covariance.cols() != n) {
    throw DimensionError("make_ou: covariance must be n x n");
  }
  psd_sqrt(covariance, "make_ou");
  const RMat B = beta.transpose();
  const Dims dims(0, n);

  AffineModel model;
  model.name = "ou";
  model.dims = dims;
  model.gen.F = [drift, covariance](const CVec& u) -> cplx {
    const CVec cu = covariance.cast<cplx>() * u;
    return pairing(u, drift) + 0.5 * (u.transpose() * cu)(0, 0);
  };
  model.gen.R = [beta](const CVec& u) { return (beta.cast<cplx>() * u).eval(); };
  model.closed_flow = [B, beta, drift, covariance](double t, const CVec& u) {
    FlowEvaluation e = FlowEvaluation::identity(u);
    e.t = t;
    e.reached = t;
    if (t == 0.0) return e;
    const auto mom = detail::ou_moments(B, drift, covariance, t);
    const CVec cu = mom.cov.cast<cplx>() * u;
    e.log_phi = pairing(u, mom.mean) + 0.5 * (u.transpose() * cu)(0, 0);
    e.phi = std::exp(e.log_phi);
    e.psi = matrix_exp(beta, t).cast<cplx>() * u;
    return e;
  };
  model.beta = beta;

  struct Cache {
    std::mutex mutex;
    std::map<double, std::pair<detail::GaussianMoments, RMat>> entries;
  };
  auto cache = std::make_shared<Cache>();
  model.sampler = ProcessSampler{
      dims,
      [B, drift, covariance, cache](const StatePoint& x, double dt, Stream& rng) -> StatePoint {
        const std::pair<detail::GaussianMoments, RMat>* entry = nullptr;
        {
          std::lock_guard lock(cache->mutex);
          auto it = cache->entries.find(dt);
          if (it == cache->entries.end()) {
            auto mom = detail::ou_moments(B, drift, covariance, dt);
            RMat root = psd_sqrt(mom.cov, "ou transition");
            it = cache->entries.emplace(dt, std::make_pair(std::move(mom), std::move(root))).first;
          }
          entry = &it->second;
        }
        return entry->first.transition * x + entry->first.mean + gaussian_vector(entry->second, rng);
      },
      true, "exact Gaussian transition"};
  return model;
}

// CIR -------------------------------------------------------------------------

/// Closed-form flow of psi' = s psi^2 - b psi, phi' = a psi with s = sigma^2/2.
inline FlowEvaluation cir_closed_flow(double a, double b, double sigma, double t, const CVec& u) {
  FlowEvaluation e = FlowEvaluation::identity(u);
  e.t = t;
  e.reached = t;
  if (t == 0.0) return e;
  const double s = 0.5 * sigma * sigma;
  const double growth = (b == 0.0) ? t : -std::expm1(-b * t) / b;
  const cplx w = 1.0 - s * u[0] * growth;
  e.psi[0] = u[0] * std::exp(-b * t) / w;
  e.log_phi = -(a / s) * std::log(w);
  e.phi = std::exp(e.log_phi);
  return e;
}

/// CIR square-root diffusion dV = (a - bV)dt + sigma sqrt(V) dW on R>=0.
inline AffineModel make_cir(double a, double b, double sigma) {
  if (!(a >= 0.0)) throw DomainError("make_cir: a must be >= 0");
  if (!(sigma > 0.0)) throw DomainError("make_cir: sigma must be > 0");
  const Dims dims(1, 0);
  const double s = 0.5 * sigma * sigma;

  AffineModel model;
  model.name = "cir";
  model.dims = dims;
  model.gen.F = [a](const CVec& u) -> cplx { return a * u[0]; };
  model.gen.R = [s, b](const CVec& u) {
    CVec r(1);
    r[0] = s * u[0] * u[0] - b * u[0];
    return r;
  };
  model.closed_flow = [a, b, sigma](double t, const CVec& u) {
    return cir_closed_flow(a, b, sigma, t, u);
  };
  model.beta = RMat(0, 0);
  model.sampler = ProcessSampler{
      dims,
      [a, b, sigma](const StatePoint& x, double dt, Stream& rng) -> StatePoint {
        StatePoint y(1);
        y[0] = cir_exact_step(x[0], a, b, sigma, dt, rng);
        return y;
      },
      true, "exact noncentral chi-square transition"};
  return model;
}

// Heston-like -----------------------------------------------------------------

struct HestonLikeParams {
  double a = 0.5;       // variance drift level times speed
  double b = 1.0;       // variance mean reversion
  double sigma = 0.5;   // vol of variance
  double rho = -0.5;    // leverage
  double lambda = 0.0;  // linear mean reversion of the J-component
  double mu0 = 0.0;     // constant J-drift
  double mu1 = -0.5;    // J-drift loading on the variance
  double substep = 1e-3;
};

namespace detail {

/// Riccati psi' = A psi^2 + B psi + C, phi' = a psi + c0 with constant
/// coefficients; roots chosen so that exp(D t) stays bounded.
inline std::pair<cplx, cplx> const_riccati(cplx A, cplx B, cplx C, cplx u, double t) {
  // returns (psi(t), integral_0^t psi)
  cplx D = std::sqrt(B * B - 4.0 * A * C);
  if (D.real() > 0.0) D = -D;
  const double scale = std::abs(B) + std::abs(A) + std::abs(C) + 1.0;
  if (std::abs(D) < 1e-10 * scale) {
    const cplx r = -B / (2.0 * A);
    const cplx w = 1.0 - A * (u - r) * t;
    return {r + (u - r) / w, r * t - std::log(w) / A};
  }
  const cplx r1 = (-B + D) / (2.0 * A);
  const cplx r2 = (-B - D) / (2.0 * A);
  if (std::abs(u - r2) < 1e-14 * scale) return {r2, r2 * t};
  const cplx g = (u - r1) / (u - r2);
  const cplx edt = std::exp(D * t);
  const cplx psi = (r1 - r2 * g * edt) / (1.0 - g * edt);
  const cplx integral = r1 * t - std::log((1.0 - g * edt) / (1.0 - g)) / A;
  return {psi, integral};
}

}  // namespace detail

/// Stochastic-volatility model on R>=0 x R:
///   dV = (a - bV)dt + sigma sqrt(V) dW1
///   dY = (mu0 + mu1 V - lambda Y)dt + sqrt(V) dW2,   d<W1,W2> = rho dt.
/// lambda = 0 is semi-homogeneous; otherwise beta = (-lambda).
inline AffineModel make_heston_like(const HestonLikeParams& p) {
  if (!(std::abs(p.rho) <= 1.0)) throw DomainError("make_heston_like: |rho| must be <= 1");
  if (!(p.sigma > 0.0)) throw DomainError("make_heston_like: sigma must be > 0");
  if (!(p.a >= 0.0)) throw DomainError("make_heston_like: a must be >= 0");
  if (!(p.substep > 0.0)) throw DomainError("make_heston_like: substep must be > 0");
  const Dims dims(1, 1);

  AffineModel model;
  model.name = "heston_like";
  model.dims = dims;
  model.gen.F = [p](const CVec& u) -> cplx { return p.a * u[0] + p.mu0 * u[1]; };
  model.gen.R = [p](const CVec& u) {
    CVec r(2);
    r[0] = 0.5 * p.sigma * p.sigma * u[0] * u[0] - p.b * u[0] + p.rho * p.sigma * u[0] * u[1] +
           0.5 * u[1] * u[1] + p.mu1 * u[1];
    r[1] = -p.lambda * u[1];
    return r;
  };
  if (p.lambda == 0.0) {
    model.closed_flow = [p](double t, const CVec& u) {
      FlowEvaluation e = FlowEvaluation::identity(u);
      e.t = t;
      e.reached = t;
      if (t == 0.0) return e;
      const cplx A = 0.5 * p.sigma * p.sigma;
      const cplx B = p.rho * p.sigma * u[1] - p.b;
      const cplx C = 0.5 * u[1] * u[1] + p.mu1 * u[1];
      const auto [psi1, integral] = detail::const_riccati(A, B, C, u[0], t);
      e.psi[0] = psi1;
      e.log_phi = p.a * integral + p.mu0 * u[1] * t;
      e.phi = std::exp(e.log_phi);
      return e;
    };
  }
  model.beta = RMat::Constant(1, 1, -p.lambda);
  model.sampler = ProcessSampler{
      dims,
      [p](const StatePoint& x, double dt, Stream& rng) -> StatePoint {
        const int steps = std::max(1, static_cast<int>(std::ceil(dt / p.substep - 1e-9)));
        const double h = dt / steps;
        const double decay = std::exp(-p.lambda * h);
        const double smear = (p.lambda == 0.0) ? 1.0 : -std::expm1(-p.lambda * h) / (p.lambda * h);
        const double orth = std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho));
        double v = x[0];
        double y = x[1];
        for (int k = 0; k < steps; ++k) {
          const double v_next = cir_exact_step(v, p.a, p.b, p.sigma, h, rng);
          const double iv = 0.5 * (v + v_next) * h;
          const double dw1 = (v_next - v - p.a * h + p.b * iv) / p.sigma;
          const double inc = p.mu0 * h + p.mu1 * iv + p.rho * dw1 +
                             orth * std::sqrt(std::max(iv, 0.0)) * standard_normal(rng);
          y = decay * y + smear * inc;
          v = v_next;
        }
        StatePoint out(2);
        out << v, y;
        return out;
      },
      false, "exact CIR variance, trapezoidal integrated variance for the J-component"};
  model.params = {{"a", std::to_string(p.a)},         {"b", std::to_string(p.b)},
                  {"sigma", std::to_string(p.sigma)}, {"rho", std::to_string(p.rho)},
                  {"lambda", std::to_string(p.lambda)}};
  return model;
}

// Non-affine control ----------------------------------------------------------

/// One-dimensional chain X -> X^2 + sqrt(dt) N(0,1): Markov but not affine.
/// Used to show that the factorization test can fail.
inline ProcessSampler make_nonaffine_control() {
  return ProcessSampler{Dims(0, 1),
                        [](const StatePoint& x, double dt, Stream& rng) -> StatePoint {
                          StatePoint y(1);
                          y[0] = x[0] * x[0] + std::sqrt(dt) * standard_normal(rng);
                          return y;
                        },
                        true, "x^2 + W_dt"};
}

// Simulation ------------------------------------------------------------------

/// Uniform grid 0, step, 2 step, ... ending exactly at horizon.
inline std::vector<double> uniform_grid(double horizon, double step) {
  if (!(horizon > 0.0) || !(step > 0.0)) throw DomainError("uniform_grid: horizon and step must be > 0");
  const auto count = static_cast<long>(std::llround(horizon / step));
  std::vector<double> grid;
  if (count >= 1 && std::abs(count * step - horizon) <= 1e-9 * horizon) {
    grid.reserve(static_cast<std::size_t>(count) + 1);
    for (long k = 0; k <= count; ++k) grid.push_back(k == count ? horizon : k * step);
    return grid;
  }
  for (long k = 0; k * step < horizon - 1e-12 * horizon; ++k) grid.push_back(k * step);
  grid.push_back(horizon);
  return grid;
}

inline Path simulate_path(const ProcessSampler& sampler, const StatePoint& x0,
                          const std::vector<double>& grid, Stream& rng) {
  Path path;
  path.times = grid;
  path.values.reserve(grid.size());
  path.values.push_back(x0);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    path.values.push_back(sampler.transition(path.values.back(), grid[k] - grid[k - 1], rng));
  }
  return path;
}

/// n_paths independent paths; path i uses stream_for(seed, i).
inline std::vector<Path> simulate(const ProcessSampler& sampler, const StatePoint& x0,
                                  double horizon, double grid_step, std::size_t n_paths,
                                  std::uint64_t seed) {
  require_in_D(x0, sampler.dims, "simulate");
  const auto grid = uniform_grid(horizon, grid_step);
  return parallel_map<Path>(n_paths, [&](std::size_t i) {
    Stream rng = stream_for(seed, i);
    return simulate_path(sampler, x0, grid, rng);
  });
}

inline std::vector<Path> simulate(const AffineModel& model, const StatePoint& x0, double horizon,
                                  double grid_step, std::size_t n_paths, std::uint64_t seed) {
  return simulate(model.sampler, x0, horizon, grid_step, n_paths, seed);
}

/// Terminal values X_t for n_paths independent starts at x0 (one transition
/// of length t per path).
inline std::vector<RVec> sample_terminal(const ProcessSampler& sampler, const StatePoint& x0,
                                         double t, std::size_t n_paths, std::uint64_t seed) {
  require_in_D(x0, sampler.dims, "sample_terminal");
  if (!(t >= 0.0)) throw DomainError("sample_terminal: t must be >= 0");
  return parallel_map<RVec>(n_paths, [&](std::size_t i) -> RVec {
    if (t == 0.0) return x0;
    Stream rng = stream_for(seed, i);
    return sampler.transition(x0, t, rng);
  });
}

// Construction by name ----------------------------------------------------------

using ParamMap = std::map<std::string, std::string>;

namespace detail {

inline double param_double(const ParamMap& p, const std::string& key, std::optional<double> fallback) {
  auto it = p.find(key);
  if (it == p.end()) {
    if (fallback) return *fallback;
    throw ConfigError("model parameter '" + key + "' is required");
  }
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (it->second.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("model parameter '" + key + "' is not a number: '" + it->second + "'");
  }
}

/// "1, 2; 3, 4" -> rows separated by ';', entries by ','.
inline RMat param_matrix(const ParamMap& p, const std::string& key, std::optional<RMat> fallback) {
  auto it = p.find(key);
  if (it == p.end()) {
    if (fallback) return *fallback;
    throw ConfigError("model parameter '" + key + "' is required");
  }
  std::vector<std::vector<double>> rows;
  std::stringstream rs(it->second);
  std::string row;
  while (std::getline(rs, row, ';')) {
    std::vector<double> entries;
    std::stringstream es(row);
    std::string entry;
    while (std::getline(es, entry, ',')) {
      try {
        std::size_t used = 0;
        entries.push_back(std::stod(entry, &used));
        if (entry.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ConfigError("model parameter '" + key + "': bad number '" + entry + "'");
      }
    }
    rows.push_back(std::move(entries));
  }
  if (rows.empty()) throw ConfigError("model parameter '" + key + "' is empty");
  RMat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) {
      throw ConfigError("model parameter '" + key + "': ragged matrix");
    }
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

inline RVec param_vector(const ParamMap& p, const std::string& key, std::optional<RVec> fallback) {
  std::optional<RMat> fb;
  if (fallback) fb = RMat(*fallback);
  RMat m = param_matrix(p, key, fb);
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  throw ConfigError("model parameter '" + key + "' must be a vector");
}

inline void reject_unknown(const ParamMap& p, std::initializer_list<const char*> known,
                           const std::string& model) {
  for (const auto& [k, v] : p) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw ConfigError("model '" + model + "' has no parameter '" + k + "'");
  }
}

}  // namespace detail

inline const std::vector<std::string>& catalog_names() {
  static const std::vector<std::string> names{"levy", "ou", "cir", "heston_like"};
  return names;
}

/// Builds a catalog model from a name and string-valued parameters.
inline AffineModel make_model(const std::string& name, const ParamMap& p) {
  using namespace detail;
  AffineModel model;
  if (name == "levy") {
    reject_unknown(p, {"drift", "covariance"}, name);
    const RVec drift = param_vector(p, "drift", std::nullopt);
    const auto n = drift.size();
    model = make_levy(drift, param_matrix(p, "covariance", RMat(RMat::Identity(n, n))));
  } else if (name == "ou") {
    reject_unknown(p, {"drift", "covariance", "beta"}, name);
    const RVec drift = param_vector(p, "drift", std::nullopt);
    const auto n = drift.size();
    model = make_ou(param_matrix(p, "beta", RMat(-RMat::Identity(n, n))), drift,
                    param_matrix(p, "covariance", RMat(RMat::Identity(n, n))));
  } else if (name == "cir") {
    reject_unknown(p, {"a", "b", "sigma"}, name);
    model = make_cir(param_double(p, "a", std::nullopt), param_double(p, "b", std::nullopt),
                     param_double(p, "sigma", std::nullopt));
  } else if (name == "heston_like") {
    reject_unknown(p, {"a", "b", "sigma", "rho", "lambda", "mu0", "mu1", "substep"}, name);
    HestonLikeParams hp;
    hp.a = param_double(p, "a", hp.a);
    hp.b = param_double(p, "b", hp.b);
    hp.sigma = param_double(p, "sigma", hp.sigma);
    hp.rho = param_double(p, "rho", hp.rho);
    hp.lambda = param_double(p, "lambda", hp.lambda);
    hp.mu0 = param_double(p, "mu0", hp.mu0);
    hp.mu1 = param_double(p, "mu1", hp.mu1);
    hp.substep = param_double(p, "substep", hp.substep);
    model = make_heston_like(hp);
  } else {
    throw ConfigError("unknown model name '" + name + "'");
  }
  model.params = p;
  return model;
}

}  // namespace affine
