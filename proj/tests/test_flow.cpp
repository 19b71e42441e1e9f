#include <catch_amalgamated.hpp>

#include "affine/flow.hpp"
#include "affine/models.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <vector>

using namespace affine;
using Catch::Approx;

namespace {

CVec scalar(cplx z) {
  CVec v(1);
  v[0] = z;
  return v;
}

CVec pair(cplx a, cplx b) {
  CVec v(2);
  v << a, b;
  return v;
}

Tolerances tight() {
  Tolerances tol;
  tol.ode_rel = 1e-10;
  tol.ode_abs = 1e-12;
  return tol;
}

}  // namespace

TEST_CASE("matrix_exp closed forms", "[flow][matrix_exp]") {
  const RMat zero = RMat::Zero(3, 3);
  CHECK((matrix_exp(zero) - RMat::Identity(3, 3)).norm() == 0.0);

  RMat nil(2, 2);
  nil << 0, 1, 0, 0;
  RMat expected(2, 2);
  expected << 1, 1, 0, 1;
  CHECK((matrix_exp(nil, 1.0) - expected).norm() < 1e-15);

  const RMat scalar_m = RMat::Constant(1, 1, -1.0);
  CHECK(matrix_exp(scalar_m, 2.0)(0, 0) == Approx(std::exp(-2.0)).epsilon(1e-15));

  CHECK_THROWS_AS(matrix_exp(RMat::Zero(2, 3)), DimensionError);
  RMat bad = RMat::Zero(2, 2);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(matrix_exp(bad), NumericalFailure);
}

TEST_CASE("matrix_exp agrees with an independent Schur-Parlett exponential", "[flow][matrix_exp]") {
  Stream rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 5;
    const double scale = std::pow(10.0, -3.0 + 4.0 * rng.uniform());
    RMat A(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = scale * (2 * rng.uniform() - 1);
    const RMat ours = matrix_exp(A, 1.0);
    const RMat ref = A.exp();
    REQUIRE((ours - ref).norm() <= 1e-12 * std::max(1.0, ref.norm()));
  }
}

TEST_CASE("ode_flow at t = 0 is the identity", "[flow]") {
  const auto cir = make_cir(1, 1, 1);
  const auto e = ode_flow(cir.gen, cir.dims, 0.0, scalar(-1.0));
  CHECK(e.phi == cplx(1.0, 0.0));
  CHECK(e.psi[0] == cplx(-1.0, 0.0));
  CHECK(e.log_phi == cplx(0.0, 0.0));
  CHECK(e.in_Q);
}

TEST_CASE("ode_flow matches the scalar Riccati closed form", "[flow]") {
  // a = 0, b = 0, sigma^2 = 2: psi' = psi^2, psi(t,u) = u/(1 - t u).
  const auto cir = make_cir(0.0, 0.0, std::sqrt(2.0));
  const auto e = ode_flow(cir.gen, cir.dims, 0.5, scalar(-1.0), tight());
  CHECK(std::abs(e.psi[0] - cplx(-2.0 / 3.0)) < 1e-10);
  CHECK(std::abs(e.phi - cplx(1.0)) < 1e-14);
}

TEST_CASE("ode_flow rejects u outside U and bad t", "[flow]") {
  const auto cir = make_cir(1, 1, 1);
  CHECK_THROWS_AS(ode_flow(cir.gen, cir.dims, 1.0, scalar(0.5)), DomainError);
  CHECK_THROWS_AS(ode_flow(cir.gen, cir.dims, -1.0, scalar(-0.5)), DomainError);
  CHECK_THROWS_AS(ode_flow(cir.gen, cir.dims, 1.0, pair(-1, 0)), DimensionError);
}

TEST_CASE("ode_flow reports non-finite generator output", "[flow]") {
  GeneratorPair gen;
  gen.F = [](const CVec&) { return cplx(std::nan(""), 0.0); };
  gen.R = [](const CVec& u) { return CVec::Zero(u.size()).eval(); };
  CHECK_THROWS_AS(ode_flow(gen, Dims(0, 1), 1.0, scalar(cplx(0, 1))), NumericalFailure);
}

TEST_CASE("ode_flow reports Q exit instead of clamping", "[flow]") {
  // F(u) = -1000 drives |Phi| below the Q threshold quickly.
  GeneratorPair gen;
  gen.F = [](const CVec&) { return cplx(-1000.0, 0.0); };
  gen.R = [](const CVec& u) { return CVec::Zero(u.size()).eval(); };
  Tolerances tol;
  tol.q_zero_eps = 1e-100;
  const auto e = ode_flow(gen, Dims(0, 1), 10.0, scalar(cplx(0, 1)), tol);
  CHECK_FALSE(e.in_Q);
  CHECK(e.reached < 10.0);
  CHECK(e.reached > 0.2);
}

TEST_CASE("ode_flow matches every catalog closed form", "[flow]") {
  HestonLikeParams hp;
  hp.a = 0.6;
  hp.b = 1.5;
  hp.sigma = 0.7;
  hp.rho = -0.6;
  RMat beta(2, 2);
  beta << -1.0, 0.5, -0.3, -0.4;
  RMat cov(2, 2);
  cov << 1.0, 0.3, 0.3, 0.5;
  RVec drift(2);
  drift << 0.2, -0.1;
  const std::vector<AffineModel> models{make_levy(drift, cov), make_ou(beta, drift, cov),
                                        make_cir(1.0, 1.0, 1.0), make_cir(0.3, -0.5, 0.8),
                                        make_heston_like(hp)};
  for (const auto& model : models) {
    INFO(model.name);
    const int d = model.dims.d();
    Stream rng(99);
    for (int trial = 0; trial < 20; ++trial) {
      CVec u(d);
      for (int k = 0; k < d; ++k) {
        const double re = model.dims.in_I(k) ? -2.0 * rng.uniform() : 0.0;
        u[k] = cplx(re, 6 * rng.uniform() - 3);
      }
      const double t = 3.0 * rng.uniform();
      const auto a = ode_flow(model.gen, model.dims, t, u, tight());
      const auto b = (*model.closed_flow)(t, u);
      REQUIRE(std::abs(a.phi - b.phi) < 1e-8);
      REQUIRE((a.psi - b.psi).norm() < 1e-8);
    }
  }
}

TEST_CASE("flow_on_grid matches pointwise evaluation", "[flow]") {
  const auto cir = make_cir(1, 1, 1);
  const std::vector<double> ts{0.0, 0.25, 0.5, 1.0, 2.0};
  const std::vector<CVec> us{scalar({-1.0, 5.0}), scalar({-0.3, -2.0}), scalar({-1.0, 5.0})};
  const auto grid = flow_on_grid(cir.gen, cir.dims, ts, us, tight());
  REQUIRE(grid.size() == ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    for (std::size_t j = 0; j < us.size(); ++j) {
      REQUIRE(grid[i][j].ok());
      const auto p = ode_flow(cir.gen, cir.dims, ts[i], us[j], tight());
      CHECK(std::abs(grid[i][j].value->phi - p.phi) < 1e-9);
      CHECK(std::abs(grid[i][j].value->psi[0] - p.psi[0]) < 1e-9);
    }
    // identical u -> identical rows
    CHECK(grid[i][0].value->phi == grid[i][2].value->phi);
  }
  const auto single = flow_on_grid(cir.gen, cir.dims, std::vector<double>{0.5},
                                   std::vector<CVec>{scalar(-1.0)}, tight());
  const auto p = ode_flow(cir.gen, cir.dims, 0.5, scalar(-1.0), tight());
  CHECK(single[0][0].value->phi == p.phi);
}

TEST_CASE("flow_on_grid keeps errors per cell", "[flow]") {
  const auto cir = make_cir(1, 1, 1);
  const std::vector<double> ts{0.5, 1.0};
  const std::vector<CVec> us{scalar(-1.0), scalar(2.0)};
  const auto grid = flow_on_grid(cir.gen, cir.dims, ts, us);
  CHECK(grid[0][0].ok());
  CHECK_FALSE(grid[0][1].ok());
  CHECK_FALSE(grid[1][1].error.empty());
}

TEST_CASE("log_phi stays continuous where the principal log jumps", "[flow]") {
  // Drift-only Levy: log Phi(t, i) = i * mu * t winds around the circle.
  RVec drift(1);
  drift << 4.0;
  const auto levy = make_levy(drift, RMat::Zero(1, 1));
  std::vector<double> ts;
  for (int k = 0; k <= 200; ++k) ts.push_back(0.05 * k);
  const auto grid = flow_on_grid(levy.gen, levy.dims, ts, std::vector<CVec>{scalar({0, 1})});
  int principal_jumps = 0;
  double max_step = 0.0;
  for (std::size_t i = 1; i < ts.size(); ++i) {
    const auto& a = *grid[i - 1][0].value;
    const auto& b = *grid[i][0].value;
    max_step = std::max(max_step, std::abs(b.log_phi - a.log_phi));
    if (std::abs(std::log(b.phi) - std::log(a.phi)) > 3.0) ++principal_jumps;
    REQUIRE(std::abs(std::exp(b.log_phi) - b.phi) <= 1e-12 * std::abs(b.phi));
  }
  CHECK(principal_jumps > 0);
  CHECK(max_step < 0.25);
  CHECK(grid.back()[0].value->log_phi.imag() == Approx(40.0).epsilon(1e-9));
}

TEST_CASE("semi-flow and unit-disc bounds on the ODE flow", "[flow][property]") {
  const auto cir = make_cir(1.0, 1.0, 1.0);
  HestonLikeParams hp;
  hp.lambda = 1.0;
  const auto heston = make_heston_like(hp);
  for (const auto* model : {&cir, &heston}) {
    const auto flow = model_ode_flow(*model, tight());
    Stream rng(3);
    for (int trial = 0; trial < 25; ++trial) {
      CVec u(model->dims.d());
      for (int k = 0; k < u.size(); ++k) {
        u[k] = cplx(model->dims.in_I(k) ? -2.0 * rng.uniform() : 0.0, 4 * rng.uniform() - 2);
      }
      const double t = 2 * rng.uniform(), s = 2 * rng.uniform();
      const auto ts = flow(t + s, u);
      const auto first = flow(t, u);
      const auto second = flow(s, first.psi);
      REQUIRE(std::abs(ts.phi - first.phi * second.phi) < 1e-8);
      REQUIRE((ts.psi - second.psi).norm() < 1e-8);
      // mirrored order psi(t+s,u) = psi(t, psi(s,u))
      const auto mirrored = flow(t, flow(s, u).psi);
      REQUIRE((ts.psi - mirrored.psi).norm() < 1e-8);
      REQUIRE(std::abs(ts.phi) <= 1.0 + 1e-12);
      REQUIRE(in_U(ts.psi, model->dims));
    }
  }
}

TEST_CASE("Levy flow reduces to the Cauchy equation", "[flow][property]") {
  RVec drift(2);
  drift << 0.3, -0.2;
  RMat cov(2, 2);
  cov << 1.0, 0.2, 0.2, 0.4;
  const auto levy = make_levy(drift, cov);
  const auto flow = model_ode_flow(levy, tight());
  const CVec u = pair({0, 1.5}, {0, -0.7});
  for (double t : {0.1, 0.7, 1.3}) {
    for (double s : {0.2, 0.9}) {
      CHECK(std::abs(flow(t + s, u).phi - flow(t, u).phi * flow(s, u).phi) < 1e-12);
      CHECK((flow(t, u).psi - u).norm() == 0.0);
    }
  }
}

TEST_CASE("halving ODE tolerances moves results by less than the coarse tolerance", "[flow]") {
  HestonLikeParams hp;
  hp.lambda = 0.7;
  const auto model = make_heston_like(hp);
  Tolerances coarse;
  coarse.ode_rel = 1e-8;
  coarse.ode_abs = 1e-10;
  Tolerances fine = coarse;
  fine.ode_rel /= 2;
  fine.ode_abs /= 2;
  const CVec u = pair(cplx(-0.5, 1.0), cplx(0, 2.0));
  for (double t : {0.5, 2.0, 5.0}) {
    const auto a = ode_flow(model.gen, model.dims, t, u, coarse);
    const auto b = ode_flow(model.gen, model.dims, t, u, fine);
    CHECK(std::abs(a.phi - b.phi) < 1e-8 * std::max(1.0, std::abs(a.phi)));
    CHECK((a.psi - b.psi).norm() < 1e-8 * std::max(1.0, a.psi.norm()));
  }
}
