#include <catch_amalgamated.hpp>

#include "affine/models.hpp"

#include <cmath>

using namespace affine;
using Catch::Approx;

namespace {

CVec scalar(cplx z) {
  CVec v(1);
  v[0] = z;
  return v;
}

/// Sample mean and standard error of exp(<u, X>) over terminal draws.
std::pair<cplx, double> mc_cf(const std::vector<RVec>& xs, const CVec& u) {
  cplx mean = 0;
  for (const auto& x : xs) mean += exp_functional(u, x);
  mean /= static_cast<double>(xs.size());
  double var = 0;
  for (const auto& x : xs) var += std::norm(exp_functional(u, x) - mean);
  var /= static_cast<double>(xs.size() - 1);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

}  // namespace

TEST_CASE("levy generator and flow", "[models]") {
  const auto bm = make_levy(RVec::Zero(2), RMat::Identity(2, 2));
  CVec u(2);
  u << cplx(0, 1), cplx(0, -2);
  const auto e = (*bm.closed_flow)(1.5, u);
  CHECK((e.psi - u).norm() == 0.0);
  CHECK(std::abs(e.phi - std::exp(-0.5 * 1.5 * 5.0)) < 1e-15);

  const auto frozen = make_levy(RVec::Zero(1), RMat::Zero(1, 1));
  CHECK(frozen.gen.F(scalar({0, 3})) == cplx(0.0));
  CHECK((*frozen.closed_flow)(2.0, scalar({0, 3})).phi == cplx(1.0));

  CHECK_THROWS_AS(make_levy(RVec::Zero(2), (RMat(2, 2) << 1, 0, 0, -1).finished()), DomainError);
}

TEST_CASE("deterministic drift Levy: Phi(1, i) = e^i from sampled paths", "[models]") {
  RVec drift(1);
  drift << 1.0;
  const auto model = make_levy(drift, RMat::Zero(1, 1));
  const auto xs = sample_terminal(model.sampler, RVec::Zero(1), 1.0, 256, 1);
  const auto [g, se] = mc_cf(xs, scalar({0, 1}));
  CHECK(std::abs(g - std::exp(cplx(0, 1))) < 1e-14);
  CHECK(se < 1e-14);
}

TEST_CASE("cir generator values and error paths", "[models]") {
  const auto cir = make_cir(1.0, 1.0, 1.0);
  CHECK(cir.gen.R(scalar(-1.0))[0] == cplx(1.5));
  CHECK(cir.gen.F(scalar(-1.0)) == cplx(-1.0));
  CHECK(cir.gen.R(scalar(0.0))[0] == cplx(0.0));
  const auto e0 = (*cir.closed_flow)(3.0, scalar(0.0));
  CHECK(e0.phi == cplx(1.0));
  CHECK(e0.psi[0] == cplx(0.0));
  CHECK_THROWS_AS(make_cir(1.0, 1.0, 0.0), DomainError);
  CHECK_THROWS_AS(make_cir(-1.0, 1.0, 1.0), DomainError);
}

TEST_CASE("cir closed form reduces to u/(1 - t u)", "[models]") {
  const auto cir = make_cir(0.0, 0.0, std::sqrt(2.0));
  for (double t : {0.1, 0.5, 3.0}) {
    for (cplx u : {cplx(-1.0), cplx(-0.2, 3.0), cplx(0, -1.0)}) {
      const auto e = (*cir.closed_flow)(t, scalar(u));
      CHECK(std::abs(e.psi[0] - u / (1.0 - t * u)) < 1e-14);
    }
  }
}

TEST_CASE("cir exact sampler matches the flow within 3 standard errors", "[models][mc]") {
  const auto cir = make_cir(1.0, 1.0, 1.0);
  const auto xs = sample_terminal(cir.sampler, RVec::Ones(1), 0.5, 100000, 2024);
  const auto flow = (*cir.closed_flow)(0.5, scalar(-1.0));
  const cplx expected = flow.phi * std::exp(flow.psi[0] * 1.0);
  const auto [g, se] = mc_cf(xs, scalar(-1.0));
  CHECK(std::abs(g - expected) <= 3 * se);
  const auto [g2, se2] = mc_cf(xs, scalar({-0.5, 2.0}));
  const auto f2 = (*cir.closed_flow)(0.5, scalar({-0.5, 2.0}));
  CHECK(std::abs(g2 - f2.phi * std::exp(f2.psi[0])) <= 3 * se2);
}

TEST_CASE("heston-like structure", "[models]") {
  HestonLikeParams p;
  p.lambda = 0.0;
  const auto semi = make_heston_like(p);
  CVec u(2);
  u << cplx(-0.7, 0.4), cplx(0, 1.3);
  const auto flow_semi = model_ode_flow(semi);
  for (double t : {0.0, 0.3, 1.0, 4.0}) {
    CHECK(std::abs(flow_semi(t, u).psi[1] - u[1]) < 1e-14);
  }
  const auto e0 = flow_semi(0.0, u);
  CHECK(e0.phi == cplx(1.0));
  CHECK((e0.psi - u).norm() == 0.0);

  p.lambda = 1.0;
  const auto mr = make_heston_like(p);
  REQUIRE(mr.beta);
  CHECK((*mr.beta)(0, 0) == -1.0);
  const auto flow_mr = model_ode_flow(mr);
  CHECK(std::abs(flow_mr(0.8, u).psi[1] - std::exp(-0.8) * u[1]) < 1e-10);

  p.rho = 1.2;
  CHECK_THROWS_AS(make_heston_like(p), DomainError);
}

TEST_CASE("heston-like sampler matches the flow", "[models][mc]") {
  HestonLikeParams p;
  p.lambda = 1.0;
  const auto model = make_heston_like(p);
  RVec x0(2);
  x0 << 0.5, 1.0;
  const double t = 0.5;
  const auto xs = sample_terminal(model.sampler, x0, t, 40000, 77);
  const auto flow = model_ode_flow(model);
  for (const CVec& u : {(CVec(2) << cplx(-1.0, 0.5), cplx(0, 1.0)).finished(),
                        (CVec(2) << cplx(0, 0), cplx(0, 2.0)).finished()}) {
    const auto e = flow(t, u);
    const cplx expected = e.phi * std::exp(pairing(e.psi, x0));
    const auto [g, se] = mc_cf(xs, u);
    CHECK(std::abs(g - expected) <= 3 * se);
  }
}

TEST_CASE("simulate contracts", "[models]") {
  RVec drift(2);
  drift << 0.5, -1.0;
  const auto det = make_levy(drift, RMat::Zero(2, 2));
  RVec x0(2);
  x0 << 1.0, 2.0;
  const auto paths = simulate(det, x0, 1.0, 0.1, 3, 5);
  REQUIRE(paths.size() == 3);
  for (const auto& p : paths) {
    REQUIRE(p.size() == 11);
    for (std::size_t k = 0; k < p.size(); ++k) {
      CHECK((p.values[k] - (x0 + drift * p.times[k])).norm() < 1e-14);
    }
  }

  const auto cir = make_cir(0.2, 1.0, 1.5);
  const auto a = simulate(cir, RVec::Constant(1, 0.1), 1.0, 0.01, 1000, 9);
  const auto b = simulate(cir, RVec::Constant(1, 0.1), 1.0, 0.01, 1000, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].size(); ++k) {
      REQUIRE(a[i].values[k][0] == b[i].values[k][0]);
      REQUIRE(a[i].values[k][0] >= 0.0);
    }
  }
  CHECK_THROWS_AS(simulate(cir, RVec::Constant(1, -0.1), 1.0, 0.1, 2, 1), DomainError);
}

TEST_CASE("simulation is independent of the worker count", "[models]") {
  const auto cir = make_cir(1.0, 1.0, 1.0);
  set_max_threads(1);
  const auto a = sample_terminal(cir.sampler, RVec::Ones(1), 0.7, 5000, 3);
  set_max_threads(4);
  const auto b = sample_terminal(cir.sampler, RVec::Ones(1), 0.7, 5000, 3);
  set_max_threads(0);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i][0] == b[i][0]);
}

TEST_CASE("cir paths stay in the cone over 10^4 paths", "[models]") {
  const auto cir = make_cir(0.05, 2.0, 2.0);  // Feller condition violated
  const auto paths = simulate(cir, RVec::Constant(1, 0.01), 0.5, 0.01, 10000, 17);
  std::size_t zeros = 0;
  for (const auto& p : paths) {
    for (const auto& v : p.values) {
      REQUIRE(v[0] >= 0.0);
      zeros += v[0] == 0.0;
    }
  }
  SUCCEED("zero hits: " << zeros);
}

TEST_CASE("ou closed flow and exact sampler agree", "[models][mc]") {
  RMat beta(2, 2);
  beta << -1.0, 0.4, 0.0, -0.5;
  RVec drift(2);
  drift << 0.3, 0.1;
  RMat cov(2, 2);
  cov << 0.5, 0.1, 0.1, 0.3;
  const auto ou = make_ou(beta, drift, cov);
  RVec x0(2);
  x0 << 1.0, -1.0;
  const auto xs = sample_terminal(ou.sampler, x0, 0.8, 50000, 8);
  CVec u(2);
  u << cplx(0, 0.7), cplx(0, -1.1);
  const auto e = (*ou.closed_flow)(0.8, u);
  const auto [g, se] = mc_cf(xs, u);
  CHECK(std::abs(g - e.phi * std::exp(pairing(e.psi, x0))) <= 3 * se);
}

TEST_CASE("make_model by name", "[models]") {
  CHECK(make_model("cir", {{"a", "1"}, {"b", "1"}, {"sigma", "1"}}).dims == Dims(1, 0));
  CHECK(make_model("heston_like", {{"lambda", "1"}}).dims == Dims(1, 1));
  CHECK(make_model("levy", {{"drift", "0, 1"}}).dims == Dims(0, 2));
  CHECK_THROWS_AS(make_model("vasicek", {}), ConfigError);
  CHECK_THROWS_AS(make_model("cir", {{"a", "1"}, {"b", "1"}, {"sigma", "1"}, {"kappa", "2"}}),
                  ConfigError);
  CHECK_THROWS_AS(make_model("cir", {{"a", "x"}, {"b", "1"}, {"sigma", "1"}}), ConfigError);
}
