#include <catch_amalgamated.hpp>

#include "affine/affine.hpp"

#include <sstream>
#include <string>

using namespace affine;
using Catch::Approx;

namespace {

std::string config_error(const std::string& text) {
  try {
    (void)parse_config_text(text, "test.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

cplx complex_of(const std::string& s) { return detail::parse_complex(s, {"x", 1, 1}); }

}  // namespace

TEST_CASE("complex literals", "[config]") {
  CHECK(complex_of("1.5") == cplx(1.5, 0));
  CHECK(complex_of("-2+3i") == cplx(-2, 3));
  CHECK(complex_of("-2 - 0.5i") == cplx(-2, -0.5));
  CHECK(complex_of("i") == cplx(0, 1));
  CHECK(complex_of("-i") == cplx(0, -1));
  CHECK(complex_of("0.25i") == cplx(0, 0.25));
  CHECK(complex_of("1e-3+2e+1i") == cplx(1e-3, 20));
  CHECK(complex_of("4+i") == cplx(4, 1));
  CHECK_THROWS_AS(complex_of("1+2j"), ConfigError);
  CHECK_THROWS_AS(complex_of(""), ConfigError);
}

TEST_CASE("config parses every section", "[config]") {
  const auto cfg = parse_config_text(R"(
# comment line
model.name = heston_like
model.lambda = 1            # trailing comment
grid.t = 0:1:5
grid.s = 0, 0.5
grid.u = -1+2i, 0.5i; -0.2, -i
tol.ode_rel = 1e-9
sim.paths = 1000
sim.seed = 99
sim.x0 = 0.5, 0.1
frame.N = 8, 16
check.semiflow.threshold = 1e-6
out.dir = results
)");
  CHECK(cfg.model_name == "heston_like");
  CHECK(cfg.model_params.at("lambda") == "1");
  REQUIRE(cfg.t_grid.size() == 5);
  CHECK(cfg.t_grid[1] == Approx(0.25));
  REQUIRE(cfg.u_grid);
  REQUIRE(cfg.u_grid->size() == 2);
  CHECK((*cfg.u_grid)[0][0] == cplx(-1, 2));
  CHECK((*cfg.u_grid)[1][1] == cplx(0, -1));
  CHECK(cfg.tol.ode_rel == 1e-9);
  CHECK(cfg.paths_or(5) == 1000);
  CHECK(cfg.require_seed() == 99);
  REQUIRE(cfg.sim.x0);
  CHECK((*cfg.sim.x0)[1] == 0.1);
  CHECK(cfg.frame.N == std::vector<int>{8, 16});
  CHECK(cfg.threshold_or("semiflow", 1.0) == 1e-6);
  CHECK(cfg.threshold_or("posdef", 2.0) == 2.0);
  CHECK(cfg.out_dir == "results");
}

TEST_CASE("config errors carry line and column", "[config]") {
  CHECK(config_error("model.name = cir\ngrid.t = 0, x\n") == "test.cfg:2:10: expected a finite number, found 'x'");
  CHECK(config_error("model.name = cir\n  bogus.key = 1\n").rfind("test.cfg:2:3: unknown key", 0) == 0);
  CHECK(config_error("model.name = cir\nmodel.name = ou\n").rfind("test.cfg:2:1: duplicate key", 0) == 0);
  CHECK(config_error("model.name = cir\nsim.paths\n").rfind("test.cfg:2:", 0) == 0);
  CHECK(config_error("model.name = cir\ncheck.nope.threshold = 1\n").find("unknown check 'nope'") != std::string::npos);
  CHECK(config_error("sim.seed = 1\n").find("model.name is required") != std::string::npos);
  CHECK(config_error("model.name = cir\nsim.paths = -3\n").find("nonnegative integer") != std::string::npos);
  CHECK(config_error("model.name = cir\ngrid.u = 1, i; 2\n").find("equal length") != std::string::npos);
}

TEST_CASE("model parameter errors become config errors", "[config]") {
  const auto cfg = parse_config_text("model.name = cir\nmodel.a = 0.5\nmodel.b = 1\n", "m.cfg");
  CHECK_THROWS_AS(model_from_config(cfg), ConfigError);
  const auto bad = parse_config_text("model.name = nosuch\n", "m.cfg");
  CHECK_THROWS_AS(model_from_config(bad), ConfigError);
  const auto ok = parse_config_text("model.name = cir\nmodel.a = 0.5\nmodel.b = 1\nmodel.sigma = 0.3\n");
  CHECK(model_from_config(ok).dims.m == 1);
}

TEST_CASE("path CSV round trip", "[io]") {
  const auto model = make_model("heston_like", {{"lambda", "1"}});
  RVec x0(2);
  x0 << 0.4, -0.1;
  const auto paths = simulate(model, x0, 0.2, 0.05, 3, 11);
  std::stringstream ss;
  write_paths_csv(ss, paths, true, "transformed");
  const auto table = read_paths_csv(ss);
  CHECK(table.meta.at("frame") == "transformed");
  REQUIRE(table.paths.size() == 3);
  for (std::size_t p = 0; p < 3; ++p) {
    REQUIRE(table.paths[p].size() == paths[p].size());
    for (std::size_t i = 0; i < paths[p].size(); ++i) {
      CHECK(table.paths[p].times[i] == paths[p].times[i]);
      CHECK(table.paths[p].values[i] == paths[p].values[i]);
    }
  }
  std::stringstream wide;
  write_paths_csv(wide, {paths[0]}, false);
  CHECK(wide.str().rfind("t,x1,x2\n", 0) == 0);
  CHECK(read_paths_csv(wide).paths.size() == 1);
}

TEST_CASE("path CSV errors name the line", "[io]") {
  std::stringstream a("path_id,t,x1\n0,0,1\n0,0.1\n");
  CHECK_THROWS_WITH(read_paths_csv(a), Catch::Matchers::ContainsSubstring("csv line 3"));
  std::stringstream b("path_id,t,x1\n0,0,1\n2,0,1\n");
  CHECK_THROWS_WITH(read_paths_csv(b), Catch::Matchers::ContainsSubstring("contiguous"));
  std::stringstream c("time,x\n");
  CHECK_THROWS_AS(read_paths_csv(c), ConfigError);
}

TEST_CASE("flow CSV has one row per node", "[io]") {
  const auto model = make_model("ou", {{"drift", "0.1"}});
  const std::vector<double> ts{0.0, 0.5, 1.0};
  CVec u(1);
  u[0] = cplx(0, 1);
  const std::vector<CVec> us{u};
  const auto grid = flow_on_grid(model.gen, model.dims, ts, us, {});
  std::ostringstream os;
  write_flow_csv(os, model.dims, ts, us, grid);
  const std::string s = os.str();
  CHECK(s.rfind("t,re_u1,im_u1,re_phi,im_phi,re_log_phi,im_log_phi,re_psi1,im_psi1,in_Q,error\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 4);
}

TEST_CASE("suite registry and runs", "[suite]") {
  const auto& reg = check_registry();
  CHECK(reg.size() == known_check_names().size());
  for (std::size_t k = 1; k < reg.size(); ++k) CHECK(reg[k - 1].name < reg[k].name);
  CHECK_THROWS_AS(find_check("nope"), ConfigError);

  auto cfg = parse_config_text("model.name = cir\nmodel.a = 0.5\nmodel.b = 1\nmodel.sigma = 0.3\ngrid.t = 0, 0.5\n");
  SuiteContext ctx{model_from_config(cfg), cfg};
  CHECK_THROWS_AS(run_checks(ctx, {"semiflow", "recovery"}), ConfigError);

  const auto reports = run_checks(ctx, {"semiflow", "property_A", "property_B"});
  REQUIRE(reports.size() == 3);
  for (const auto& r : reports) CHECK(r.passed);
  const auto summary = summary_json(ctx, reports);
  CHECK(summary["passed"].get<bool>());
  CHECK(summary["checks"].size() == 3);
}

TEST_CASE("threshold overrides reach the reports", "[suite]") {
  auto cfg = parse_config_text(
      "model.name = ou\nmodel.drift = 0.2\ngrid.t = 0, 0.5, 1\ncheck.semiflow.threshold = 1e-30\n");
  SuiteContext ctx{model_from_config(cfg), cfg};
  const auto r = run_checks(ctx, {"semiflow"}).front();
  CHECK(r.threshold == 1e-30);
}
