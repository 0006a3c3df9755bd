#include "latent_match/errors.hpp"
#include "latent_match/report.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace latent;
using nlohmann::json;

TEST_CASE("estimate report round trip") {
  EstimateResult r;
  r.alpha = Eigen::Vector3d(4.01, 0.349, 0.251);
  r.se = Eigen::Vector3d(0.1, 0.01, 0.02);
  r.sigma = Eigen::Matrix3d::Identity() * 2.0;
  r.sigma(0, 1) = r.sigma(1, 0) = 0.3;
  r.omega = Eigen::Matrix3d::Identity();
  r.n = 2500;
  r.variant = Variant::matched_expected;
  r.first_stage_f = Eigen::Vector2d(120.5, 80.25);
  r.clamped = 7;
  r.lambda_mode = "smoothed";

  const json j = to_json(r);
  CHECK(j["variant"] == "matched_expected");
  CHECK(j["sigma"][0][1] == 0.3);
  CHECK(j["diagnostics"]["clamped"] == 7);
  // through text and back
  const auto back = estimate_from_json(json::parse(j.dump()));
  CHECK(back.alpha == r.alpha);
  CHECK(back.se == r.se);
  CHECK(back.sigma == r.sigma);
  CHECK(back.omega == r.omega);
  CHECK(back.n == r.n);
  CHECK(back.variant == r.variant);
  CHECK(back.first_stage_f == r.first_stage_f);
  CHECK(back.clamped == 7u);
  CHECK(back.lambda_mode == "smoothed");
}

TEST_CASE("non-finite values become null") {
  EstimateResult r;
  r.alpha = Eigen::Vector3d(1, std::nan(""), 2);
  r.se = Eigen::Vector3d(1, 1, std::numeric_limits<double>::infinity());
  r.sigma = Eigen::Matrix3d::Identity();
  r.n = 10;
  const json j = to_json(r);
  CHECK(j["alpha"][1].is_null());
  CHECK(j["se"][2].is_null());
  const auto back = estimate_from_json(json::parse(j.dump()));
  CHECK(std::isnan(back.alpha(1)));
  CHECK(std::isnan(back.se(2)));
  CHECK(back.alpha(2) == 2.0);
}

TEST_CASE("malformed reports are schema errors") {
  CHECK_THROWS_AS(estimate_from_json(json::parse(R"({"variant":"matched_raw"})")), SchemaError);
  CHECK_THROWS_AS(estimate_from_json(json::parse(R"({"variant":"bogus","n":1,"alpha":[1],"se":[1],"sigma":[[1]]})")),
                  SchemaError);
  CHECK_THROWS_AS(
      estimate_from_json(json::parse(R"({"variant":"matched_raw","n":1,"alpha":[1,2],"se":[1],"sigma":[[1]]})")),
      SchemaError);
  CHECK_THROWS_AS(
      estimate_from_json(json::parse(R"({"variant":"matched_raw","n":1,"alpha":[1,2],"se":[1,1],"sigma":[[1,0],[0]]})")),
      SchemaError);
}

TEST_CASE("test results and summaries serialize") {
  TestResult t;
  t.kind = TestKind::f_ratio;
  t.statistic = 1.532;
  t.df = {141, 185};
  t.p_value = 0.003;
  t.h0 = "var(a) <= var(b)";
  const json j = to_json(t);
  CHECK(j["kind"] == "f_ratio");
  CHECK(j["df"].size() == 2);
  CHECK(j["p_value"] == 0.003);

  McSummary s;
  s.spec = 1;
  s.L = 50;
  s.I = 50;
  s.replications = 2;
  s.cells.push_back({"alpha1", McEstimator::matched, std::nan(""), 0.0, 0, 2});
  s.warnings.push_back("matched: 2 failed replications excluded");
  const json m = to_json(s);
  CHECK(m["cells"][0]["bias"].is_null());
  CHECK(m["cells"][0]["estimator"] == "matched");
  CHECK(m["warnings"].size() == 1);
}

TEST_CASE("DGP overrides") {
  DgpSpec spec = DgpSpec::table1(2);
  apply_overrides(spec, json::parse(R"({"alpha":[3.0,0.3,0.2],"sigma_u":0.5,"L":7,"wage_latency":true})"));
  CHECK(spec.alpha0 == 3.0);
  CHECK(spec.alpha1 == 0.3);
  CHECK(spec.sigma_u == 0.5);
  CHECK(spec.L == 7);
  CHECK(spec.wage_latency);
  CHECK(spec.sigma_eps == DgpSpec::table1(2).sigma_eps);

  // the echo reads back into the same spec
  DgpSpec again = DgpSpec::table1(1);
  apply_overrides(again, to_json(spec));
  CHECK(again.alpha1 == spec.alpha1);
  CHECK(again.sigma_u == spec.sigma_u);
  CHECK(again.L == spec.L);
  CHECK(again.kappa == spec.kappa);
  CHECK(again.sigma_eta == spec.sigma_eta);

  CHECK_THROWS_AS(apply_overrides(spec, json::parse(R"({"sigma_z":[[1,0]]})")), SchemaError);
}
