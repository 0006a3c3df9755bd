#include "latent_match/errors.hpp"
#include "latent_match/simulation.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

using namespace latent;

TEST_CASE("optimal input slopes") {
  const auto spec = DgpSpec::table1(1);
  const auto data = support::simulate(spec, 8);
  const auto n = static_cast<Eigen::Index>(data.complete.size());
  Eigen::MatrixXd X(n, 4);
  Eigen::VectorXd x1(n), x2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = data.complete[static_cast<std::size_t>(i)];
    X.row(i) << 1.0, c.z(0), c.z(1), data.u(i);
    x1(i) = c.x1;
    x2(i) = c.x2;
  }
  const Eigen::VectorXd b1 = X.colPivHouseholderQr().solve(x1);
  const Eigen::VectorXd b2 = X.colPivHouseholderQr().solve(x2);
  const double a1 = spec.alpha1, a2 = spec.alpha2, s = 1.0 - a1 - a2;
  CHECK(b1(1) == doctest::Approx(-1.875).epsilon(1e-9));
  CHECK(b1(2) == doctest::Approx(-0.625).epsilon(1e-9));
  CHECK(b1(3) == doctest::Approx(2.5).epsilon(1e-9));
  CHECK(b1(1) == doctest::Approx(-(1 - a2) / s).epsilon(1e-9));
  // the mirror image for the second input
  CHECK(b2(1) == doctest::Approx(-a1 / s).epsilon(1e-9));
  CHECK(b2(2) == doctest::Approx(-(1 - a1) / s).epsilon(1e-9));
  CHECK(b2(3) == doctest::Approx(1 / s).epsilon(1e-9));
}

TEST_CASE("reduced-form identity for every firm") {
  for (int preset : {1, 2, 3}) {
    auto spec = DgpSpec::table1(preset);
    spec.L = 20;
    spec.I = 30;
    const auto data = support::simulate(spec, 40 + preset);
    const auto cf = closed_form(spec);
    for (std::size_t i = 0; i < data.complete.size(); ++i) {
      const auto& c = data.complete[i];
      const double signal = c.y - data.eps(static_cast<Eigen::Index>(i));
      CHECK(std::abs(signal - cf.gamma1(c.x1, c.z(0))) < 1e-10);
      CHECK(std::abs(signal - cf.gamma2(c.x2, c.z(1))) < 1e-10);
      CHECK(std::abs(c.y - data.eps(static_cast<Eigen::Index>(i)) -
                     cf.output(c.x1, c.x2, data.u(static_cast<Eigen::Index>(i)))) < 1e-10);
    }
  }
}

TEST_CASE("masking keeps exactly one input") {
  const auto data = support::simulate(DgpSpec::table1(1), 2);
  REQUIRE(data.masked.size() == data.complete.size());
  std::size_t ones = 0;
  for (std::size_t i = 0; i < data.complete.size(); ++i) {
    const auto& o = data.masked[i];
    const auto& c = data.complete[i];
    CHECK(o.x_obs == (o.d == 1 ? c.x1 : c.x2));
    CHECK(o.y == c.y);
    ones += o.d == 1;
  }
  // independent Bernoulli(0.5) latency over 2500 firms
  CHECK(std::abs(static_cast<double>(ones) / data.complete.size() - 0.5) < 0.04);
}

TEST_CASE("inputs increase in the productivity shock at fixed wages") {
  auto spec = DgpSpec::table1(2);
  spec.sigma_eta.setZero();
  spec.L = 10;
  spec.I = 100;
  const auto data = support::simulate(spec, 6);
  for (int m = 0; m < spec.L; ++m) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.complete.size(); ++i)
      if (data.complete[i].market_id == data.complete[static_cast<std::size_t>(m * spec.I)].market_id) idx.push_back(i);
    REQUIRE(idx.size() == static_cast<std::size_t>(spec.I));
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return data.u(a) < data.u(b); });
    for (std::size_t k = 1; k < idx.size(); ++k) {
      const auto& lo = data.complete[idx[k - 1]];
      const auto& hi = data.complete[idx[k]];
      REQUIRE((hi.z - lo.z).norm() < 1e-12);
      if (data.u(idx[k]) > data.u(idx[k - 1])) {
        CHECK(hi.x1 > lo.x1);
        CHECK(hi.x2 > lo.x2);
      }
    }
  }
  const auto cf = closed_form(spec);
  CHECK(cf.h1(0.1, 2.4, 2.1) - cf.h1(0.0, 2.4, 2.1) == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("noiseless design gives exact infeasible TSLS") {
  auto spec = DgpSpec::table1(1);
  spec.sigma_u = 0.0;
  spec.sigma_eps = 0.0;
  spec.sigma_eta.setZero();
  const auto data = support::simulate(spec, 9);
  const auto r = infeasible_tsls(data.complete);
  CHECK(std::abs(r.alpha(0) - spec.alpha0) < 1e-8);
  CHECK(std::abs(r.alpha(1) - spec.alpha1) < 1e-8);
  CHECK(std::abs(r.alpha(2) - spec.alpha2) < 1e-8);
  // y is then a function of z alone
  for (std::size_t i = 1; i < data.complete.size(); ++i)
    if (data.complete[i].market_id == data.complete[i - 1].market_id)
      CHECK(data.complete[i].y == doctest::Approx(data.complete[i - 1].y).epsilon(1e-12));
}

TEST_CASE("large-sample sieve recovers the reduced form") {
  const auto data = support::simulate(support::pooled_spec(1, 40000), 12);
  const auto sp = split_by_latency(data.masked);
  const auto g1 = fit_gamma_sieve(sp.first, 1);
  const Eigen::Vector2d z(2.4, 2.1);
  const double c = std::accumulate(sp.first.rows().begin(), sp.first.rows().end(), 0.0,
                                   [](double a, const Observation& o) { return a + o.x_obs; }) /
                   static_cast<double>(sp.first.size());
  CHECK(g1.evaluate(c, z).slope == doctest::Approx(1.0).epsilon(0.02));
  const double dz = 0.01;
  const double slope_z1 = (g1.evaluate(c, Eigen::Vector2d(2.4 + dz, 2.1)).value -
                           g1.evaluate(c, Eigen::Vector2d(2.4 - dz, 2.1)).value) / (2 * dz);
  CHECK(slope_z1 == doctest::Approx(1.0).epsilon(0.05));
  CHECK(g1.evaluate(c, z).value == doctest::Approx(closed_form(DgpSpec::table1(1)).gamma1(c, 2.4)).epsilon(0.01));
}

TEST_CASE("invalid specs are rejected") {
  std::mt19937_64 rng(1);
  auto bad = DgpSpec::table1(1);
  bad.alpha1 = 0.8;
  CHECK_FALSE(bad.validate().empty());
  CHECK_THROWS_AS(gen_market_data(bad, rng), InvalidSpec);
  auto neg = DgpSpec::table1(1);
  neg.sigma_u = -1;
  CHECK_THROWS_AS(gen_market_data(neg, rng), InvalidSpec);
  auto asym = DgpSpec::table1(1);
  asym.sigma_z(0, 1) = 0.3;
  CHECK_THROWS_AS(gen_market_data(asym, rng), InvalidSpec);
  CHECK_THROWS_AS(DgpSpec::table1(4), InvalidSpec);
  McConfig cfg;
  cfg.replications = 0;
  CHECK_THROWS_AS(run_monte_carlo(DgpSpec::table1(1), cfg), InvalidSpec);
  CHECK(DgpSpec::table1(3).validate().empty());
}

TEST_CASE("replication seeds") {
  CHECK(replication_seed(1, 0) == replication_seed(1, 0));
  CHECK(replication_seed(1, 0) != replication_seed(1, 1));
  CHECK(replication_seed(1, 0) != replication_seed(2, 0));
  std::vector<std::uint64_t> seen;
  for (std::uint64_t r = 0; r < 1000; ++r) seen.push_back(replication_seed(7, r));
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("Monte Carlo determinism and summaries") {
  auto spec = DgpSpec::table1(1);
  McConfig cfg;
  cfg.replications = 2;
  cfg.estimators = {McEstimator::tsls, McEstimator::matched, McEstimator::matched_star};
  cfg.threads = 2;
  const auto a = run_monte_carlo(spec, cfg);
  cfg.threads = 1;
  const auto b = run_monte_carlo(spec, cfg);
  std::ostringstream sa, sb;
  write_summary_csv(sa, a);
  write_summary_csv(sb, b);
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().rfind("param,estimator,spec,L,I,bias,rmse,failures\n", 0) == 0);
  CHECK(a.cells.size() == 9);
  CHECK(a.cell("alpha1", McEstimator::matched).replications + a.cell("alpha1", McEstimator::matched).failures == 2);
  for (const auto& c : a.cells) {
    // all-failed cells report NaN
    CHECK(std::isfinite(c.bias) == (c.replications > 0));
    CHECK(c.rmse >= 0.0);
  }
  CHECK_THROWS_AS(a.cell("alpha9", McEstimator::tsls), std::out_of_range);

  std::ostringstream table;
  write_summary_table(table, a);
  CHECK(table.str().find("alpha1") != std::string::npos);

  cfg.replications = 1;
  const auto one = run_monte_carlo(spec, cfg);
  CHECK(one.cell("alpha1", McEstimator::tsls).rmse == 0.0);
  REQUIRE_FALSE(one.warnings.empty());
  CHECK(one.warnings.front().find("fewer than 2") != std::string::npos);

  // a different master seed moves the estimates
  spec.seed += 1;
  cfg.replications = 2;
  const auto c = run_monte_carlo(spec, cfg);
  CHECK(c.cell("alpha1", McEstimator::tsls).bias != a.cell("alpha1", McEstimator::tsls).bias);
}

TEST_CASE("records carry per-replication seeds") {
  auto spec = support::pooled_spec(1, 500);
  McConfig cfg;
  cfg.replications = 3;
  cfg.estimators = {McEstimator::tsls};
  cfg.keep_records = true;
  const auto s = run_monte_carlo(spec, cfg);
  REQUIRE(s.records.size() == 3);
  for (const auto& r : s.records) {
    CHECK(r.seed == replication_seed(spec.seed, static_cast<std::uint64_t>(r.rep)));
    CHECK(r.ok);
  }
  std::ostringstream out;
  write_records_csv(out, s);
  const std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}

TEST_CASE("gift game equilibrium") {
  const auto sym = gift_equilibrium({1.0, 1.0, 0.5});
  CHECK(sym.g1 == doctest::Approx(0.2));
  CHECK(sym.g2 == doctest::Approx(0.2));
  CHECK_FALSE(sym.corner);
  for (double m : {0.5, 2.0, 7.0}) {
    const auto g = gift_equilibrium({m, m, 0.5});
    CHECK(g.g1 == doctest::Approx(0.5 * m / 2.5));
  }

  const auto zero = gift_equilibrium({2.0, 2.0, 0.0});
  CHECK(zero.g1 == doctest::Approx(0.0));
  CHECK(zero.g2 == doctest::Approx(0.0));

  const auto far = gift_equilibrium({1.0, 3.0, 0.1});
  CHECK(far.g1 == doctest::Approx((1.1 - 3.0) / 2.1));
  CHECK(far.g1 < 0.0);
  CHECK(far.corner);

  // strictly increasing in mu in the interior
  double p1 = -1e9, p2 = -1e9;
  for (double mu = 0.05; mu <= 1.0; mu += 0.05) {
    const auto g = gift_equilibrium({1.0, 1.2, mu});
    if (g.corner) continue;
    CHECK(g.g1 > p1);
    CHECK(g.g2 > p2);
    p1 = g.g1;
    p2 = g.g2;
  }
  CHECK(p1 > 0.0);

  CHECK_THROWS_AS(gift_equilibrium({0.0, 1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(gift_equilibrium({1.0, 1.0, 1.5}), std::invalid_argument);
}
