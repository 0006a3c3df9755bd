#include "latent_match/errors.hpp"
#include "latent_match/inference.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace latent;

namespace {

EstimateResult point(Eigen::Vector3d alpha, Eigen::Vector3d se, std::size_t n = 100) {
  EstimateResult r;
  r.alpha = alpha;
  r.se = se;
  r.n = n;
  r.sigma = Eigen::MatrixXd(se.array().square().matrix().asDiagonal()) * static_cast<double>(n);
  return r;
}

double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

// chi-square survival for 3 degrees of freedom in closed form
double chi2_3_upper(double w) {
  return 2.0 * (1.0 - normal_cdf(std::sqrt(w))) + std::sqrt(2.0 * w / M_PI) * std::exp(-w / 2.0);
}

}  // namespace

TEST_CASE("t test p-values") {
  const auto a = point({1, 0.3, 0.2}, {0.1, 0.05, 0.05});
  CHECK(t_one_sided(a, a, 1).statistic == 0.0);
  CHECK(t_one_sided(a, a, 1).p_value == doctest::Approx(0.5));

  // Table 5 managerial efficiency column: difference -0.524 at t = -1.913
  const double s = 0.524 / 1.913 / std::sqrt(2.0);
  const auto b = point({1, 0.0, 0.2}, {0.1, s, 0.05});
  const auto c = point({1, 0.524, 0.2}, {0.1, s, 0.05});
  const auto t = t_one_sided(b, c, 1);
  CHECK(t.statistic == doctest::Approx(-1.913).epsilon(1e-9));
  CHECK(t.p_value == doctest::Approx(0.028).epsilon(0.02));
  CHECK(t.p_value == doctest::Approx(normal_cdf(-1.913)).epsilon(1e-9));

  // antisymmetry, and the upper tail is the complement
  const auto back = t_one_sided(c, b, 1);
  CHECK(back.statistic == doctest::Approx(-t.statistic));
  CHECK(back.p_value == doctest::Approx(1.0 - t.p_value));
  CHECK(t_one_sided(b, c, 1, Tail::upper).p_value == doctest::Approx(1.0 - t.p_value));
  CHECK_THROWS_AS(t_one_sided(b, c, 3), std::out_of_range);
}

TEST_CASE("variance ratio F test") {
  // residual variance column of Table 5
  const auto f = f_ratio(1.532, 144 - 3, 1.0, 188 - 3);
  CHECK(f.statistic == doctest::Approx(1.532));
  REQUIRE(f.df.size() == 2);
  CHECK(f.p_value == doctest::Approx(0.003).epsilon(0.34));
  CHECK(f.p_value > 0.002);
  CHECK(f.p_value < 0.004);

  CHECK(f_ratio(2.0, 1e5, 2.0, 1e5).p_value == doctest::Approx(0.5).epsilon(0.01));

  // 1/F has swapped degrees of freedom: P(F_ab > r) = P(F_ba < 1/r)
  const auto g = f_ratio(1.0, 185, 1.532, 141);
  CHECK(g.p_value == doctest::Approx(1.0 - f.p_value).epsilon(1e-9));

  CHECK_THROWS_AS(f_ratio(0.0, 3, 1.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(f_ratio(1.0, 3, 1.0, -1), std::invalid_argument);
}

TEST_CASE("joint Wald test") {
  const auto a = point({1, 0.3, 0.2}, {0.1, 0.05, 0.05});
  const auto same = wald_joint(a, a);
  CHECK(same.statistic == 0.0);
  CHECK(same.p_value == 1.0);
  CHECK(same.df == std::vector<double>{3.0});

  const auto b = point({1.1, 0.2, 0.25}, {0.2, 0.04, 0.03}, 400);
  const auto ab = wald_joint(a, b);
  const auto ba = wald_joint(b, a);
  CHECK(ab.statistic == doctest::Approx(ba.statistic).epsilon(1e-12));

  // diagonal covariances: W is a sum of squared z-scores
  double w = 0;
  for (int j = 0; j < 3; ++j) w += std::pow(a.alpha(j) - b.alpha(j), 2) / (a.se(j) * a.se(j) + b.se(j) * b.se(j));
  CHECK(ab.statistic == doctest::Approx(w).epsilon(1e-10));
  CHECK(ab.p_value == doctest::Approx(chi2_3_upper(w)).epsilon(1e-8));

  EstimateResult flat = a;
  flat.sigma.setZero();
  EstimateResult moved = flat;
  moved.alpha(0) += 1.0;
  CHECK_THROWS_AS(wald_joint(flat, moved), SingularCovariance);
  EstimateResult none = point({1, 0.3, 0.2}, {0.1, 0.05, 0.05});
  none.sigma.resize(0, 0);
  CHECK_THROWS_AS(wald_joint(none, a), SingularCovariance);
}

TEST_CASE("p-values fall as statistics grow") {
  const auto base = point({0, 0, 0}, {0.1, 0.1, 0.1});
  double prev_w = 1.1, prev_t = 1.1, prev_f = 1.1;
  for (double d = 0.01; d < 0.6; d += 0.03) {
    const auto other = point({d, d, d}, {0.1, 0.1, 0.1});
    const double pw = wald_joint(base, other).p_value;
    const double pt = t_one_sided(other, base, 0, Tail::upper).p_value;
    const double pf = f_ratio(1.0 + 10 * d, 50, 1.0, 50).p_value;
    CHECK(pw < prev_w);
    CHECK(pt < prev_t);
    CHECK(pf < prev_f);
    for (double p : {pw, pt, pf}) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
    prev_w = pw;
    prev_t = pt;
    prev_f = pf;
  }
}

TEST_CASE("Wald and t size and power under independent samples") {
  auto spec = support::pooled_spec(1, 5000);
  spec.alpha1 = 0.1;
  auto alt = spec;
  alt.alpha1 = 0.6;
  int reject_w = 0, reject_t = 0, power = 0;
  const int reps = 500;
  for (int rep = 0; rep < reps; ++rep) {
    const auto u = static_cast<std::uint64_t>(rep);
    const auto a = infeasible_tsls(support::simulate(spec, replication_seed(11, u)).complete);
    const auto b = infeasible_tsls(support::simulate(spec, replication_seed(12, u)).complete);
    const auto c = infeasible_tsls(support::simulate(alt, replication_seed(13, u)).complete);
    reject_w += wald_joint(a, b).p_value < 0.05;
    reject_t += t_one_sided(a, b, 1).p_value < 0.05;
    power += wald_joint(a, c).p_value < 0.05;
  }
  // binomial se at 5% over 500 draws is about 0.01
  CHECK(reject_w / double(reps) >= 0.03);
  CHECK(reject_w / double(reps) <= 0.075);
  CHECK(reject_t / double(reps) >= 0.03);
  CHECK(reject_t / double(reps) <= 0.075);
  CHECK(power / double(reps) > 0.99);
}

TEST_CASE("optimality test on the closed-form design") {
  SUBCASE("chi-square with two restrictions has p = exp(-W/2)") {
    const auto data = support::simulate(support::pooled_spec(1, 400), 3);
    for (int k : {1, 2}) {
      const auto r = optimality_test(data.masked, k);
      CHECK(r.df == std::vector<double>{2.0});
      CHECK(r.p_value == doctest::Approx(std::exp(-r.statistic / 2)).epsilon(1e-10));
      const auto eq = optimality_test(data.masked, k, OptimalityNull::equal);
      CHECK(eq.df == std::vector<double>{1.0});
      CHECK(eq.p_value == doctest::Approx(std::erfc(std::sqrt(eq.statistic / 2))).epsilon(1e-10));
    }
  }

  SUBCASE("size and power") {
    int size = 0, power = 0;
    const int reps = 500;
    for (int rep = 0; rep < reps; ++rep) {
      const auto u = static_cast<std::uint64_t>(rep);
      auto opt = support::pooled_spec(1, 2500);
      auto bad = support::pooled_spec(1, 1000);
      bad.input_perturbation = 0.3;
      size += optimality_test(support::simulate(opt, replication_seed(21, u)).masked, 1).p_value < 0.05;
      power += optimality_test(support::simulate(bad, replication_seed(22, u)).masked, 1).p_value < 0.05;
    }
    CHECK(size / double(reps) >= 0.03);
    CHECK(size / double(reps) <= 0.08);
    CHECK(power / double(reps) > 0.9);
  }

  SUBCASE("too few rows") {
    const Sample tiny({support::obs(1, 1, 0, 1, 1), support::obs(2, 1, 1, 2, 1), support::obs(0, 2, 0, 0, 0)});
    CHECK_THROWS_AS(optimality_test(tiny, 1), RankDeficientDesign);
  }
}
