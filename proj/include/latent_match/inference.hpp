#pragma once

#include "latent_match/core_model.hpp"
#include "latent_match/estimator.hpp"

#include <string>
#include <vector>

namespace latent {

enum class TestKind { wald, t_one_sided, f_ratio, optimality_wald };
enum class Tail { lower, upper };

std::string to_string(TestKind k);

struct TestResult {
  TestKind kind = TestKind::wald;
  double statistic = 0.0;
  std::vector<double> df;  // one entry, or two for F
  double p_value = 1.0;
  std::string h0;
};

/// Equality of two coefficient vectors from independent samples; chi-square
/// with dim(alpha) degrees of freedom.
TestResult wald_joint(const EstimateResult& a, const EstimateResult& b);

/// t = (a_j - b_j) / sqrt(se_a^2 + se_b^2). The default lower tail tests
/// H0: a_j >= b_j against a_j < b_j.
TestResult t_one_sided(const EstimateResult& a, const EstimateResult& b, Eigen::Index j, Tail tail = Tail::lower);

/// F = var_a / var_b with upper-tail p-value (H0: var_a <= var_b).
TestResult f_ratio(double resid_var_a, double df_a, double resid_var_b, double df_b);

enum class OptimalityNull { both_one, equal };

/// Within class k: OLS of y on (1, x_k, z_k) with HC0 covariance, Wald test
/// of coef(x_k) = coef(z_k) = 1, or only coef(x_k) = coef(z_k).
TestResult optimality_test(const Sample& sample, int k, OptimalityNull null = OptimalityNull::both_one);

}  // namespace latent
