#pragma once

#include "latent_match/core_model.hpp"
#include "latent_match/first_stage.hpp"
#include "latent_match/imputation.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace latent {

enum class Variant { matched_raw, matched_expected, infeasible_tsls, two_stage_ls };
enum class Outcome { raw_y, expected_y };
enum class LambdaMode { proportion, smoothed };
enum class PhiKind { phi, phi_star };

std::string to_string(Variant v);
std::string to_string(LambdaMode m);

struct EstimateResult {
  Eigen::VectorXd alpha;
  Eigen::MatrixXd sigma;  // asymptotic variance; the finite-sample one is sigma / n
  Eigen::VectorXd se;
  Eigen::MatrixXd omega;
  std::size_t n = 0;
  Variant variant = Variant::matched_raw;
  Eigen::VectorXd first_stage_f;
  std::size_t clamped = 0;
  std::size_t failed = 0;
  std::string lambda_mode;
};

struct EstimatorOptions {
  bool drop_clamped = false;
  double singular_condition = 1e12;
};

struct InfluenceWeights {
  Eigen::VectorXd phi;
  Eigen::VectorXd lambda1;
  Eigen::VectorXd gamma_prime_1;
  Eigen::VectorXd gamma_prime_2;
  PhiKind kind = PhiKind::phi;
};

/// Row weight used in the moments: the sampling weight, or 0 for rows that
/// are excluded (failed imputation always, clamped rows on request).
Eigen::VectorXd moment_weights(const ImputedSample& imp, const EstimatorOptions& options = {});

/// Just-identified IV of the outcome on x~ = (1, x1, x2) with (1, z).
EstimateResult matched_tsls(const ImputedSample& imp, Outcome outcome,
                            const EstimatorOptions& options = {});

/// Benchmark IV on fully observed inputs, with its heteroskedasticity-robust
/// sandwich variance.
EstimateResult infeasible_tsls(const std::vector<CompleteObservation>& complete,
                               const EstimatorOptions& options = {});

/// Over-identified 2SLS with instruments (1, z, extra). When weights are
/// given the meat uses the influence-corrected residuals.
EstimateResult two_stage_ls(const ImputedSample& imp, const Eigen::MatrixXd& extra_instruments,
                            Outcome outcome, const InfluenceWeights* weights = nullptr,
                            const EstimatorOptions& options = {});

struct LambdaOptions {
  double clip_lo = 0.01;
  double clip_hi = 0.99;
  double bandwidth_scale = 5.5;   // C in C * N^{-1/7}, standardized units
  std::size_t min_support = 20;
};

/// Per-row estimate of P(d = 1 | x_obs, z).
Eigen::VectorXd estimate_lambda(const Sample& sample, LambdaMode mode, const LambdaOptions& options = {});

/// Per-row estimate of P(d = 1 | x1, x2, z). Every row carries both inputs
/// once imputed, and x2 is a monotone function of x1 at fixed z, so the
/// smoother runs on (x1 or its imputed value, z). Failed rows get the share.
Eigen::VectorXd estimate_lambda(const ImputedSample& imp, LambdaMode mode, const LambdaOptions& options = {});

/// Per-row first-stage multiplier. Slopes are evaluated at the row's observed
/// or imputed inputs on the surfaces covering its market.
InfluenceWeights influence_phi(const ImputedSample& imp, const Eigen::VectorXd& alpha,
                               const FirstStage& first_stage, const Eigen::VectorXd& lambda1, PhiKind kind,
                               const EstimatorOptions& options = {}, double floor = 1e-3);

/// Fills omega, sigma and se of `result` from the influence-corrected residuals.
void variance_matched(const ImputedSample& imp, EstimateResult& result, const InfluenceWeights& weights,
                      Outcome outcome, const EstimatorOptions& options = {});

/// Robust Wald F of each column of `inputs` on (1, instruments), divided by
/// the number of instruments.
Eigen::VectorXd first_stage_f(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& instruments);
Eigen::VectorXd first_stage_f(const ImputedSample& imp, const EstimatorOptions& options = {});
Eigen::VectorXd first_stage_f(const std::vector<CompleteObservation>& complete);

struct MatchedOptions {
  EstimatorOptions estimator;
  LambdaMode lambda = LambdaMode::proportion;
  LambdaOptions lambda_options;
  double floor = 1e-3;
};

/// Point estimate, influence weights and variance in one call. Outcome
/// raw_y gives alpha-hat, expected_y gives alpha-hat-star.
EstimateResult estimate_matched(const ImputedSample& imp, const FirstStage& first_stage, Outcome outcome,
                                const MatchedOptions& options = {});

}  // namespace latent
