#pragma once

#include "latent_match/core_model.hpp"
#include "latent_match/estimator.hpp"
#include "latent_match/first_stage.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace latent {

enum class LatencyMechanism { bernoulli_half, custom };
enum class ShifterCovariance { identity, moment_matched };

struct DgpSpec {
  double alpha0 = 4.0;
  double alpha1 = 0.35;
  double alpha2 = 0.25;
  Eigen::Vector2d mu_z{2.4, 2.1};
  Eigen::Matrix2d sigma_z = (Eigen::Matrix2d() << 0.05, 0.0, 0.0, 0.02).finished();
  Eigen::Matrix2d kappa = (Eigen::Matrix2d() << 1.3, 0.3, 0.1, 0.9).finished();
  double sigma_u = 0.4;
  double sigma_eps = 0.3;
  Eigen::Matrix2d sigma_eta = Eigen::Matrix2d::Identity() * 0.01;
  int L = 50;
  int I = 50;
  bool wage_latency = false;
  LatencyMechanism latency = LatencyMechanism::bernoulli_half;
  // P(d = 1 | u, z) for the custom mechanism
  std::function<double(double, const Eigen::Vector2d&)> latency_prob;
  ShifterCovariance shifter_cov = ShifterCovariance::identity;
  double input_perturbation = 0.0;  // x_k += p * z_k after the optimal choice
  std::uint64_t seed = 20240601;
  int id = 0;  // preset number, 0 for custom

  /// Presets 1, 2, 3 (wage and productivity noise levels).
  static DgpSpec table1(int spec);
  std::vector<std::string> validate() const;
};

/// Closed-form optimal inputs and expected-outcome surfaces of the
/// Cobb-Douglas DGP.
struct ClosedForm {
  double alpha0, alpha1, alpha2;

  double h1(double u, double z1, double z2) const;
  double h2(double u, double z1, double z2) const;
  double gamma1(double x1, double z1) const;
  double gamma2(double x2, double z2) const;
  double output(double x1, double x2, double u) const;
};

ClosedForm closed_form(const DgpSpec& spec);

struct MarketData {
  std::vector<CompleteObservation> complete;  // true inputs and true wages
  Sample masked;                              // one input per row; wages masked under wage latency
  std::map<int, Eigen::VectorXd> shifters;    // D_m
  Eigen::VectorXd u;
  Eigen::VectorXd eps;
  std::vector<std::string> warnings;
};

MarketData gen_market_data(const DgpSpec& spec, std::mt19937_64& rng);

/// Stream seed of replication `rep`: SplitMix64 of (master, rep).
std::uint64_t replication_seed(std::uint64_t master, std::uint64_t rep);

enum class McEstimator { tsls, matched, matched_star };
std::string to_string(McEstimator e);

/// Default Monte Carlo first stage: degree-2 sieve, within-market fits on
/// the input alone when markets have several firms, pooled on (c, z) otherwise.
FirstStageConfig mc_first_stage();

struct McConfig {
  int replications = 1000;
  std::vector<McEstimator> estimators{McEstimator::tsls, McEstimator::matched};
  FirstStageConfig first_stage = mc_first_stage();
  MatchedOptions matched{};
  bool variance = false;  // compute se for matched estimators
  int threads = 0;        // 0 = hardware concurrency
  bool keep_records = false;
};

struct McCell {
  std::string param;
  McEstimator estimator = McEstimator::tsls;
  double bias = 0.0;
  double rmse = 0.0;  // spread: sample standard deviation across replications
  std::size_t replications = 0;
  std::size_t failures = 0;
};

struct McRecord {
  int rep = 0;
  std::uint64_t seed = 0;
  McEstimator estimator = McEstimator::tsls;
  bool ok = false;
  std::string error;
  Eigen::VectorXd alpha;
  Eigen::VectorXd se;
};

struct McSummary {
  int spec = 0;
  int L = 0;
  int I = 0;
  int replications = 0;
  std::vector<McCell> cells;
  std::vector<std::string> warnings;
  std::vector<McRecord> records;  // filled when keep_records

  const McCell& cell(const std::string& param, McEstimator e) const;
};

McSummary run_monte_carlo(const DgpSpec& spec, const McConfig& config);

void write_summary_csv(std::ostream& out, const McSummary& s);
void write_summary_table(std::ostream& out, const McSummary& s);
void write_records_csv(std::ostream& out, const McSummary& s);

struct GiftScenario {
  double m1 = 1.0;
  double m2 = 1.0;
  double mu = 0.5;
};

struct GiftOutcome {
  double g1 = 0.0;
  double g2 = 0.0;
  bool corner = false;
};

GiftOutcome gift_equilibrium(const GiftScenario& s);

}  // namespace latent
