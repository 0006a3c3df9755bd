#include "latent_match/simulation.hpp"

#include "latent_match/errors.hpp"
#include "latent_match/imputation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

namespace latent {

DgpSpec DgpSpec::table1(int spec) {
  DgpSpec s;
  s.id = spec;
  switch (spec) {
    case 1: s.sigma_u = 0.4; s.sigma_eta = Eigen::Matrix2d::Identity() * 0.01; break;
    case 2: s.sigma_u = 0.8; s.sigma_eta = Eigen::Matrix2d::Identity() * 0.01; break;
    case 3: s.sigma_u = 0.8; s.sigma_eta = Eigen::Matrix2d::Identity() * 0.5; break;
    default: throw InvalidSpec("unknown preset " + std::to_string(spec) + "; expected 1, 2 or 3");
  }
  return s;
}

namespace {

bool is_psd(const Eigen::Matrix2d& m) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(m);
  return eig.eigenvalues().minCoeff() >= -1e-12;
}

// Symmetric square root, valid for singular PSD matrices.
Eigen::Matrix2d psd_root(const Eigen::Matrix2d& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(m);
  const Eigen::Vector2d ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

std::vector<std::string> DgpSpec::validate() const {
  std::vector<std::string> v;
  if (!(alpha1 >= 0.0 && alpha2 >= 0.0)) v.push_back("alpha1 and alpha2 must be non-negative");
  if (!(alpha1 + alpha2 < 1.0)) v.push_back("alpha1 + alpha2 must be below 1");
  if (!(alpha1 > 0.0 && alpha2 > 0.0)) v.push_back("alpha1 and alpha2 must be positive for the optimal inputs");
  if (!(sigma_u >= 0.0) || !(sigma_eps >= 0.0)) v.push_back("noise scales must be non-negative");
  if (!is_psd(sigma_z)) v.push_back("sigma_z must be symmetric PSD");
  if (!is_psd(sigma_eta)) v.push_back("sigma_eta must be symmetric PSD");
  if (std::abs(kappa.determinant()) < 1e-12) v.push_back("kappa loading matrix is singular");
  if (L < 1 || I < 1) v.push_back("need at least one market and one firm");
  if (latency == LatencyMechanism::custom && !latency_prob) v.push_back("custom latency without a probability");
  return v;
}

ClosedForm closed_form(const DgpSpec& s) { return {s.alpha0, s.alpha1, s.alpha2}; }

double ClosedForm::h1(double u, double z1, double z2) const {
  const double den = 1.0 - alpha1 - alpha2;
  return (alpha0 + (1.0 - alpha2) * std::log(alpha1) + alpha2 * std::log(alpha2)) / den -
         (1.0 - alpha2) / den * z1 - alpha2 / den * z2 + u / den;
}

double ClosedForm::h2(double u, double z1, double z2) const {
  const double den = 1.0 - alpha1 - alpha2;
  return (alpha0 + alpha1 * std::log(alpha1) + (1.0 - alpha1) * std::log(alpha2)) / den -
         alpha1 / den * z1 - (1.0 - alpha1) / den * z2 + u / den;
}

double ClosedForm::gamma1(double x1, double z1) const { return -std::log(alpha1) + x1 + z1; }
double ClosedForm::gamma2(double x2, double z2) const { return -std::log(alpha2) + x2 + z2; }
double ClosedForm::output(double x1, double x2, double u) const { return alpha0 + alpha1 * x1 + alpha2 * x2 + u; }

MarketData gen_market_data(const DgpSpec& spec, std::mt19937_64& rng) {
  const auto problems = spec.validate();
  if (!problems.empty()) {
    std::string msg = "invalid DGP:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw InvalidSpec(msg);
  }
  MarketData out;
  const ClosedForm cf = closed_form(spec);
  const Eigen::Matrix2d kinv = spec.kappa.inverse();
  const Eigen::Vector2d mu_d = kinv * spec.mu_z;
  Eigen::Matrix2d sigma_d = Eigen::Matrix2d::Identity();
  if (spec.shifter_cov == ShifterCovariance::moment_matched) {
    const Eigen::Matrix2d m = kinv * (spec.sigma_z - spec.sigma_eta) * kinv.transpose();
    if (is_psd(0.5 * (m + m.transpose()))) {
      sigma_d = 0.5 * (m + m.transpose());
    } else {
      out.warnings.push_back("sigma_z - sigma_eta not PSD; demand shifter covariance set to identity");
    }
  }
  const Eigen::Matrix2d root_d = psd_root(sigma_d);
  const Eigen::Matrix2d root_eta = psd_root(spec.sigma_eta);

  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const std::size_t total = static_cast<std::size_t>(spec.L) * static_cast<std::size_t>(spec.I);
  out.complete.reserve(total);
  std::vector<Observation> masked;
  masked.reserve(total);
  out.u.resize(static_cast<Eigen::Index>(total));
  out.eps.resize(static_cast<Eigen::Index>(total));

  std::size_t row = 0;
  for (int m = 0; m < spec.L; ++m) {
    const Eigen::Vector2d e_d(N(rng), N(rng));
    const Eigen::Vector2d D = mu_d + root_d * e_d;
    out.shifters.emplace(m, D);
    const Eigen::Vector2d zm = spec.kappa * D;
    for (int f = 0; f < spec.I; ++f, ++row) {
      const Eigen::Vector2d e_eta(N(rng), N(rng));
      const Eigen::Vector2d z = zm + root_eta * e_eta;
      const double u = spec.sigma_u * N(rng);
      const double eps = spec.sigma_eps * N(rng);
      const double draw = U(rng);
      const double x1 = cf.h1(u, z(0), z(1)) + spec.input_perturbation * z(0);
      const double x2 = cf.h2(u, z(0), z(1)) + spec.input_perturbation * z(1);
      const double y = cf.output(x1, x2, u) + eps;
      const double p1 = spec.latency == LatencyMechanism::custom ? spec.latency_prob(u, z) : 0.5;
      const int d = draw < p1 ? 1 : 2;

      out.u(static_cast<Eigen::Index>(row)) = u;
      out.eps(static_cast<Eigen::Index>(row)) = eps;
      out.complete.push_back({y, x1, x2, z, m, 1.0});
      Observation o;
      o.y = y;
      o.d = d;
      o.x_obs = d == 1 ? x1 : x2;
      o.z = z;
      if (spec.wage_latency) o.z(d == 1 ? 1 : 0) = std::numeric_limits<double>::quiet_NaN();
      o.market_id = m;
      masked.push_back(std::move(o));
    }
  }
  out.masked = Sample(std::move(masked));
  return out;
}

std::uint64_t replication_seed(std::uint64_t master, std::uint64_t rep) {
  // SplitMix64 finalizer over a counter offset by the master seed
  std::uint64_t x = master + (rep + 1) * 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string to_string(McEstimator e) {
  switch (e) {
    case McEstimator::tsls: return "tsls";
    case McEstimator::matched: return "matched";
    case McEstimator::matched_star: return "matched_star";
  }
  return "tsls";
}

FirstStageConfig mc_first_stage() {
  FirstStageConfig c;
  c.method = SurfaceMethod::sieve;
  c.sieve_degree = 2;
  c.scope = FirstStageScope::automatic;
  return c;
}

const McCell& McSummary::cell(const std::string& param, McEstimator e) const {
  for (const auto& c : cells)
    if (c.param == param && c.estimator == e) return c;
  throw std::out_of_range("no summary cell for " + param + "/" + to_string(e));
}

namespace {

std::vector<McRecord> run_replication(const DgpSpec& spec, const McConfig& config, int rep) {
  const std::uint64_t seed = replication_seed(spec.seed, static_cast<std::uint64_t>(rep));
  std::mt19937_64 rng(seed);
  std::vector<McRecord> out;
  for (auto e : config.estimators) out.push_back({rep, seed, e, false, {}, {}, {}});

  MarketData data;
  try {
    data = gen_market_data(spec, rng);
  } catch (const Error& err) {
    for (auto& r : out) r.error = err.what();
    return out;
  }

  Sample analysis = data.masked;
  std::vector<CompleteObservation> complete = data.complete;
  std::string wage_error;
  if (spec.wage_latency) {
    try {
      WageImputation wi = impute_latent_wages(data.masked, data.shifters);
      // the benchmark sees true inputs but the same completed instruments
      for (std::size_t i = 0; i < complete.size(); ++i) complete[i].z = wi.completed[i].z;
      analysis = std::move(wi.completed);
    } catch (const Error& err) {
      wage_error = err.what();
    }
  }

  std::optional<FirstStage> fs;
  std::optional<ImputedSample> imp;
  std::string fs_error = wage_error;
  auto ensure_imputed = [&]() {
    if (imp || !fs_error.empty()) return;
    try {
      fs = fit_first_stage(analysis, config.first_stage);
      imp = impute_latent(analysis, *fs);
    } catch (const Error& err) {
      fs_error = err.what();
    }
  };

  for (auto& r : out) {
    try {
      if (!wage_error.empty()) throw NumericalError(wage_error);
      if (r.estimator == McEstimator::tsls) {
        const EstimateResult est = infeasible_tsls(complete, config.matched.estimator);
        r.alpha = est.alpha;
        r.se = est.se;
      } else {
        ensure_imputed();
        if (!imp) throw NumericalError(fs_error);
        const Outcome outcome = r.estimator == McEstimator::matched ? Outcome::raw_y : Outcome::expected_y;
        const EstimateResult est = config.variance ? estimate_matched(*imp, *fs, outcome, config.matched)
                                                   : matched_tsls(*imp, outcome, config.matched.estimator);
        r.alpha = est.alpha;
        r.se = est.se;
      }
      r.ok = r.alpha.allFinite();
      if (!r.ok) r.error = "non-finite estimate";
    } catch (const Error& err) {
      r.error = err.what();
    }
  }
  return out;
}

}  // namespace

McSummary run_monte_carlo(const DgpSpec& spec, const McConfig& config) {
  if (config.replications < 1) throw InvalidSpec("at least one replication required");
  if (config.estimators.empty()) throw InvalidSpec("no estimators requested");
  {
    const auto problems = spec.validate();
    if (!problems.empty()) throw InvalidSpec("invalid DGP: " + problems.front());
  }
  const int R = config.replications;
  std::vector<std::vector<McRecord>> results(static_cast<std::size_t>(R));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int rep; (rep = next.fetch_add(1)) < R;)
      results[static_cast<std::size_t>(rep)] = run_replication(spec, config, rep);
  };
  int threads = config.threads > 0 ? config.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, R));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  McSummary s;
  s.spec = spec.id;
  s.L = spec.L;
  s.I = spec.I;
  s.replications = R;
  if (R < 2) s.warnings.push_back("spread undefined with fewer than 2 replications; reported as 0");
  const Eigen::Vector3d truth(spec.alpha0, spec.alpha1, spec.alpha2);
  const char* names[] = {"alpha0", "alpha1", "alpha2"};

  for (std::size_t k = 0; k < config.estimators.size(); ++k) {
    std::vector<Eigen::VectorXd> est;
    std::size_t failures = 0;
    for (const auto& rep : results) {
      const auto& r = rep[k];
      if (r.ok) est.push_back(r.alpha.head(3)); else ++failures;
    }
    for (Eigen::Index j = 0; j < 3; ++j) {
      McCell c;
      c.param = names[j];
      c.estimator = config.estimators[k];
      c.replications = est.size();
      c.failures = failures;
      double mean = 0.0;
      for (const auto& a : est) mean += a(j);
      mean = est.empty() ? std::numeric_limits<double>::quiet_NaN() : mean / static_cast<double>(est.size());
      c.bias = mean - truth(j);
      double ss = 0.0;
      for (const auto& a : est) ss += (a(j) - mean) * (a(j) - mean);
      c.rmse = est.size() >= 2 ? std::sqrt(ss / static_cast<double>(est.size() - 1)) : 0.0;
      s.cells.push_back(c);
    }
    if (failures > 0)
      s.warnings.push_back(to_string(config.estimators[k]) + ": " + std::to_string(failures) +
                           " failed replications excluded");
  }
  if (config.keep_records)
    for (auto& rep : results)
      for (auto& r : rep) s.records.push_back(std::move(r));
  return s;
}

void write_summary_csv(std::ostream& out, const McSummary& s) {
  out << "param,estimator,spec,L,I,bias,rmse,failures\n";
  std::ostringstream os;
  os << std::setprecision(10);
  for (const auto& c : s.cells)
    os << c.param << ',' << to_string(c.estimator) << ',' << s.spec << ',' << s.L << ',' << s.I << ',' << c.bias
       << ',' << c.rmse << ',' << c.failures << '\n';
  out << os.str();
}

void write_summary_table(std::ostream& out, const McSummary& s) {
  std::vector<McEstimator> ests;
  for (const auto& c : s.cells)
    if (std::find(ests.begin(), ests.end(), c.estimator) == ests.end()) ests.push_back(c.estimator);
  std::ostringstream os;
  os << std::left << std::setw(8) << "Param" << std::right << std::setw(9) << "Markets" << std::setw(7) << "Firms"
     << std::setw(6) << "Spec";
  for (auto e : ests) os << std::setw(14) << (to_string(e) + " bias") << std::setw(14) << (to_string(e) + " rmse");
  os << '\n' << std::fixed << std::setprecision(3);
  for (const char* p : {"alpha0", "alpha1", "alpha2"}) {
    os << std::left << std::setw(8) << p << std::right << std::setw(9) << s.L << std::setw(7) << s.I << std::setw(6)
       << s.spec;
    for (auto e : ests) {
      const auto& c = s.cell(p, e);
      os << std::setw(14) << c.bias << std::setw(14) << c.rmse;
    }
    os << '\n';
  }
  for (const auto& w : s.warnings) os << "warning: " << w << '\n';
  out << os.str();
}

void write_records_csv(std::ostream& out, const McSummary& s) {
  std::ostringstream os;
  os << "rep,seed,estimator,ok,alpha0,alpha1,alpha2,se0,se1,se2,error\n" << std::setprecision(12);
  for (const auto& r : s.records) {
    os << r.rep << ',' << r.seed << ',' << to_string(r.estimator) << ',' << (r.ok ? 1 : 0);
    for (Eigen::Index j = 0; j < 3; ++j) os << ',' << (r.ok && r.alpha.size() > j ? r.alpha(j) : std::nan(""));
    for (Eigen::Index j = 0; j < 3; ++j) os << ',' << (r.ok && r.se.size() > j ? r.se(j) : std::nan(""));
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    os << ',' << err << '\n';
  }
  out << os.str();
}

GiftOutcome gift_equilibrium(const GiftScenario& s) {
  if (!(s.m1 > 0.0 && s.m2 > 0.0)) throw std::invalid_argument("parental wealth must be positive");
  if (!(s.mu >= 0.0 && s.mu <= 1.0)) throw std::invalid_argument("survival probability must lie in [0, 1]");
  GiftOutcome g;
  g.g1 = ((1.0 + s.mu) * s.m1 - s.m2) / (2.0 + s.mu);
  g.g2 = ((1.0 + s.mu) * s.m2 - s.m1) / (2.0 + s.mu);
  g.corner = g.g1 <= 0.0 || g.g2 <= 0.0;
  return g;
}

}  // namespace latent
