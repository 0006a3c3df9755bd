#include "latent_match/estimator.hpp"

#include "latent_match/errors.hpp"
#include "latent_match/kernel.hpp"

#include <cmath>
#include <limits>

namespace latent {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::matched_raw: return "matched_raw";
    case Variant::matched_expected: return "matched_expected";
    case Variant::infeasible_tsls: return "infeasible_tsls";
    case Variant::two_stage_ls: return "two_stage_ls";
  }
  return "matched_raw";
}

std::string to_string(LambdaMode m) { return m == LambdaMode::proportion ? "proportion" : "smoothed"; }

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Rows entering the moments, with their instruments, regressors and weights.
struct Moments {
  std::vector<std::size_t> index;
  Eigen::MatrixXd Z;  // (1, z)
  Eigen::MatrixXd X;  // (1, x1, x2)
  Eigen::VectorXd w;

  Eigen::Index n() const { return Z.rows(); }
};

Moments collect(const ImputedSample& imp, const EstimatorOptions& options) {
  const Eigen::VectorXd w = moment_weights(imp, options);
  Moments m;
  for (std::size_t i = 0; i < imp.size(); ++i)
    if (w(static_cast<Eigen::Index>(i)) > 0.0) m.index.push_back(i);
  const auto n = static_cast<Eigen::Index>(m.index.size());
  const Eigen::Index dz = imp.base.instrument_dim();
  m.Z.resize(n, 1 + dz);
  m.X.resize(n, 3);
  m.w.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t i = m.index[static_cast<std::size_t>(r)];
    m.Z(r, 0) = 1.0;
    m.Z.row(r).tail(dz) = imp.base[i].z.transpose();
    m.X.row(r) << 1.0, imp.x1(i), imp.x2(i);
    m.w(r) = w(static_cast<Eigen::Index>(i));
  }
  return m;
}

Eigen::VectorXd outcome_of(const ImputedSample& imp, const Moments& m, Outcome outcome) {
  Eigen::VectorXd y(m.n());
  for (Eigen::Index r = 0; r < m.n(); ++r) {
    const std::size_t i = m.index[static_cast<std::size_t>(r)];
    y(r) = outcome == Outcome::raw_y ? imp.base[i].y : imp.rows[i].y_tilde;
  }
  return y;
}

double condition_number(const Eigen::MatrixXd& A) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || !(s(s.size() - 1) > 0.0)) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

void require_well_conditioned(const Eigen::MatrixXd& S, double limit, const char* what) {
  const double c = condition_number(S);
  if (!(c <= limit))
    throw SingularMoment(std::string(what) + " is numerically singular (condition number " +
                         std::to_string(c) + ")");
}

struct IvFit {
  Eigen::VectorXd alpha;
  Eigen::MatrixXd S;  // n^-1 sum w z x'
};

IvFit iv_fit(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
             const Eigen::VectorXd& w, double cond_limit) {
  if (Z.rows() < X.cols())
    throw SingularMoment("only " + std::to_string(Z.rows()) + " usable rows for " +
                         std::to_string(X.cols()) + " coefficients");
  if (Z.cols() != X.cols())
    throw std::invalid_argument("just-identified IV needs as many instruments as regressors");
  const double n = static_cast<double>(Z.rows());
  IvFit f;
  const Eigen::MatrixXd ZW = Z.transpose() * w.asDiagonal();
  f.S = ZW * X / n;
  require_well_conditioned(f.S, cond_limit, "instrument-regressor moment");
  f.alpha = f.S.colPivHouseholderQr().solve(ZW * y / n);
  return f;
}

// S^-1 Omega S^-T, symmetrized.
Eigen::MatrixXd sandwich(const Eigen::MatrixXd& S, const Eigen::MatrixXd& omega) {
  const auto qr = S.colPivHouseholderQr();
  const Eigen::MatrixXd left = qr.solve(omega);
  const Eigen::MatrixXd sigma = qr.solve(left.transpose()).transpose();
  return 0.5 * (sigma + sigma.transpose());
}

Eigen::MatrixXd meat(const Eigen::MatrixXd& Z, const Eigen::VectorXd& w, const Eigen::VectorXd& resid) {
  const Eigen::VectorXd s = (w.array() * resid.array()).square().matrix();
  return Z.transpose() * s.asDiagonal() * Z / static_cast<double>(Z.rows());
}

void finish(EstimateResult& r) {
  r.se = (r.sigma.diagonal().array().max(0.0) / static_cast<double>(r.n)).sqrt().matrix();
}

}  // namespace

Eigen::VectorXd moment_weights(const ImputedSample& imp, const EstimatorOptions& options) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(imp.size()));
  for (std::size_t i = 0; i < imp.size(); ++i) {
    const auto f = imp.rows[i].flag;
    const bool drop = f == ImputeFlag::failed ||
                      (options.drop_clamped && (f == ImputeFlag::clamped_low || f == ImputeFlag::clamped_high));
    w(static_cast<Eigen::Index>(i)) = drop ? 0.0 : imp.base[i].weight;
  }
  return w;
}

EstimateResult matched_tsls(const ImputedSample& imp, Outcome outcome, const EstimatorOptions& options) {
  const Moments m = collect(imp, options);
  const IvFit f = iv_fit(m.Z, m.X, outcome_of(imp, m, outcome), m.w, options.singular_condition);
  EstimateResult r;
  r.alpha = f.alpha;
  r.n = static_cast<std::size_t>(m.n());
  r.variant = outcome == Outcome::raw_y ? Variant::matched_raw : Variant::matched_expected;
  r.clamped = imp.count(ImputeFlag::clamped_low) + imp.count(ImputeFlag::clamped_high);
  r.failed = imp.count(ImputeFlag::failed);
  return r;
}

EstimateResult infeasible_tsls(const std::vector<CompleteObservation>& complete,
                               const EstimatorOptions& options) {
  if (complete.empty()) throw SingularMoment("no complete observations");
  const auto n = static_cast<Eigen::Index>(complete.size());
  const Eigen::Index dz = complete.front().z.size();
  Eigen::MatrixXd Z(n, 1 + dz), X(n, 3);
  Eigen::VectorXd y(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = complete[static_cast<std::size_t>(i)];
    Z(i, 0) = 1.0;
    Z.row(i).tail(dz) = c.z.transpose();
    X.row(i) << 1.0, c.x1, c.x2;
    y(i) = c.y;
    w(i) = c.weight;
  }
  const IvFit f = iv_fit(Z, X, y, w, options.singular_condition);
  EstimateResult r;
  r.alpha = f.alpha;
  r.n = static_cast<std::size_t>(n);
  r.variant = Variant::infeasible_tsls;
  r.omega = meat(Z, w, y - X * f.alpha);
  r.sigma = sandwich(f.S, r.omega);
  finish(r);
  r.first_stage_f = first_stage_f(complete);
  return r;
}

EstimateResult two_stage_ls(const ImputedSample& imp, const Eigen::MatrixXd& extra_instruments,
                            Outcome outcome, const InfluenceWeights* weights, const EstimatorOptions& options) {
  if (extra_instruments.rows() != 0 && extra_instruments.rows() != static_cast<Eigen::Index>(imp.size()))
    throw std::invalid_argument("extra instruments must have one row per observation");
  const Moments m = collect(imp, options);
  const Eigen::Index ke = extra_instruments.rows() ? extra_instruments.cols() : 0;
  Eigen::MatrixXd Z(m.n(), m.Z.cols() + ke);
  Z.leftCols(m.Z.cols()) = m.Z;
  for (Eigen::Index r = 0; r < m.n() && ke > 0; ++r)
    Z.row(r).tail(ke) = extra_instruments.row(static_cast<Eigen::Index>(m.index[static_cast<std::size_t>(r)]));

  const Eigen::Index kx = m.X.cols();
  if (Z.cols() < kx)
    throw RankDeficientInstruments("2SLS needs at least " + std::to_string(kx) + " instruments");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> zqr(Z);
  zqr.setThreshold(1e-10);
  if (zqr.rank() < kx)
    throw RankDeficientInstruments("instrument matrix has rank " + std::to_string(zqr.rank()) + " below " +
                                   std::to_string(kx));

  const double n = static_cast<double>(m.n());
  const Eigen::VectorXd y = outcome_of(imp, m, outcome);
  const Eigen::MatrixXd ZW = Z.transpose() * m.w.asDiagonal();
  const Eigen::MatrixXd Szz = ZW * Z / n;
  const Eigen::MatrixXd Szx = ZW * m.X / n;
  const Eigen::VectorXd Szy = ZW * y / n;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Szz.rows(), Szz.cols());
  cod.setThreshold(1e-12);
  cod.compute(Szz);
  const Eigen::MatrixXd P = cod.pseudoInverse();
  const Eigen::MatrixXd A = Szx.transpose() * P * Szx;
  require_well_conditioned(A, options.singular_condition, "projected moment matrix");
  const auto aqr = A.colPivHouseholderQr();

  EstimateResult r;
  r.alpha = aqr.solve(Szx.transpose() * P * Szy);
  r.n = static_cast<std::size_t>(m.n());
  r.variant = Variant::two_stage_ls;
  r.clamped = imp.count(ImputeFlag::clamped_low) + imp.count(ImputeFlag::clamped_high);
  r.failed = imp.count(ImputeFlag::failed);

  Eigen::VectorXd resid = y - m.X * r.alpha;
  if (weights) {
    for (Eigen::Index k = 0; k < m.n(); ++k) {
      const std::size_t i = m.index[static_cast<std::size_t>(k)];
      resid(k) += weights->phi(static_cast<Eigen::Index>(i)) * (imp.base[i].y - imp.rows[i].y_tilde);
    }
  }
  r.omega = meat(Z, m.w, resid);
  const Eigen::MatrixXd B = aqr.solve(Szx.transpose() * P);  // A^-1 Sxz P
  const Eigen::MatrixXd sigma = B * r.omega * B.transpose();
  r.sigma = 0.5 * (sigma + sigma.transpose());
  finish(r);
  return r;
}

namespace {

// Order 2 keeps the weights non-negative, so fitted values are probabilities.
Eigen::VectorXd smooth_indicator(const Eigen::MatrixXd& V, const Eigen::VectorXd& D, double fallback,
                                 const LambdaOptions& options) {
  const Eigen::Index n = V.rows();
  Eigen::VectorXd lambda = Eigen::VectorXd::Constant(n, fallback);
  if (n < 2) return lambda;
  const double h = options.bandwidth_scale * std::pow(static_cast<double>(n), -kBandwidthExponent);
  const NadarayaWatson<double> nw(V, D, MomentKernel<double>(2), h);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto p = nw.evaluate(V.row(i).transpose());
    if (p.weight_sum > 0.0 && p.support >= options.min_support) lambda(i) = p.value;
  }
  return lambda;
}

}  // namespace

Eigen::VectorXd estimate_lambda(const Sample& sample, LambdaMode mode, const LambdaOptions& options) {
  const auto n = static_cast<Eigen::Index>(sample.size());
  if (n == 0) return {};
  const double share = static_cast<double>(sample.count(1)) / static_cast<double>(n);
  Eigen::VectorXd lambda = Eigen::VectorXd::Constant(n, share);
  if (mode == LambdaMode::smoothed) {
    const Eigen::Index dz = sample.instrument_dim();
    Eigen::MatrixXd V(n, 1 + dz);
    Eigen::VectorXd D(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = sample[static_cast<std::size_t>(i)];
      V(i, 0) = r.x_obs;
      V.row(i).tail(dz) = r.z.transpose();
      D(i) = r.d == 1 ? 1.0 : 0.0;
    }
    lambda = smooth_indicator(V, D, share, options);
  }
  return lambda.cwiseMax(options.clip_lo).cwiseMin(options.clip_hi);
}

Eigen::VectorXd estimate_lambda(const ImputedSample& imp, LambdaMode mode, const LambdaOptions& options) {
  const auto n = static_cast<Eigen::Index>(imp.size());
  if (n == 0) return {};
  const double share = static_cast<double>(imp.base.count(1)) / static_cast<double>(n);
  Eigen::VectorXd lambda = Eigen::VectorXd::Constant(n, share);
  if (mode == LambdaMode::smoothed) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < imp.size(); ++i)
      if (imp.rows[i].flag != ImputeFlag::failed && std::isfinite(imp.x1(i))) keep.push_back(i);
    const Eigen::Index dz = imp.base.instrument_dim();
    const auto m = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd V(m, 1 + dz);
    Eigen::VectorXd D(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const std::size_t i = keep[static_cast<std::size_t>(r)];
      V(r, 0) = imp.x1(i);
      V.row(r).tail(dz) = imp.base[i].z.transpose();
      D(r) = imp.base[i].d == 1 ? 1.0 : 0.0;
    }
    const Eigen::VectorXd fitted = smooth_indicator(V, D, share, options);
    for (Eigen::Index r = 0; r < m; ++r) lambda(static_cast<Eigen::Index>(keep[static_cast<std::size_t>(r)])) = fitted(r);
  }
  return lambda.cwiseMax(options.clip_lo).cwiseMin(options.clip_hi);
}

InfluenceWeights influence_phi(const ImputedSample& imp, const Eigen::VectorXd& alpha,
                               const FirstStage& first_stage, const Eigen::VectorXd& lambda1, PhiKind kind,
                               const EstimatorOptions& options, double floor) {
  const auto n = static_cast<Eigen::Index>(imp.size());
  if (lambda1.size() != n) throw std::invalid_argument("lambda must have one entry per row");
  if (alpha.size() < 3) throw std::invalid_argument("alpha must hold (alpha0, alpha1, alpha2)");
  const Eigen::VectorXd w = moment_weights(imp, options);
  InfluenceWeights out;
  out.kind = kind;
  out.lambda1 = lambda1;
  out.phi = Eigen::VectorXd::Zero(n);
  out.gamma_prime_1 = Eigen::VectorXd::Constant(n, kNaN);
  out.gamma_prime_2 = Eigen::VectorXd::Constant(n, kNaN);
  const double a1 = alpha(1), a2 = alpha(2);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(w(i) > 0.0)) continue;
    const auto k = static_cast<std::size_t>(i);
    const auto& row = imp.base[k];
    const SurfacePair& pair = first_stage.surfaces_for(row.market_id);
    const auto p1 = pair.gamma1.evaluate(imp.x1(k), row.z);
    const auto p2 = pair.gamma2.evaluate(imp.x2(k), row.z);
    if (!p1.ok() || !p2.ok() || !(p1.slope >= floor) || !(p2.slope >= floor))
      throw DerivativeFloorViolated("row " + std::to_string(k) + ": first-stage slope below " +
                                    std::to_string(floor));
    out.gamma_prime_1(i) = p1.slope;
    out.gamma_prime_2(i) = p2.slope;
    const double l1 = lambda1(i), l2 = 1.0 - l1;
    const double r1 = a1 / p1.slope, r2 = a2 / p2.slope;
    if (kind == PhiKind::phi) {
      out.phi(i) = -(l1 * r2 - l2 * r1) * (row.d == 1 ? 1.0 : -1.0);
    } else {
      out.phi(i) = row.d == 1 ? l1 * (1.0 - r2) + l2 * r1 : l1 * r2 + l2 * (1.0 - r1);
    }
  }
  return out;
}

void variance_matched(const ImputedSample& imp, EstimateResult& result, const InfluenceWeights& weights,
                      Outcome outcome, const EstimatorOptions& options) {
  const Moments m = collect(imp, options);
  if (static_cast<std::size_t>(m.n()) != result.n)
    throw std::invalid_argument("estimate and imputed sample disagree on the usable rows");
  const double n = static_cast<double>(m.n());
  const Eigen::MatrixXd S = m.Z.transpose() * m.w.asDiagonal() * m.X / n;
  require_well_conditioned(S, options.singular_condition, "instrument-regressor moment");
  Eigen::VectorXd resid = outcome_of(imp, m, outcome) - m.X * result.alpha;
  for (Eigen::Index k = 0; k < m.n(); ++k) {
    const std::size_t i = m.index[static_cast<std::size_t>(k)];
    resid(k) += weights.phi(static_cast<Eigen::Index>(i)) * (imp.base[i].y - imp.rows[i].y_tilde);
  }
  result.omega = meat(m.Z, m.w, resid);
  result.sigma = sandwich(S, result.omega);
  finish(result);
}

Eigen::VectorXd first_stage_f(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& instruments) {
  const Eigen::Index n = inputs.rows();
  const Eigen::Index k = instruments.cols();
  Eigen::VectorXd out = Eigen::VectorXd::Constant(inputs.cols(), kNaN);
  if (n <= k + 1 || k == 0) return out;
  Eigen::MatrixXd Z(n, k + 1);
  Z.col(0).setOnes();
  Z.rightCols(k) = instruments;
  const auto qr = Z.colPivHouseholderQr();
  if (qr.rank() < k + 1) return out;
  const Eigen::MatrixXd ZZinv = (Z.transpose() * Z).inverse();
  for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
    const Eigen::VectorXd b = qr.solve(inputs.col(j));
    const Eigen::VectorXd e = inputs.col(j) - Z * b;
    const Eigen::MatrixXd V = ZZinv * (Z.transpose() * e.array().square().matrix().asDiagonal() * Z) * ZZinv;
    const Eigen::MatrixXd Vs = V.bottomRightCorner(k, k);
    const Eigen::VectorXd bs = b.tail(k);
    const auto ldlt = Vs.ldlt();
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0)) continue;
    out(j) = bs.dot(ldlt.solve(bs)) / static_cast<double>(k);
  }
  return out;
}

Eigen::VectorXd first_stage_f(const ImputedSample& imp, const EstimatorOptions& options) {
  const Moments m = collect(imp, options);
  return first_stage_f(m.X.rightCols(2), m.Z.rightCols(m.Z.cols() - 1));
}

Eigen::VectorXd first_stage_f(const std::vector<CompleteObservation>& complete) {
  if (complete.empty()) return {};
  const auto n = static_cast<Eigen::Index>(complete.size());
  const Eigen::Index dz = complete.front().z.size();
  Eigen::MatrixXd X(n, 2), Z(n, dz);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = complete[static_cast<std::size_t>(i)];
    X.row(i) << c.x1, c.x2;
    Z.row(i) = c.z.transpose();
  }
  return first_stage_f(X, Z);
}

EstimateResult estimate_matched(const ImputedSample& imp, const FirstStage& first_stage, Outcome outcome,
                                const MatchedOptions& options) {
  EstimateResult r = matched_tsls(imp, outcome, options.estimator);
  const Eigen::VectorXd lambda = estimate_lambda(imp, options.lambda, options.lambda_options);
  const InfluenceWeights w =
      influence_phi(imp, r.alpha, first_stage, lambda,
                    outcome == Outcome::raw_y ? PhiKind::phi : PhiKind::phi_star, options.estimator, options.floor);
  variance_matched(imp, r, w, outcome, options.estimator);
  r.first_stage_f = first_stage_f(imp, options.estimator);
  r.lambda_mode = to_string(options.lambda);
  return r;
}

}  // namespace latent
