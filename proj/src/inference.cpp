#include "latent_match/inference.hpp"

#include "latent_match/errors.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>

namespace latent {

std::string to_string(TestKind k) {
  switch (k) {
    case TestKind::wald: return "wald";
    case TestKind::t_one_sided: return "t_one_sided";
    case TestKind::f_ratio: return "f_ratio";
    case TestKind::optimality_wald: return "optimality_wald";
  }
  return "wald";
}

namespace {

double chi2_upper(double w, double df) {
  if (w <= 0.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), w));
}

// Quadratic form d' V^-1 d, failing on non positive definite V.
double quadratic_form(const Eigen::VectorXd& d, const Eigen::MatrixXd& V) {
  const Eigen::MatrixXd Vs = 0.5 * (V + V.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Vs);
  const auto& ev = eig.eigenvalues();
  if (eig.info() != Eigen::Success || !(ev.minCoeff() > 1e-14 * std::max(1.0, ev.maxCoeff())))
    throw SingularCovariance("covariance of the tested contrast is singular");
  const Eigen::VectorXd t = eig.eigenvectors().transpose() * d;
  return (t.array().square() / ev.array()).sum();
}

}  // namespace

TestResult wald_joint(const EstimateResult& a, const EstimateResult& b) {
  if (a.alpha.size() != b.alpha.size()) throw InvalidSpec("estimates have different coefficient dimensions");
  if (a.sigma.rows() != a.alpha.size() || b.sigma.rows() != b.alpha.size())
    throw SingularCovariance("estimate carries no covariance matrix");
  const Eigen::VectorXd d = a.alpha - b.alpha;
  const Eigen::MatrixXd V = a.sigma / static_cast<double>(a.n) + b.sigma / static_cast<double>(b.n);
  TestResult r;
  r.kind = TestKind::wald;
  r.df = {static_cast<double>(d.size())};
  if (d.isZero(0.0)) {
    r.statistic = 0.0;
  } else {
    r.statistic = quadratic_form(d, V);
  }
  r.p_value = chi2_upper(r.statistic, r.df[0]);
  r.h0 = "coefficient vectors equal across samples";
  return r;
}

TestResult t_one_sided(const EstimateResult& a, const EstimateResult& b, Eigen::Index j, Tail tail) {
  if (j < 0 || j >= a.alpha.size() || j >= b.alpha.size())
    throw std::out_of_range("coefficient index outside the estimates");
  const double diff = a.alpha(j) - b.alpha(j);
  const double s = std::sqrt(a.se(j) * a.se(j) + b.se(j) * b.se(j));
  TestResult r;
  r.kind = TestKind::t_one_sided;
  r.statistic = diff == 0.0 ? 0.0 : diff / s;
  r.df = {std::numeric_limits<double>::infinity()};
  const boost::math::normal_distribution<double> N;
  r.p_value = tail == Tail::lower ? boost::math::cdf(N, r.statistic)
                                  : boost::math::cdf(boost::math::complement(N, r.statistic));
  r.h0 = "alpha_" + std::to_string(j) + (tail == Tail::lower ? " (a) >= (b)" : " (a) <= (b)");
  return r;
}

TestResult f_ratio(double resid_var_a, double df_a, double resid_var_b, double df_b) {
  if (!(resid_var_a > 0.0 && resid_var_b > 0.0 && df_a > 0.0 && df_b > 0.0))
    throw std::invalid_argument("variance ratio test needs positive variances and degrees of freedom");
  TestResult r;
  r.kind = TestKind::f_ratio;
  r.statistic = resid_var_a / resid_var_b;
  r.df = {df_a, df_b};
  r.p_value = boost::math::cdf(
      boost::math::complement(boost::math::fisher_f_distribution<double>(df_a, df_b), r.statistic));
  r.h0 = "var(a) <= var(b)";
  return r;
}

TestResult optimality_test(const Sample& sample, int k, OptimalityNull null) {
  if (k != 1 && k != 2) throw std::invalid_argument("latency class must be 1 or 2");
  std::vector<const Observation*> rows;
  for (const auto& o : sample.rows())
    if (o.d == k) rows.push_back(&o);
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n <= 3)
    throw RankDeficientDesign("class " + std::to_string(k) + " has " + std::to_string(n) +
                              " rows, more than 3 needed");
  const Eigen::Index zk = k - 1;
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = *rows[static_cast<std::size_t>(i)];
    if (o.z.size() <= zk) throw SchemaError("instrument z" + std::to_string(k) + " missing");
    X.row(i) << 1.0, o.x_obs, o.z(zk);
    y(i) = o.y;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < 3) throw RankDeficientDesign("regressors (1, x, z) are collinear within the class");
  const Eigen::VectorXd b = qr.solve(y);
  const Eigen::VectorXd e = y - X * b;
  const Eigen::MatrixXd XXinv = (X.transpose() * X).inverse();
  const Eigen::MatrixXd V = XXinv * (X.transpose() * e.array().square().matrix().asDiagonal() * X) * XXinv;

  Eigen::MatrixXd R;
  Eigen::VectorXd q;
  if (null == OptimalityNull::both_one) {
    R = Eigen::MatrixXd::Zero(2, 3);
    R(0, 1) = 1.0;
    R(1, 2) = 1.0;
    q = Eigen::Vector2d(1.0, 1.0);
  } else {
    R = Eigen::MatrixXd::Zero(1, 3);
    R(0, 1) = 1.0;
    R(0, 2) = -1.0;
    q = Eigen::VectorXd::Zero(1);
  }
  TestResult r;
  r.kind = TestKind::optimality_wald;
  r.statistic = quadratic_form(R * b - q, R * V * R.transpose());
  r.df = {static_cast<double>(R.rows())};
  r.p_value = chi2_upper(r.statistic, r.df[0]);
  r.h0 = null == OptimalityNull::both_one ? "coef(x" + std::to_string(k) + ") = coef(z" + std::to_string(k) + ") = 1"
                                          : "coef(x" + std::to_string(k) + ") = coef(z" + std::to_string(k) + ")";
  return r;
}

}  // namespace latent
