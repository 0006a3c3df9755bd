#include "latent_match/imputation.hpp"

#include "latent_match/errors.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

namespace latent {

std::string to_string(ImputeFlag f) {
  switch (f) {
    case ImputeFlag::interior: return "interior";
    case ImputeFlag::clamped_low: return "clamped_low";
    case ImputeFlag::clamped_high: return "clamped_high";
    case ImputeFlag::failed: return "failed";
  }
  return "failed";
}

std::size_t ImputedSample::count(ImputeFlag f) const {
  std::size_t n = 0;
  for (const auto& r : rows) n += (r.flag == f);
  return n;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kEdgeScan = 64;

// Kernel surfaces can be undefined near the box edge at a given z; walk inward
// until the surface is evaluable.
bool evaluable_ends(const RegressionSurface& s, const Eigen::Ref<const Eigen::VectorXd>& z,
                    double& lo, double& hi, double& flo, double& fhi) {
  const auto [a, b] = s.envelope().c_range(z);
  int i = 0, j = kEdgeScan;
  auto at = [&](int k) { return a + (b - a) * k / kEdgeScan; };
  SurfacePoint p;
  for (; i <= kEdgeScan; ++i)
    if ((p = s.evaluate(at(i), z)).ok()) break;
  if (i > kEdgeScan) return false;
  lo = at(i);
  flo = p.value;
  for (; j >= i; --j)
    if ((p = s.evaluate(at(j), z)).ok()) break;
  hi = at(j);
  fhi = p.value;
  return true;
}

}  // namespace

Inversion invert_surface(const RegressionSurface& surface, double v,
                         const Eigen::Ref<const Eigen::VectorXd>& z, const InversionOptions& options) {
  if (options.require_certified && !surface.certified())
    throw NotCertified("surface " + surface.tag() + " failed monotonicity certification");
  if (!std::isfinite(v)) return {kNaN, ImputeFlag::failed};

  double lo, hi, flo, fhi;
  if (!evaluable_ends(surface, z, lo, hi, flo, fhi)) return {kNaN, ImputeFlag::failed};
  if (flo > fhi) {
    if (!surface.certified()) throw NonBracketable("surface decreasing in c at the query instruments");
    return {kNaN, ImputeFlag::failed};
  }
  if (v <= flo) return {lo, std::abs(v - flo) <= options.tol ? ImputeFlag::interior : ImputeFlag::clamped_low};
  if (v >= fhi) return {hi, std::abs(v - fhi) <= options.tol ? ImputeFlag::interior : ImputeFlag::clamped_high};

  double mid = 0.5 * (lo + hi);
  double fmid = kNaN;
  for (int it = 0; it < options.max_iter; ++it) {
    mid = 0.5 * (lo + hi);
    const auto p = surface.evaluate(mid, z);
    if (!p.ok()) return {kNaN, ImputeFlag::failed};
    fmid = p.value;
    if (fmid == v) break;
    if (fmid < v) lo = mid; else hi = mid;
  }
  if (!(std::abs(fmid - v) <= options.tol)) {
    // a last midpoint step may still be coarser than tol on steep surfaces
    mid = 0.5 * (lo + hi);
    const auto p = surface.evaluate(mid, z);
    if (!p.ok() || !(std::abs(p.value - v) <= options.tol)) return {mid, ImputeFlag::failed};
  }
  return {mid, ImputeFlag::interior};
}

namespace {

template <typename Lookup>
ImputedSample impute_with(const Sample& sample, Lookup&& surfaces_for, const InversionOptions& options) {
  ImputedSample out;
  out.base = sample;
  out.rows.resize(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto& r = sample[i];
    const SurfacePair& pair = surfaces_for(r);
    const RegressionSurface& own = pair[r.d];
    const RegressionSurface& other = pair[r.d == 1 ? 2 : 1];
    if (options.require_certified && !(own.certified() && other.certified()))
      throw NotCertified("first-stage surfaces for market " + std::to_string(r.market_id) +
                         " failed monotonicity certification");
    ImputedRow& row = out.rows[i];
    const auto fitted = own.evaluate(r.x_obs, r.z);
    if (!fitted.ok()) {
      row = {kNaN, kNaN, ImputeFlag::failed};
      continue;
    }
    row.y_tilde = fitted.value;
    const Inversion inv = invert_surface(other, fitted.value, r.z, options);
    row.x_hat = inv.c;
    row.flag = inv.flag;
  }
  return out;
}

}  // namespace

ImputedSample impute_latent(const Sample& sample, const RegressionSurface& g1,
                            const RegressionSurface& g2, const InversionOptions& options) {
  const SurfacePair pair{g1, g2};
  return impute_with(sample, [&](const Observation&) -> const SurfacePair& { return pair; }, options);
}

ImputedSample impute_latent(const Sample& sample, const FirstStage& first_stage,
                            const InversionOptions& options) {
  return impute_with(
      sample,
      [&](const Observation& r) -> const SurfacePair& { return first_stage.surfaces_for(r.market_id); },
      options);
}

WageImputation impute_latent_wages(const Sample& sample, const std::map<int, Eigen::VectorXd>& shifters) {
  WageImputation out;
  const Eigen::Index dz = sample.instrument_dim();
  if (sample.empty()) throw EmptySubsample("no rows to impute wages for");
  Eigen::Index ds = -1;
  for (const auto& r : sample.rows()) {
    auto it = shifters.find(r.market_id);
    if (it == shifters.end())
      throw SchemaError("no demand shifters for market " + std::to_string(r.market_id));
    if (ds < 0) ds = it->second.size();
    if (it->second.size() != ds) throw SchemaError("demand shifter dimension differs across markets");
  }
  const Eigen::Index p = 1 + ds;
  std::vector<Observation> rows = sample.rows();

  for (Eigen::Index k = 0; k < dz; ++k) {
    std::vector<std::size_t> obs;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (std::isfinite(rows[i].z(k))) obs.push_back(i);
    const auto n = static_cast<Eigen::Index>(obs.size());
    if (n <= p)
      throw SingularShifterDesign("instrument z" + std::to_string(k + 1) + " observed on " +
                                  std::to_string(n) + " rows, need more than " + std::to_string(p));
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& o = rows[obs[static_cast<std::size_t>(r)]];
      X(r, 0) = 1.0;
      X.row(r).tail(ds) = shifters.at(o.market_id).transpose();
      y(r) = o.z(k);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < p)
      throw SingularShifterDesign("demand shifters are collinear on rows observing z" + std::to_string(k + 1));
    const Eigen::VectorXd b = qr.solve(y);
    const Eigen::VectorXd e = y - X * b;
    const double tss = (y.array() - y.mean()).square().sum();
    out.r_squared.push_back(tss > 0.0 ? 1.0 - e.squaredNorm() / tss : 1.0);
    out.coefficients.push_back(b);

    for (auto& o : rows) {
      if (std::isfinite(o.z(k))) continue;
      o.z(k) = b(0) + shifters.at(o.market_id).dot(b.tail(ds));
      ++out.imputed_cells;
    }
  }
  out.completed = Sample(std::move(rows));
  return out;
}

void write_imputed_csv(std::ostream& out, const ImputedSample& imp) {
  out << "row,d,x_obs,x_hat,y,y_tilde,flag\n" << std::setprecision(12);
  for (std::size_t i = 0; i < imp.size(); ++i) {
    const auto& b = imp.base[i];
    const auto& r = imp.rows[i];
    out << i << ',' << b.d << ',' << b.x_obs << ',' << r.x_hat << ',' << b.y << ',' << r.y_tilde << ','
        << to_string(r.flag) << '\n';
  }
}

}  // namespace latent
