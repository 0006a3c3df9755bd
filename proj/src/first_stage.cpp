#include "latent_match/first_stage.hpp"

#include "latent_match/errors.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <variant>

namespace latent {

namespace detail {

struct SieveModel {
  PolynomialBasis<double> basis;
  Eigen::VectorXd coef;
};

struct KernelModel {
  NadarayaWatson<double> nw;
  std::size_t min_support = 10;
};

struct SurfaceModel {
  std::variant<SieveModel, KernelModel> fit;
  Envelope envelope;
  Eigen::Index z_dim = 0;
  std::size_t n = 0;
};

}  // namespace detail

RegressionSurface make_surface(std::shared_ptr<const detail::SurfaceModel> m) {
  return RegressionSurface(std::move(m));
}

namespace {

const detail::SurfaceModel& model_of(const std::shared_ptr<const detail::SurfaceModel>& m) {
  if (!m) throw std::logic_error("regression surface used before fitting");
  return *m;
}

constexpr double kDegenerateWeight = 1e-10;

struct Design {
  Eigen::MatrixXd v;  // columns: c, z_used...
  Eigen::VectorXd y;
};

Design build_design(const Sample& subsample, bool use_z) {
  if (subsample.empty()) throw EmptySubsample("cannot fit a surface on an empty subsample");
  const Eigen::Index dz = use_z ? subsample.instrument_dim() : 0;
  Design d;
  d.v.resize(static_cast<Eigen::Index>(subsample.size()), 1 + dz);
  d.y.resize(static_cast<Eigen::Index>(subsample.size()));
  for (std::size_t i = 0; i < subsample.size(); ++i) {
    const auto& r = subsample[i];
    const auto row = static_cast<Eigen::Index>(i);
    d.v(row, 0) = r.x_obs;
    if (dz > 0) d.v.row(row).tail(dz) = r.z.head(dz).transpose();
    d.y(row) = r.y;
  }
  return d;
}

Envelope envelope_of(const Eigen::MatrixXd& v, double pad) {
  Envelope e;
  e.lower = v.colwise().minCoeff().transpose();
  e.upper = v.colwise().maxCoeff().transpose();
  e.pad = pad;
  if (v.cols() > 1) {
    Eigen::MatrixXd Z(v.rows(), v.cols());
    Z.col(0).setOnes();
    Z.rightCols(v.cols() - 1) = v.rightCols(v.cols() - 1);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Z);
    e.c_fit = cod.solve(v.col(0));
    const Eigen::VectorXd r = v.col(0) - Z * e.c_fit;
    e.resid_lo = r.minCoeff();
    e.resid_hi = r.maxCoeff();
  }
  return e;
}

Eigen::VectorXd query_point(const detail::SurfaceModel& m, double c,
                            const Eigen::Ref<const Eigen::VectorXd>& z) {
  Eigen::VectorXd q(1 + m.z_dim);
  q(0) = c;
  if (m.z_dim > 0) {
    if (z.size() < m.z_dim)
      throw std::invalid_argument("query instrument vector shorter than the fitted surface");
    q.tail(m.z_dim) = z.head(m.z_dim);
  }
  return q;
}

// Visits every point of the tensor grid over the (unpadded) envelope box.
template <typename Fn>
void for_each_grid_point(const Envelope& env, int density, Fn&& fn) {
  const Eigen::Index dims = env.dims();
  const int g = std::max(density, 2);
  std::vector<int> idx(static_cast<std::size_t>(dims), 0);
  Eigen::VectorXd p(dims);
  while (true) {
    for (Eigen::Index j = 0; j < dims; ++j) {
      const double t = static_cast<double>(idx[static_cast<std::size_t>(j)]) / (g - 1);
      p(j) = env.lower(j) + t * (env.upper(j) - env.lower(j));
    }
    fn(p);
    Eigen::Index j = 0;
    for (; j < dims; ++j) {
      if (++idx[static_cast<std::size_t>(j)] < g) break;
      // degenerate axes collapse to a single grid line
      idx[static_cast<std::size_t>(j)] = 0;
    }
    if (j == dims) break;
  }
}

}  // namespace

bool Envelope::contains(const Eigen::Ref<const Eigen::VectorXd>& point) const {
  for (Eigen::Index j = 0; j < dims(); ++j) {
    if (!(point(j) >= padded_lower(j) && point(j) <= padded_upper(j))) return false;
  }
  return true;
}

std::pair<double, double> Envelope::c_range(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  double lo = padded_lower(0), hi = padded_upper(0);
  if (c_fit.size() > 1 && z.size() >= c_fit.size() - 1) {
    const double fit = c_fit(0) + z.head(c_fit.size() - 1).dot(c_fit.tail(c_fit.size() - 1));
    const double slack = pad * (upper(0) - lower(0)) + 1e-12;
    lo = std::max(lo, fit + resid_lo - slack);
    hi = std::min(hi, fit + resid_hi + slack);
  }
  return {lo, std::max(lo, hi)};
}

SurfaceMethod RegressionSurface::method() const {
  return std::holds_alternative<detail::SieveModel>(model_of(model_).fit) ? SurfaceMethod::sieve
                                                                          : SurfaceMethod::kernel;
}

int RegressionSurface::degree() const {
  const auto& m = model_of(model_);
  if (auto* s = std::get_if<detail::SieveModel>(&m.fit)) return s->basis.degree();
  return 0;
}

std::string RegressionSurface::tag() const {
  return method() == SurfaceMethod::kernel ? "kernel" : "sieve-" + std::to_string(degree());
}

bool RegressionSurface::uses_z() const { return model_of(model_).z_dim > 0; }
Eigen::Index RegressionSurface::z_dim() const { return model_of(model_).z_dim; }
std::size_t RegressionSurface::fit_size() const { return model_of(model_).n; }
const Envelope& RegressionSurface::envelope() const { return model_of(model_).envelope; }

double RegressionSurface::bandwidth() const {
  const auto& m = model_of(model_);
  if (auto* k = std::get_if<detail::KernelModel>(&m.fit)) return k->nw.bandwidth();
  return std::numeric_limits<double>::quiet_NaN();
}

const Eigen::VectorXd& RegressionSurface::coefficients() const {
  static const Eigen::VectorXd empty;
  const auto& m = model_of(model_);
  if (auto* s = std::get_if<detail::SieveModel>(&m.fit)) return s->coef;
  return empty;
}

const std::vector<std::vector<int>>& RegressionSurface::terms() const {
  static const std::vector<std::vector<int>> empty;
  const auto& m = model_of(model_);
  if (auto* s = std::get_if<detail::SieveModel>(&m.fit)) return s->basis.terms();
  return empty;
}

SurfacePoint RegressionSurface::evaluate(double c, const Eigen::Ref<const Eigen::VectorXd>& z) const {
  const auto& m = model_of(model_);
  const Eigen::VectorXd q = query_point(m, c, z);
  SurfacePoint out;
  if (!m.envelope.contains(q)) {
    out.value = out.slope = std::numeric_limits<double>::quiet_NaN();
    out.status = EvalStatus::out_of_envelope;
    return out;
  }
  if (auto* s = std::get_if<detail::SieveModel>(&m.fit)) {
    out.value = s->basis.evaluate(q).dot(s->coef);
    out.slope = s->basis.derivative(q).dot(s->coef);
    return out;
  }
  const auto& k = std::get<detail::KernelModel>(m.fit);
  const auto p = k.nw.evaluate(q);
  if (!(p.weight_sum > kDegenerateWeight) || p.support < k.min_support) {
    out.value = out.slope = std::numeric_limits<double>::quiet_NaN();
    out.status = EvalStatus::degenerate;
    return out;
  }
  out.value = p.value;
  out.slope = p.slope;
  return out;
}

RegressionSurface RegressionSurface::with_certification(const MonotonicityReport& report) const {
  RegressionSurface copy = *this;
  if (report.certified) copy.floor_ = report.floor;
  else copy.floor_.reset();
  return copy;
}

RegressionSurface fit_gamma_sieve(const Sample& subsample, int degree, const FitOptions& options) {
  if (degree < 1) throw std::invalid_argument("sieve degree must be >= 1");
  Design d = build_design(subsample, options.use_z);
  const int vars = static_cast<int>(d.v.cols());
  PolynomialBasis<double> basis(vars, degree);
  const Eigen::Index n = d.v.rows();
  const Eigen::Index terms = basis.size();
  if (n <= terms)
    throw RankDeficientBasis("sieve of degree " + std::to_string(degree) + " has " +
                             std::to_string(terms) + " terms but only " + std::to_string(n) +
                             " observations");

  Eigen::MatrixXd B(n, terms);
  for (Eigen::Index i = 0; i < n; ++i) B.row(i) = basis.evaluate(d.v.row(i).transpose()).transpose();
  // column equilibration; coefficients are mapped back to raw monomials
  Eigen::VectorXd scale = B.colwise().lpNorm<Eigen::Infinity>().transpose();
  for (Eigen::Index t = 0; t < terms; ++t)
    if (!(scale(t) > 0.0)) scale(t) = 1.0;
  const Eigen::MatrixXd Bs = B * scale.cwiseInverse().asDiagonal();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Bs);
  qr.setThreshold(1e-10);
  Eigen::VectorXd beta;
  if (qr.rank() < terms) {
    if (!options.allow_collinear)
      throw RankDeficientBasis("sieve design matrix is singular (rank " + std::to_string(qr.rank()) +
                               " of " + std::to_string(terms) + ")");
    // the threshold fixes the rank inside compute(); it must be set first
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Bs.rows(), Bs.cols());
    cod.setThreshold(1e-10);
    cod.compute(Bs);
    beta = cod.solve(d.y);
  } else {
    beta = qr.solve(d.y);
  }

  auto model = std::make_shared<detail::SurfaceModel>();
  model->fit = detail::SieveModel{std::move(basis), beta.cwiseQuotient(scale)};
  model->envelope = envelope_of(d.v, options.envelope_pad);
  model->z_dim = d.v.cols() - 1;
  model->n = static_cast<std::size_t>(n);
  return make_surface(std::move(model));
}

RegressionSurface fit_gamma_kernel(const Sample& subsample, const KernelSpec& spec,
                                   const FitOptions& options) {
  if (spec.order < 4) throw std::invalid_argument("regression kernels must have order >= 4");
  Design d = build_design(subsample, options.use_z);
  const double h = spec.bandwidth ? *spec.bandwidth
                                  : bandwidth_rule(std::max<std::size_t>(subsample.size(), 2), spec);
  if (!(h > 0.0)) throw std::invalid_argument("bandwidth must be positive");

  auto model = std::make_shared<detail::SurfaceModel>();
  model->fit = detail::KernelModel{NadarayaWatson<double>(d.v, d.y, MomentKernel<double>(spec.order), h),
                                   options.min_support};
  model->envelope = envelope_of(d.v, options.envelope_pad);
  model->z_dim = d.v.cols() - 1;
  model->n = subsample.size();
  return make_surface(std::move(model));
}

MonotonicityReport verify_strong_monotonicity(const RegressionSurface& surface, int grid_density,
                                              double floor) {
  MonotonicityReport rep;
  rep.floor = floor;
  rep.min_slope = std::numeric_limits<double>::infinity();
  const Envelope& env = surface.envelope();
  for_each_grid_point(env, grid_density, [&](const Eigen::VectorXd& p) {
    const auto pt = surface.evaluate(p(0), p.tail(p.size() - 1));
    if (!pt.ok() || !std::isfinite(pt.slope)) {
      ++rep.skipped;
      return;
    }
    ++rep.evaluated;
    rep.min_slope = std::min(rep.min_slope, pt.slope);
    if (pt.slope < floor) rep.violations.push_back(p);
  });
  if (rep.evaluated == 0) rep.min_slope = std::numeric_limits<double>::quiet_NaN();
  rep.certified = rep.evaluated > 0 && rep.violations.empty() && rep.min_slope > 0.0;
  return rep;
}

MonotonicityReport verify_strong_monotonicity(const RegressionSurface& surface, int grid_density,
                                              double floor, const std::vector<Eigen::VectorXd>& z_points) {
  if (!surface.uses_z() || z_points.empty()) return verify_strong_monotonicity(surface, grid_density, floor);
  MonotonicityReport rep;
  rep.floor = floor;
  rep.min_slope = std::numeric_limits<double>::infinity();
  const Envelope& env = surface.envelope();
  const int g = std::max(grid_density, 2);
  Eigen::VectorXd p(1 + surface.z_dim());
  for (const auto& z : z_points) {
    p.tail(surface.z_dim()) = z.head(surface.z_dim());
    const auto [lo, hi] = env.c_range(z);
    for (int i = 0; i < g; ++i) {
      p(0) = lo + (hi - lo) * i / (g - 1);
      const auto pt = surface.evaluate(p(0), p.tail(surface.z_dim()));
      if (!pt.ok() || !std::isfinite(pt.slope)) {
        ++rep.skipped;
        continue;
      }
      ++rep.evaluated;
      rep.min_slope = std::min(rep.min_slope, pt.slope);
      if (pt.slope < floor) rep.violations.push_back(p);
    }
  }
  if (rep.evaluated == 0) rep.min_slope = std::numeric_limits<double>::quiet_NaN();
  rep.certified = rep.evaluated > 0 && rep.violations.empty() && rep.min_slope > 0.0;
  return rep;
}

void write_surface_grid(std::ostream& out, const RegressionSurface& surface, int grid_density) {
  const Eigen::Index dz = surface.z_dim();
  out << "c";
  for (Eigen::Index j = 0; j < dz; ++j) out << ",z" << (j + 1);
  out << ",gamma,dgamma_dc,status\n" << std::setprecision(12);
  for_each_grid_point(surface.envelope(), grid_density, [&](const Eigen::VectorXd& p) {
    const auto pt = surface.evaluate(p(0), p.tail(dz));
    for (Eigen::Index j = 0; j < p.size(); ++j) out << (j ? "," : "") << p(j);
    out << ',' << pt.value << ',' << pt.slope << ','
        << (pt.ok() ? "ok" : pt.status == EvalStatus::degenerate ? "degenerate" : "out_of_envelope")
        << '\n';
  });
}

FirstStage FirstStage::pooled(SurfacePair pair) {
  FirstStage fs;
  fs.scope_ = FirstStageScope::pooled;
  fs.markets_.emplace(0, std::move(pair));
  return fs;
}

FirstStage FirstStage::per_market(std::map<int, SurfacePair> pairs) {
  FirstStage fs;
  fs.scope_ = FirstStageScope::per_market;
  fs.markets_ = std::move(pairs);
  return fs;
}

const SurfacePair& FirstStage::surfaces_for(int market_id) const {
  if (scope_ == FirstStageScope::pooled) {
    if (markets_.empty()) throw std::logic_error("first stage has no fitted surfaces");
    return markets_.begin()->second;
  }
  auto it = markets_.find(market_id);
  if (it == markets_.end())
    throw std::out_of_range("no first-stage surfaces for market " + std::to_string(market_id));
  return it->second;
}

namespace {

RegressionSurface fit_one(const Sample& sub, const FirstStageConfig& cfg, const FitOptions& fit,
                          const std::vector<Eigen::VectorXd>& z_points) {
  RegressionSurface s = cfg.method == SurfaceMethod::kernel ? fit_gamma_kernel(sub, cfg.kernel, fit)
                                                            : fit_gamma_sieve(sub, cfg.sieve_degree, fit);
  if (cfg.certify_on == CertificationGrid::sample_z && s.uses_z())
    return s.with_certification(verify_strong_monotonicity(s, cfg.grid_density, cfg.floor, z_points));
  return s.with_certification(verify_strong_monotonicity(s, cfg.grid_density, cfg.floor));
}

// Evenly strided subset of the sample's instruments, capped at `cap` points.
std::vector<Eigen::VectorXd> instrument_points(const Sample& sample, std::size_t cap) {
  std::vector<Eigen::VectorXd> pts;
  const std::size_t n = sample.size();
  const std::size_t step = std::max<std::size_t>(1, (n + cap - 1) / std::max<std::size_t>(cap, 1));
  for (std::size_t i = 0; i < n; i += step) pts.push_back(sample[i].z);
  return pts;
}

SurfacePair fit_pair(const Sample& sample, const FirstStageConfig& cfg, const FitOptions& fit) {
  const auto split = split_by_latency(sample);
  std::vector<Eigen::VectorXd> z_points;
  if (cfg.certify_on == CertificationGrid::sample_z && fit.use_z)
    z_points = instrument_points(sample, cfg.max_z_points);
  return {fit_one(split.first, cfg, fit, z_points), fit_one(split.second, cfg, fit, z_points)};
}

std::size_t min_rows_per_class(const FirstStageConfig& cfg) {
  if (cfg.method == SurfaceMethod::sieve) return static_cast<std::size_t>(cfg.sieve_degree) + 2;
  return std::max<std::size_t>(cfg.fit.min_support, 2);
}

}  // namespace

FirstStage fit_first_stage(const Sample& sample, const FirstStageConfig& config) {
  FirstStageScope scope = config.scope;
  std::map<int, Sample> by_market;
  if (scope != FirstStageScope::pooled) {
    std::map<int, std::vector<Observation>> rows;
    for (const auto& r : sample.rows()) rows[r.market_id].push_back(r);
    const std::size_t need = min_rows_per_class(config);
    bool all_large = rows.size() > 1;
    for (auto& [id, v] : rows) {
      Sample s(std::move(v));
      all_large = all_large && s.count(1) >= need && s.count(2) >= need;
      by_market.emplace(id, std::move(s));
    }
    if (scope == FirstStageScope::automatic)
      scope = all_large ? FirstStageScope::per_market : FirstStageScope::pooled;
  }
  if (scope == FirstStageScope::pooled) return FirstStage::pooled(fit_pair(sample, config, config.fit));

  FitOptions within = config.fit;
  within.use_z = false;  // instruments are treated as fixed inside a market
  std::map<int, SurfacePair> pairs;
  for (const auto& [id, s] : by_market) pairs.emplace(id, fit_pair(s, config, within));
  return FirstStage::per_market(std::move(pairs));
}

std::string to_string(SurfaceMethod m) { return m == SurfaceMethod::kernel ? "kernel" : "sieve"; }

std::string to_string(FirstStageScope s) {
  switch (s) {
    case FirstStageScope::pooled: return "pooled";
    case FirstStageScope::per_market: return "per_market";
    case FirstStageScope::automatic: return "automatic";
  }
  return "pooled";
}

}  // namespace latent
