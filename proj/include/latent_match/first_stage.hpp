#pragma once

#include "latent_match/core_model.hpp"
#include "latent_match/kernel.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <utility>
#include <string>
#include <vector>

namespace latent {

/// Monomials of total degree <= q in `vars` variables, graded: constant,
/// then (v0, v1, ...), then v0^2, v0 v1, ... Variable 0 is the input c.
template <typename Scalar = double>
class PolynomialBasis {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  PolynomialBasis() = default;
  PolynomialBasis(int vars, int degree) : vars_(vars), degree_(degree) {
    std::vector<int> e(static_cast<std::size_t>(vars), 0);
    for (int total = 0; total <= degree; ++total) emit(e, 0, total);
  }

  int vars() const noexcept { return vars_; }
  int degree() const noexcept { return degree_; }
  Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(terms_.size()); }
  const std::vector<std::vector<int>>& terms() const noexcept { return terms_; }

  template <typename Derived>
  Vector evaluate(const Eigen::MatrixBase<Derived>& v) const {
    Vector out(size());
    for (Eigen::Index t = 0; t < size(); ++t) {
      Scalar acc = Scalar(1);
      const auto& e = terms_[static_cast<std::size_t>(t)];
      for (int j = 0; j < vars_; ++j)
        for (int k = 0; k < e[static_cast<std::size_t>(j)]; ++k) acc *= v(j);
      out(t) = acc;
    }
    return out;
  }

  /// Gradient of each monomial with respect to variable 0.
  template <typename Derived>
  Vector derivative(const Eigen::MatrixBase<Derived>& v) const {
    Vector out(size());
    for (Eigen::Index t = 0; t < size(); ++t) {
      const auto& e = terms_[static_cast<std::size_t>(t)];
      if (e[0] == 0) {
        out(t) = Scalar(0);
        continue;
      }
      Scalar acc = Scalar(e[0]);
      for (int j = 0; j < vars_; ++j) {
        const int p = e[static_cast<std::size_t>(j)] - (j == 0 ? 1 : 0);
        for (int k = 0; k < p; ++k) acc *= v(j);
      }
      out(t) = acc;
    }
    return out;
  }

 private:
  void emit(std::vector<int>& e, int var, int remaining) {
    if (var == vars_ - 1) {
      e[static_cast<std::size_t>(var)] = remaining;
      terms_.push_back(e);
      return;
    }
    for (int p = remaining; p >= 0; --p) {
      e[static_cast<std::size_t>(var)] = p;
      emit(e, var + 1, remaining - p);
    }
    e[static_cast<std::size_t>(var)] = 0;
  }

  int vars_ = 0;
  int degree_ = 0;
  std::vector<std::vector<int>> terms_;
};

enum class SurfaceMethod { kernel, sieve };
enum class EvalStatus { ok, out_of_envelope, degenerate };

struct SurfacePoint {
  double value = 0.0;
  double slope = 0.0;
  EvalStatus status = EvalStatus::ok;

  bool ok() const noexcept { return status == EvalStatus::ok; }
};

/// Observed box of (c, z_used) in the fitting subsample. Queries are accepted
/// inside the box widened by `pad` times its width on each side.
///
/// When z is used, c and z are usually strongly related, so the data fill a
/// slanted band rather than the box. c_range(z) is that band at z: a linear
/// fit of c on (1, z) plus the extreme residuals, padded.
struct Envelope {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double pad = 0.0;
  Eigen::VectorXd c_fit;  // intercept, then z slopes; empty without z
  double resid_lo = 0.0;
  double resid_hi = 0.0;

  Eigen::Index dims() const noexcept { return lower.size(); }
  double padded_lower(Eigen::Index j) const { return lower(j) - pad * (upper(j) - lower(j)) - 1e-12; }
  double padded_upper(Eigen::Index j) const { return upper(j) + pad * (upper(j) - lower(j)) + 1e-12; }
  bool contains(const Eigen::Ref<const Eigen::VectorXd>& point) const;
  std::pair<double, double> c_range(const Eigen::Ref<const Eigen::VectorXd>& z) const;
};

struct MonotonicityReport {
  bool certified = false;
  double min_slope = 0.0;  // estimated monotonicity floor over evaluable grid points
  double floor = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // grid points where the surface is not evaluable
  std::vector<Eigen::VectorXd> violations;  // (c, z...) with slope < floor
};

namespace detail {
struct SurfaceModel;
}

class RegressionSurface {
 public:
  RegressionSurface() = default;

  SurfaceMethod method() const;
  int degree() const;  // sieve degree; 0 for kernel surfaces
  std::string tag() const;
  bool uses_z() const;
  Eigen::Index z_dim() const;  // number of instrument components used
  std::size_t fit_size() const;
  const Envelope& envelope() const;
  double bandwidth() const;  // kernel only, standardized units

  /// Evaluation at (c, z). Only the first z_dim() components of z are read.
  SurfacePoint evaluate(double c, const Eigen::Ref<const Eigen::VectorXd>& z) const;

  /// Sieve coefficients on terms(); empty for kernel surfaces.
  const Eigen::VectorXd& coefficients() const;
  const std::vector<std::vector<int>>& terms() const;

  bool certified() const noexcept { return floor_.has_value(); }
  std::optional<double> certified_floor() const noexcept { return floor_; }
  RegressionSurface with_certification(const MonotonicityReport& report) const;

  bool valid() const noexcept { return static_cast<bool>(model_); }

 private:
  explicit RegressionSurface(std::shared_ptr<const detail::SurfaceModel> m) : model_(std::move(m)) {}
  friend RegressionSurface make_surface(std::shared_ptr<const detail::SurfaceModel>);

  std::shared_ptr<const detail::SurfaceModel> model_;
  std::optional<double> floor_;
};

struct FitOptions {
  bool use_z = true;             // false: regress on c alone (within-market fits)
  double envelope_pad = 0.05;
  bool allow_collinear = false;  // sieve: minimum-norm solution instead of RankDeficientBasis
  std::size_t min_support = 10;  // kernel: fewer points in the window => degenerate
};

RegressionSurface fit_gamma_kernel(const Sample& subsample, const KernelSpec& spec,
                                   const FitOptions& options = {});
RegressionSurface fit_gamma_sieve(const Sample& subsample, int degree,
                                  const FitOptions& options = {});

MonotonicityReport verify_strong_monotonicity(const RegressionSurface& surface,
                                              int grid_density, double floor);

/// Same check on the c-axis grid, but only at the given instrument points
/// (the places where the surface will be inverted).
MonotonicityReport verify_strong_monotonicity(const RegressionSurface& surface, int grid_density,
                                              double floor, const std::vector<Eigen::VectorXd>& z_points);

/// Diagnostic dump: c,z1..,gamma,dgamma_dc,status over the envelope grid.
void write_surface_grid(std::ostream& out, const RegressionSurface& surface, int grid_density);

struct SurfacePair {
  RegressionSurface gamma1;
  RegressionSurface gamma2;

  const RegressionSurface& operator[](int d) const { return d == 1 ? gamma1 : gamma2; }
};

enum class FirstStageScope { pooled, per_market, automatic };

/// The fitted conditional-expectation surfaces covering a whole sample:
/// either one pooled pair, or one pair per market.
class FirstStage {
 public:
  FirstStage() = default;
  static FirstStage pooled(SurfacePair pair);
  static FirstStage per_market(std::map<int, SurfacePair> pairs);

  FirstStageScope scope() const noexcept { return scope_; }
  const SurfacePair& surfaces_for(int market_id) const;
  const std::map<int, SurfacePair>& markets() const noexcept { return markets_; }
  const SurfacePair& pooled_pair() const { return surfaces_for(0); }

 private:
  FirstStageScope scope_ = FirstStageScope::pooled;
  std::map<int, SurfacePair> markets_;
};

// Where monotonicity is certified: the full tensor grid over the envelope
// box, or the c-axis grid at observed instrument values.
enum class CertificationGrid { envelope, sample_z };

struct FirstStageConfig {
  SurfaceMethod method = SurfaceMethod::sieve;
  int sieve_degree = 2;
  KernelSpec kernel;
  FirstStageScope scope = FirstStageScope::pooled;
  FitOptions fit;
  int grid_density = 9;
  double floor = 1e-3;
  CertificationGrid certify_on = CertificationGrid::sample_z;
  std::size_t max_z_points = 256;
};

/// Fits gamma_1 and gamma_2 and attaches monotonicity certification to every
/// surface that passes. Uncertified surfaces are returned as-is; inverting one
/// raises NotCertified.
FirstStage fit_first_stage(const Sample& sample, const FirstStageConfig& config);

std::string to_string(SurfaceMethod m);
std::string to_string(FirstStageScope s);

}  // namespace latent
