#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

namespace latent {

/// Compact-support kernel on [-1, 1] of even order p:
///
///   K(u) = (1 - u^2)^2 * sum_{j < p/2} c_j u^{2j}
///
/// The coefficients c_j correct the quartic (biweight) base so that
/// int K = 1 and int u^t K = 0 for t = 1..p-1. Odd moments vanish by symmetry;
/// the even ones are matched exactly using the closed-form base moments.
/// Order 2 is the plain biweight (non-negative).
template <typename Scalar = double>
class MomentKernel {
 public:
  explicit MomentKernel(int order = 4) : order_(order) {
    if (order < 2 || order % 2 != 0)
      throw std::invalid_argument("kernel order must be an even integer >= 2");
    const int m = order / 2;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> M(m, m);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rhs = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(m);
    rhs(0) = Scalar(1);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) M(i, j) = base_moment(i + j);
    coef_ = M.fullPivLu().solve(rhs);
  }

  int order() const noexcept { return order_; }
  static constexpr Scalar support() noexcept { return Scalar(1); }
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& correction() const noexcept { return coef_; }

  Scalar operator()(Scalar u) const noexcept {
    if (!(std::abs(u) < Scalar(1))) return Scalar(0);
    const Scalar u2 = u * u;
    const Scalar base = (Scalar(1) - u2) * (Scalar(1) - u2);
    return base * poly(u2);
  }

  Scalar derivative(Scalar u) const noexcept {
    if (!(std::abs(u) < Scalar(1))) return Scalar(0);
    const Scalar u2 = u * u;
    const Scalar one_minus = Scalar(1) - u2;
    return -Scalar(4) * u * one_minus * poly(u2) +
           one_minus * one_minus * Scalar(2) * u * poly_derivative(u2);
  }

  /// int_{-1}^{1} u^{2k} (1 - u^2)^2 du
  static Scalar base_moment(int k) noexcept {
    const Scalar a = Scalar(2 * k + 1);
    return Scalar(2) * (Scalar(1) / a - Scalar(2) / (a + 2) + Scalar(1) / (a + 4));
  }

 private:
  Scalar poly(Scalar u2) const noexcept {
    Scalar acc = Scalar(0);
    for (Eigen::Index j = coef_.size() - 1; j >= 0; --j) acc = acc * u2 + coef_(j);
    return acc;
  }
  Scalar poly_derivative(Scalar u2) const noexcept {
    Scalar acc = Scalar(0);
    for (Eigen::Index j = coef_.size() - 1; j >= 1; --j)
      acc = acc * u2 + Scalar(j) * coef_(j);
    return acc;
  }

  int order_;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> coef_;
};

struct KernelSpec {
  int order = 4;
  std::optional<double> bandwidth;  // standardized units; nullopt = rule
  double scale = 1.0;               // constant C of the bandwidth rule
};

/// b = C * s * N^{-1/7}. With p = 4 the undersmoothing conditions on a
/// three-dimensional regressor admit exponents in (1/8, 1/6).
double bandwidth_rule(std::size_t n, const KernelSpec& spec, double mean_sd = 1.0);

inline constexpr double kBandwidthExponent = 1.0 / 7.0;

/// Product-kernel Nadaraya-Watson smoother on standardized regressors.
/// Column 0 of the design is the direction in which the derivative is
/// reported. Rows are kept sorted by column 0 so a query only touches the
/// points inside its kernel window.
template <typename Scalar = double>
class NadarayaWatson {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Point {
    Scalar value = 0;
    Scalar slope = 0;       // derivative in original units of column 0
    Scalar weight_sum = 0;  // sum of product-kernel weights
    std::size_t support = 0;
  };

  NadarayaWatson() = default;

  NadarayaWatson(const Matrix& design, const Vector& response, MomentKernel<Scalar> kernel,
                 Scalar bandwidth)
      : kernel_(std::move(kernel)), h_(bandwidth) {
    const Eigen::Index n = design.rows();
    const Eigen::Index d = design.cols();
    center_ = design.colwise().mean().transpose();
    scale_.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const Scalar var = (design.col(j).array() - center_(j)).square().sum() /
                         Scalar(std::max<Eigen::Index>(n - 1, 1));
      scale_(j) = var > Scalar(0) ? std::sqrt(var) : Scalar(1);
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return design(a, 0) < design(b, 0);
    });
    x_.resize(n, d);
    y_.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::Index i = order[static_cast<std::size_t>(r)];
      x_.row(r) = ((design.row(i).transpose() - center_).array() / scale_.array()).transpose();
      y_(r) = response(i);
    }
  }

  Eigen::Index dims() const noexcept { return x_.cols(); }
  Eigen::Index size() const noexcept { return x_.rows(); }
  Scalar bandwidth() const noexcept { return h_; }
  const MomentKernel<Scalar>& kernel() const noexcept { return kernel_; }

  template <typename Derived>
  Point evaluate(const Eigen::MatrixBase<Derived>& query) const {
    const Eigen::Index d = x_.cols();
    Vector q = (query.derived().template cast<Scalar>() - center_).array() / scale_.array();
    const Scalar lo = q(0) - h_;
    const Scalar hi = q(0) + h_;
    // first row with x >= lo
    Eigen::Index a = 0, b = x_.rows();
    while (a < b) {
      const Eigen::Index mid = (a + b) / 2;
      if (x_(mid, 0) < lo) a = mid + 1; else b = mid;
    }
    Scalar num = 0, den = 0, dnum = 0, dden = 0;
    std::size_t support = 0;
    for (Eigen::Index i = a; i < x_.rows() && x_(i, 0) <= hi; ++i) {
      Scalar rest = Scalar(1);
      bool inside = true;
      for (Eigen::Index j = 1; j < d && inside; ++j) {
        const Scalar u = (q(j) - x_(i, j)) / h_;
        if (std::abs(u) >= Scalar(1)) inside = false; else rest *= kernel_(u);
      }
      if (!inside) continue;
      const Scalar u0 = (q(0) - x_(i, 0)) / h_;
      if (std::abs(u0) >= Scalar(1)) continue;
      ++support;
      const Scalar w = kernel_(u0) * rest;
      const Scalar dw = kernel_.derivative(u0) * rest / h_;
      num += w * y_(i);
      den += w;
      dnum += dw * y_(i);
      dden += dw;
    }
    Point p;
    p.weight_sum = den;
    p.support = support;
    if (den != Scalar(0)) {
      p.value = num / den;
      p.slope = (dnum * den - num * dden) / (den * den) / scale_(0);
    }
    return p;
  }

 private:
  MomentKernel<Scalar> kernel_{4};
  Scalar h_ = 1;
  Matrix x_;
  Vector y_;
  Vector center_;
  Vector scale_;
};

}  // namespace latent
