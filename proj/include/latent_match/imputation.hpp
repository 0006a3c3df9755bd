#pragma once

#include "latent_match/core_model.hpp"
#include "latent_match/first_stage.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace latent {

enum class ImputeFlag { interior, clamped_low, clamped_high, failed };

std::string to_string(ImputeFlag f);

struct InversionOptions {
  double tol = 1e-8;  // in surface units
  int max_iter = 40;
  bool require_certified = true;
};

struct Inversion {
  double c = 0.0;
  ImputeFlag flag = ImputeFlag::interior;
};

/// Solves surface(c; z) = v for c by bisection over the envelope's c-range
/// at z. Targets outside the surface's range at z are clamped to the
/// nearest endpoint and flagged.
Inversion invert_surface(const RegressionSurface& surface, double v,
                         const Eigen::Ref<const Eigen::VectorXd>& z,
                         const InversionOptions& options = {});

struct ImputedRow {
  double x_hat = 0.0;    // the latent input of this row
  double y_tilde = 0.0;  // fitted expected outcome at the observed input
  ImputeFlag flag = ImputeFlag::interior;
};

struct ImputedSample {
  Sample base;
  std::vector<ImputedRow> rows;

  std::size_t size() const noexcept { return rows.size(); }
  // Input k for row i: observed value if d == k, imputed otherwise.
  double x1(std::size_t i) const { return base[i].d == 1 ? base[i].x_obs : rows[i].x_hat; }
  double x2(std::size_t i) const { return base[i].d == 2 ? base[i].x_obs : rows[i].x_hat; }
  std::size_t count(ImputeFlag f) const;
};

ImputedSample impute_latent(const Sample& sample, const RegressionSurface& g1,
                            const RegressionSurface& g2, const InversionOptions& options = {});
ImputedSample impute_latent(const Sample& sample, const FirstStage& first_stage,
                            const InversionOptions& options = {});

/// Missing instrument components (NaN) replaced by pooled OLS fits on
/// (1, D_m). Observed components are left untouched.
struct WageImputation {
  Sample completed;
  std::vector<double> r_squared;            // per instrument component, on observed rows
  std::vector<Eigen::VectorXd> coefficients;  // per component: intercept, then shifters
  std::size_t imputed_cells = 0;
};

WageImputation impute_latent_wages(const Sample& sample,
                                   const std::map<int, Eigen::VectorXd>& shifters);

void write_imputed_csv(std::ostream& out, const ImputedSample& imp);

}  // namespace latent
