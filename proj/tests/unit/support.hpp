#pragma once

#include "latent_match/core_model.hpp"
#include "latent_match/simulation.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace support {

inline latent::Observation obs(double y, int d, double x, double z1, double z2, int market = 0) {
  latent::Observation o;
  o.y = y;
  o.d = d;
  o.x_obs = x;
  o.z = Eigen::Vector2d(z1, z2);
  o.market_id = market;
  return o;
}

inline latent::MarketData simulate(latent::DgpSpec spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return latent::gen_market_data(spec, rng);
}

// Pooled spec-1 draw with the market structure collapsed to one firm per market.
inline latent::DgpSpec pooled_spec(int preset, int n) {
  auto s = latent::DgpSpec::table1(preset);
  s.L = n;
  s.I = 1;
  return s;
}

inline double sample_sd(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline double mean(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  return m / static_cast<double>(v.size());
}

// Composite Simpson rule on [a, b] with n (even) panels.
template <typename F>
double simpson(F&& f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace support
