#include "latent_match/kernel.hpp"

#include <cmath>
#include <stdexcept>

namespace latent {

double bandwidth_rule(std::size_t n, const KernelSpec& spec, double mean_sd) {
  if (n < 2) throw std::invalid_argument("bandwidth rule needs N >= 2");
  if (spec.order < 4) throw std::invalid_argument("kernel order must be >= 4");
  return spec.scale * mean_sd * std::pow(static_cast<double>(n), -kBandwidthExponent);
}

}  // namespace latent
