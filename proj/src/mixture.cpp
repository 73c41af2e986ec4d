#include "sizecast/mixture.hpp"

#include <stdexcept>

namespace sizecast {

double normal_interval_mass(double lo, double hi, double mean, double sd) {
  if (!(hi > lo)) return 0.0;
  const double a = (lo - mean) / sd;
  const double b = (hi - mean) / sd;
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  if (a >= 0.0) return 0.5 * (std::erfc(a * inv_sqrt2) - std::erfc(b * inv_sqrt2));
  if (b <= 0.0) return 0.5 * (std::erfc(-b * inv_sqrt2) - std::erfc(-a * inv_sqrt2));
  return 1.0 - 0.5 * (std::erfc(-a * inv_sqrt2) + std::erfc(b * inv_sqrt2));
}

GaussianMixture::GaussianMixture(std::vector<GaussianComponent> components)
    : components_(std::move(components)) {
  for (const auto& c : components_) {
    if (!(c.sd > 0.0) || !(c.weight >= 0.0) || !std::isfinite(c.mean)) {
      throw std::invalid_argument("GaussianMixture: invalid component");
    }
  }
}

GaussianMixture GaussianMixture::kde(std::span<const double> centers, double bandwidth) {
  std::vector<GaussianComponent> comps;
  comps.reserve(centers.size());
  const double w = 1.0 / static_cast<double>(centers.size());
  for (const double c : centers) comps.push_back({w, c, bandwidth});
  return GaussianMixture(std::move(comps));
}

double GaussianMixture::pdf(double x) const {
  CompensatedSum s;
  for (const auto& c : components_) s += c.weight * normal_pdf(x, c.mean, c.sd);
  return s.value();
}

double GaussianMixture::interval_mass(double lo, double hi) const {
  CompensatedSum s;
  for (const auto& c : components_) s += c.weight * normal_interval_mass(lo, hi, c.mean, c.sd);
  return s.value();
}

double GaussianMixture::mean() const {
  double m = 0.0;
  for (const auto& c : components_) m += c.weight * c.mean;
  return m;
}

}  // namespace sizecast
