#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace sizecast {

inline double normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// P(lo <= X <= hi) for X ~ N(mean, sd^2), evaluated on the tail that keeps
// relative precision when the interval is far from the mean.
double normal_interval_mass(double lo, double hi, double mean, double sd);

struct GaussianComponent {
  double weight = 1.0;
  double mean = 0.0;
  double sd = 1.0;
};

class GaussianMixture {
 public:
  GaussianMixture() = default;
  explicit GaussianMixture(std::vector<GaussianComponent> components);

  // Equal-weight mixture with a shared bandwidth (a Gaussian KDE).
  static GaussianMixture kde(std::span<const double> centers, double bandwidth);

  double pdf(double x) const;
  double interval_mass(double lo, double hi) const;
  double mean() const;

  const std::vector<GaussianComponent>& components() const { return components_; }
  bool empty() const { return components_.empty(); }

 private:
  std::vector<GaussianComponent> components_;
};

// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  CompensatedSum& operator+=(double v) {
    add(v);
    return *this;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace sizecast
