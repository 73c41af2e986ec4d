#pragma once

// Forward sampler of the hierarchical model, producing datasets with known
// ground truth for parameter-recovery and end-to-end tests.

#include "sizecast/domain.hpp"
#include "sizecast/hbayes.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sizecast {

struct SynthConfig {
  std::size_t n_customers = 200;
  std::size_t n_articles = 50;
  std::size_t n_orders = 20'000;
  // Per-customer order propensity ~ Gamma(activity_shape, 1); every customer
  // gets at least one order.
  double activity_shape = 2.0;

  Hyperparams hyper = Hyperparams::defaults();

  // Catalog template. Category names are not in the default prior table, so
  // customers draw their sizes from hyper.default_size_prior.
  std::size_t n_brands = 5;
  std::vector<std::string> categories{"sneakers", "boots", "sandals"};
  std::string gender = "m";
  std::string size_system = "EU";
  double grid_min = 35.0;
  double grid_max = 49.0;
  double grid_step = 1.0;

  // Brand / category return profiles p ~ Dirichlet(profile_concentration * base)
  // scaled to pseudo-counts of the given mass.
  Simplex3 base_return_profile{0.7, 0.15, 0.15};
  double profile_concentration = 20.0;
  double brand_mass = 500.0;
  double category_mass = 2000.0;

  // Fixed values replace draws from the prior when set.
  std::optional<double> w = 0.1;
  std::optional<double> w_prime = 0.01;
  std::optional<double> eta_small;
  std::optional<double> eta_big;
  std::optional<double> noise_var;
  std::optional<double> article_offset;

  Timestamp window_start = Timestamp{std::chrono::sys_days{std::chrono::year{2021} / 1 / 1}};
  int window_days = 365;
  std::uint64_t seed = 1;

  // Throws DataError.
  void validate() const;
};

struct CustomerTruth {
  std::vector<double> means;
  std::vector<double> weights;
  double noise_var = 1.0;
};

struct ArticleTruth {
  double offset = 0.0;
  Simplex3 returns{};
};

struct GroundTruth {
  std::map<std::string, CustomerTruth> customers;
  std::map<std::string, ArticleTruth> articles;
  double eta_small = -1.0;
  double eta_big = 1.0;
  double w = 0.1;
  double w_prime = 0.01;
};

struct SyntheticData {
  OrdersDataset dataset;
  Catalog catalog;
  GroundTruth truth;
};

// Deterministic for a fixed seed regardless of thread count.
SyntheticData sample_dataset(const SynthConfig& config);

struct RecoveryScores {
  double offset_correlation = 0.0;  // Pearson, true vs posterior-mean mu_a
  double eta_small_abs_error = 0.0;
  double eta_big_abs_error = 0.0;
  double eta_mean_abs_error = 0.0;
  double offset_sign_accuracy = 0.0;
  std::size_t articles = 0;
};

// Throws DataError when fewer than 10 articles are shared by truth and fit.
RecoveryScores recovery_score(const GroundTruth& truth, const HBayesState& fitted);

double pearson_correlation(std::span<const double> x, std::span<const double> y);

nlohmann::json to_json(const GroundTruth& truth);

}  // namespace sizecast
