#pragma once

// Hierarchical Bayesian model of (purchased size, return status).
//
// Generative structure, per customer c, article a and order o:
//   b_{c,i} ~ Beta(1, alpha_dp), i < T, b_{c,T} = 1   (stick-breaking weights pi_c)
//   mu_{c,i} ~ N(mu_0, sigma_0^2)                      (one mean per account user)
//   sigma_c^2 ~ InvGamma(gamma_1, gamma_2)
//   mu_a ~ N(0, 1)                                     (article size offset)
//   theta_a ~ Dirichlet(w * m_brand + w' * m_category)
//   eta_K = 0, eta_S ~ N(-1, 1), eta_B ~ N(1, 1)       (shared status shifts)
//   z_o ~ Cat(pi_c), r_o ~ Cat(theta_a),
//   s_o ~ N(mu_{c,z_o} + mu_a + eta_{r_o}, sigma_c^2)
//
// Inference is mean-field coordinate ascent with conjugate factors; w and w'
// are MAP point estimates on a log-spaced grid.

#include "sizecast/domain.hpp"
#include "sizecast/mixture.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sizecast {

struct NormalFactor {
  double mean = 0.0;
  double var = 1.0;
};

struct BetaFactor {
  double a = 1.0;
  double b = 1.0;
  double mean() const { return a / (a + b); }
};

struct InvGammaFactor {
  double shape = 1.0;
  double scale = 2.0;
  double mean_precision() const { return shape / scale; }  // E[1/x]
  double mean_log() const;                                // E[log x]
  // E[x] when finite (shape > 1), otherwise the mode scale / (shape + 1).
  double point_estimate() const;
};

struct SizePrior {
  double mean = 42.0;
  double var = 9.0;
};

struct Hyperparams {
  // Keyed by size_prior_key(category, gender, size_system).
  std::map<std::string, SizePrior, std::less<>> size_priors;
  SizePrior default_size_prior{42.0, 9.0};
  double offset_prior_var = 1.0;
  NormalFactor eta_small_prior{-1.0, 1.0};
  NormalFactor eta_big_prior{1.0, 1.0};
  double dp_concentration = 0.5;
  int truncation = 4;
  double ig_shape = 1.0;
  double ig_scale = 2.0;
  double w_beta_a = 0.5;        // w ~ Beta(0.5, 1)
  double w_prime_beta_a = 0.1;  // w' ~ Beta(0.1, 1)
  double alpha_floor = 1e-3;

  static Hyperparams defaults();
  // Throws DataError when an invariant is violated.
  void validate() const;
  const SizePrior& size_prior(const ArticleMeta& article) const;
};

std::string size_prior_key(std::string_view category, std::string_view gender,
                           std::string_view size_system);

struct GlobalParams {
  double w = 0.5;
  double w_prime = 0.1;
  NormalFactor eta_small{-1.0, 1.0};
  NormalFactor eta_big{1.0, 1.0};

  NormalFactor eta(ReturnStatus r) const;
};

struct CustomerPosterior {
  std::vector<NormalFactor> components;  // q(mu_{c,i}), T entries
  std::vector<BetaFactor> sticks;        // q(b_{c,i}), T - 1 entries
  InvGammaFactor noise;                  // q(sigma_c^2)
  SizePrior prior;                       // prior on mu_{c,i}
  std::size_t n_orders = 0;

  // Stick-breaking weights at the posterior means of b.
  std::vector<double> weights() const;
};

struct ArticlePosterior {
  NormalFactor offset{0.0, 1.0};  // q(mu_a)
  Simplex3 concentration{};       // posterior Dirichlet parameters n + alpha
  ReturnCounts counts;
  std::string brand;
  std::string category;
};

struct HBayesState {
  Hyperparams hyper;
  GlobalParams global;
  std::map<std::string, CustomerPosterior, std::less<>> customers;
  std::map<std::string, ArticlePosterior, std::less<>> articles;
  std::map<std::string, ReturnCounts, std::less<>> brand_counts;
  std::map<std::string, ReturnCounts, std::less<>> category_counts;
  // responsibilities[o][i] = q(z_o = i), indexed like the fitting dataset.
  std::vector<std::vector<double>> responsibilities;
  std::vector<double> elbo_trace;

  bool knows_customer(std::string_view id) const { return customers.find(id) != customers.end(); }
  bool knows_article(std::string_view id) const { return articles.find(id) != articles.end(); }
};

inline constexpr int kHBayesFormatVersion = 1;

// alpha_r = w * m_r + w' * m'_r + floor
Simplex3 dirichlet_concentration(const ReturnCounts& brand, const ReturnCounts& category, double w,
                                 double w_prime, double floor = 1e-3);

// (n_r + alpha_r) / (sum n + sum alpha), read from the stored posterior
// concentration.
Simplex3 posterior_return_probs(const ArticlePosterior& article);

// pi_i = b_i * prod_{j<i} (1 - b_j). Requires b_i in [0, 1] and b.back() == 1.
std::vector<double> stick_breaking_weights(std::span<const double> b);

// Throws DataError when an order references an article missing from the
// catalog or the hyperparameters are invalid.
HBayesState init_state(const OrdersDataset& dataset, const Catalog& catalog, const Hyperparams& hyper,
                       std::uint64_t seed);

// One full coordinate-ascent pass; appends and returns the ELBO.
// Throws NumericalError if the ELBO is not finite.
double cavi_sweep(HBayesState& state, const OrdersDataset& dataset);

// MAP grid search for (w, w') given the state's per-article and group counts.
std::pair<double, double> update_weights(const HBayesState& state);
// Objective maximized by update_weights: sum over articles of the
// Dirichlet-multinomial log likelihood plus the Beta log priors of w and w'.
double weight_objective(const HBayesState& state, double w, double w_prime);
// The 50 log-spaced values in [1e-3, 1] searched for each weight.
std::vector<double> weight_grid();

// Evidence lower bound E_q[log p(data, latents | w, w')] - E_q[log q].
// Requires state.responsibilities to match the dataset (ignored when the
// dataset is empty). Throws NumericalError when non-finite.
double elbo(const HBayesState& state, const OrdersDataset& dataset);

// Mean of the Gaussian likelihood for `order` under component i:
// E[mu_{c,i}] + E[mu_a] + E[eta_r].
double likelihood_mean(const HBayesState& state, const Order& order, std::size_t component);

struct FitOptions {
  double tol = 1e-4;  // relative ELBO change
  int max_sweeps = 200;
  std::uint64_t seed = 0;
  std::function<void(int sweep, double elbo)> on_sweep;
};

HBayesState fit_hbayes(const OrdersDataset& dataset, const Catalog& catalog, const Hyperparams& hyper,
                       const FitOptions& options = {});

// Plug-in predictive density of the size given the return status. Unknown
// customers get a single component at the prior of the article's
// category/gender/size system; unknown articles get a zero offset.
// Throws DataError if the article is not in the catalog.
GaussianMixture predictive_size_density(const HBayesState& state, const Catalog& catalog,
                                        std::string_view customer_id, std::string_view article_id,
                                        ReturnStatus r);

// Posterior return probabilities; unknown articles use the prior built from
// their brand and category counts.
Simplex3 predictive_return_probs(const HBayesState& state, const Catalog& catalog,
                                 std::string_view article_id);

// Posterior mass of mu_{c,i*} + mu_a within half a grid step of its mean,
// i* being the heaviest mixture component. 0 for unknown customers/articles.
double param_confidence(const HBayesState& state, const Catalog& catalog, std::string_view customer_id,
                        std::string_view article_id);

nlohmann::json to_json(const HBayesState& state);
HBayesState hbayes_from_json(const nlohmann::json& doc);

}  // namespace sizecast
