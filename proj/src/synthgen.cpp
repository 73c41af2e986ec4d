#include "sizecast/synthgen.hpp"

#include "sizecast/error.hpp"

#include <fmt/format.h>
#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sizecast {

namespace {

using Rng = std::mt19937_64;

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

double sample_gamma(Rng& rng, double shape) { return std::gamma_distribution<double>(shape, 1.0)(rng); }

double sample_beta(Rng& rng, double a, double b) {
  const double x = sample_gamma(rng, a);
  const double y = sample_gamma(rng, b);
  if (x + y == 0.0) return a >= b ? 1.0 : 0.0;
  return x / (x + y);
}

Simplex3 sample_dirichlet(Rng& rng, const Simplex3& alpha) {
  Simplex3 g{};
  double total = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    g[r] = sample_gamma(rng, alpha[r]);
    total += g[r];
  }
  if (total == 0.0) {
    const auto top = static_cast<std::size_t>(std::max_element(alpha.begin(), alpha.end()) - alpha.begin());
    Simplex3 vertex{};
    vertex[top] = 1.0;
    return vertex;
  }
  for (auto& v : g) v /= total;
  return g;
}

ReturnCounts pseudo_counts(Rng& rng, const SynthConfig& cfg, double mass) {
  Simplex3 alpha{};
  for (std::size_t r = 0; r < 3; ++r) alpha[r] = cfg.profile_concentration * cfg.base_return_profile[r];
  const auto p = sample_dirichlet(rng, alpha);
  ReturnCounts c;
  for (std::size_t r = 0; r < 3; ++r) c.n[r] = static_cast<std::uint64_t>(std::llround(mass * p[r]));
  return c;
}

std::size_t sample_index(Rng& rng, std::span<const double> weights) {
  std::discrete_distribution<std::size_t> d(weights.begin(), weights.end());
  return d(rng);
}

}  // namespace

void SynthConfig::validate() const {
  if (n_customers == 0 || n_articles == 0) throw DataError("simulate: need at least one customer and article");
  if (n_orders < n_customers) throw DataError("simulate: need at least one order per customer");
  if (!(activity_shape > 0.0)) throw DataError("simulate: activity shape must be positive");
  if (n_brands == 0 || categories.empty()) throw DataError("simulate: need brands and categories");
  if (!(grid_step > 0.0) || !(grid_max >= grid_min)) throw DataError("simulate: invalid size grid");
  if (!(profile_concentration > 0.0) || !(brand_mass >= 0.0) || !(category_mass >= 0.0)) {
    throw DataError("simulate: invalid return profile parameters");
  }
  for (const double p : base_return_profile) {
    if (!(p > 0.0)) throw DataError("simulate: base return profile must be positive");
  }
  const auto in_unit = [](const std::optional<double>& v) { return !v || (*v > 0.0 && *v <= 1.0); };
  if (!in_unit(w) || !in_unit(w_prime)) throw DataError("simulate: w and w' must lie in (0, 1]");
  if (noise_var && !(*noise_var >= 0.0)) throw DataError("simulate: noise variance must be non-negative");
  if (window_days < 1) throw DataError("simulate: time window must be at least one day");
  hyper.validate();
}

SyntheticData sample_dataset(const SynthConfig& cfg) {
  cfg.validate();
  const auto& hyper = cfg.hyper;
  SyntheticData out;
  auto& truth = out.truth;
  Rng rng = make_rng(cfg.seed, 0);

  // Catalog.
  std::vector<double> sizes;
  const auto k = static_cast<std::size_t>(std::floor((cfg.grid_max - cfg.grid_min) / cfg.grid_step + 1e-9)) + 1;
  for (std::size_t i = 0; i < k; ++i) sizes.push_back(cfg.grid_min + static_cast<double>(i) * cfg.grid_step);

  std::vector<ReturnCounts> brand_counts(cfg.n_brands);
  for (auto& c : brand_counts) c = pseudo_counts(rng, cfg, cfg.brand_mass);
  std::vector<ReturnCounts> category_counts(cfg.categories.size());
  for (auto& c : category_counts) c = pseudo_counts(rng, cfg, cfg.category_mass);

  truth.w = cfg.w ? *cfg.w : std::max(sample_beta(rng, hyper.w_beta_a, 1.0), 1e-12);
  truth.w_prime = cfg.w_prime ? *cfg.w_prime : std::max(sample_beta(rng, hyper.w_prime_beta_a, 1.0), 1e-12);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  truth.eta_small = cfg.eta_small ? *cfg.eta_small
                                  : hyper.eta_small_prior.mean + std::sqrt(hyper.eta_small_prior.var) * std_normal(rng);
  truth.eta_big = cfg.eta_big ? *cfg.eta_big
                              : hyper.eta_big_prior.mean + std::sqrt(hyper.eta_big_prior.var) * std_normal(rng);

  std::vector<std::string> article_ids;
  std::vector<ArticleTruth> articles;
  for (std::size_t a = 0; a < cfg.n_articles; ++a) {
    ArticleMeta meta;
    meta.article_id = fmt::format("a{}", a);
    const auto brand = a % cfg.n_brands;
    const auto category = (a / cfg.n_brands) % cfg.categories.size();
    meta.brand = fmt::format("brand{}", brand);
    meta.category = cfg.categories[category];
    meta.gender = cfg.gender;
    meta.size_system = cfg.size_system;
    meta.sizes = sizes;
    validate_article(meta, cfg.grid_step);

    ArticleTruth at;
    at.offset = cfg.article_offset ? *cfg.article_offset : std::sqrt(hyper.offset_prior_var) * std_normal(rng);
    const auto alpha = dirichlet_concentration(brand_counts[brand], category_counts[category], truth.w,
                                               truth.w_prime, hyper.alpha_floor);
    at.returns = sample_dirichlet(rng, alpha);
    article_ids.push_back(meta.article_id);
    articles.push_back(at);
    truth.articles.emplace(meta.article_id, at);
    out.catalog.insert(std::move(meta));
  }
  const SizeGrid grid{sizes, cfg.grid_step};

  // Orders per customer: one each, the rest by activity.
  std::vector<double> activity(cfg.n_customers);
  for (auto& v : activity) v = sample_gamma(rng, cfg.activity_shape);
  std::vector<std::size_t> order_counts(cfg.n_customers, 1);
  for (std::size_t extra = cfg.n_orders - cfg.n_customers; extra > 0; --extra) {
    ++order_counts[sample_index(rng, activity)];
  }
  std::vector<std::size_t> first_order(cfg.n_customers, 0);
  std::exclusive_scan(order_counts.begin(), order_counts.end(), first_order.begin(), std::size_t{0});

  const auto t = static_cast<std::size_t>(hyper.truncation);
  const auto& size_prior = hyper.default_size_prior;
  const std::int64_t window_seconds = static_cast<std::int64_t>(cfg.window_days) * 86'400;
  std::vector<CustomerTruth> customers(cfg.n_customers);
  std::vector<Order> orders(cfg.n_orders);

  tbb::parallel_for(std::size_t{0}, cfg.n_customers, [&](std::size_t c) {
    Rng crng = make_rng(cfg.seed, c + 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto& ct = customers[c];
    std::vector<double> b(t, 1.0);
    for (std::size_t i = 0; i + 1 < t; ++i) b[i] = sample_beta(crng, 1.0, hyper.dp_concentration);
    ct.weights = stick_breaking_weights(b);
    for (std::size_t i = 0; i < t; ++i) ct.means.push_back(size_prior.mean + std::sqrt(size_prior.var) * normal(crng));
    ct.noise_var = cfg.noise_var ? *cfg.noise_var : hyper.ig_scale / sample_gamma(crng, hyper.ig_shape);

    std::uniform_int_distribution<std::size_t> pick_article(0, cfg.n_articles - 1);
    std::uniform_int_distribution<std::int64_t> pick_time(0, window_seconds - 1);
    const std::string customer_id = fmt::format("c{}", c);
    for (std::size_t j = 0; j < order_counts[c]; ++j) {
      const std::size_t a = pick_article(crng);
      const std::size_t z = sample_index(crng, ct.weights);
      const auto r = static_cast<ReturnStatus>(sample_index(crng, articles[a].returns));
      const double eta = r == ReturnStatus::Kept ? 0.0 : (r == ReturnStatus::TooSmall ? truth.eta_small : truth.eta_big);
      const double mean = ct.means[z] + articles[a].offset + eta;
      const double s = mean + std::sqrt(ct.noise_var) * normal(crng);
      Order& o = orders[first_order[c] + j];
      o.order_id = fmt::format("o{}", first_order[c] + j);
      o.customer_id = customer_id;
      o.article_id = article_ids[a];
      o.size = grid.sizes[grid.nearest(s)];
      o.status = r;
      o.timestamp = cfg.window_start + std::chrono::seconds{pick_time(crng)};
    }
  });

  for (std::size_t c = 0; c < cfg.n_customers; ++c) truth.customers.emplace(fmt::format("c{}", c), customers[c]);
  std::stable_sort(orders.begin(), orders.end(),
                   [](const Order& x, const Order& y) { return x.timestamp < y.timestamp; });
  out.dataset.orders = std::move(orders);
  out.dataset.stats.total_rows = out.dataset.stats.accepted = out.dataset.orders.size();
  return out;
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pearson_correlation: bad input sizes");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

RecoveryScores recovery_score(const GroundTruth& truth, const HBayesState& fitted) {
  std::vector<double> true_offsets;
  std::vector<double> fitted_offsets;
  std::size_t same_sign = 0;
  for (const auto& [id, at] : truth.articles) {
    const auto it = fitted.articles.find(id);
    if (it == fitted.articles.end()) continue;
    true_offsets.push_back(at.offset);
    fitted_offsets.push_back(it->second.offset.mean);
    if ((at.offset >= 0.0) == (it->second.offset.mean >= 0.0)) ++same_sign;
  }
  if (true_offsets.size() < 10) {
    throw DataError(fmt::format("recovery_score: need at least 10 articles, have {}", true_offsets.size()));
  }
  RecoveryScores s;
  s.articles = true_offsets.size();
  s.offset_correlation = pearson_correlation(true_offsets, fitted_offsets);
  s.offset_sign_accuracy = static_cast<double>(same_sign) / static_cast<double>(s.articles);
  s.eta_small_abs_error = std::abs(fitted.global.eta_small.mean - truth.eta_small);
  s.eta_big_abs_error = std::abs(fitted.global.eta_big.mean - truth.eta_big);
  s.eta_mean_abs_error = 0.5 * (s.eta_small_abs_error + s.eta_big_abs_error);
  return s;
}

nlohmann::json to_json(const GroundTruth& truth) {
  nlohmann::json doc;
  doc["global"] = {{"eta_small", truth.eta_small}, {"eta_big", truth.eta_big}, {"w", truth.w}, {"w_prime", truth.w_prime}};
  auto& customers = doc["customers"] = nlohmann::json::object();
  for (const auto& [id, c] : truth.customers) {
    customers[id] = {{"means", c.means}, {"weights", c.weights}, {"noise_var", c.noise_var}};
  }
  auto& articles = doc["articles"] = nlohmann::json::object();
  for (const auto& [id, a] : truth.articles) articles[id] = {{"offset", a.offset}, {"returns", a.returns}};
  return doc;
}

}  // namespace sizecast
