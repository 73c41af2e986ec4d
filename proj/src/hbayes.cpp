#include "sizecast/hbayes.hpp"

#include "sizecast/error.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <fmt/format.h>
#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <unordered_map>

namespace sizecast {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double digamma(double x) { return boost::math::digamma(x); }

double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// E_q[log N(x; m0, v0)] for q(x) = N(m, v).
double expected_log_normal(const NormalFactor& q, double m0, double v0) {
  const double d = q.mean - m0;
  return -0.5 * (kLog2Pi + std::log(v0)) - (d * d + q.var) / (2.0 * v0);
}

double normal_entropy(const NormalFactor& q) { return 0.5 * (kLog2Pi + 1.0 + std::log(q.var)); }

double beta_entropy(const BetaFactor& q) {
  return log_beta_fn(q.a, q.b) - (q.a - 1.0) * digamma(q.a) - (q.b - 1.0) * digamma(q.b) +
         (q.a + q.b - 2.0) * digamma(q.a + q.b);
}

double inv_gamma_entropy(const InvGammaFactor& q) {
  return q.shape + std::log(q.scale) + std::lgamma(q.shape) - (1.0 + q.shape) * digamma(q.shape);
}

// E_q[log pi_i] under truncated stick-breaking with q(b_i) = Beta(a_i, b_i).
std::vector<double> expected_log_weights(const std::vector<BetaFactor>& sticks, std::size_t truncation) {
  std::vector<double> out(truncation, 0.0);
  double log_rest = 0.0;
  for (std::size_t i = 0; i < truncation; ++i) {
    if (i + 1 < truncation) {
      const auto& q = sticks[i];
      const double dsum = digamma(q.a + q.b);
      out[i] = log_rest + digamma(q.a) - dsum;
      log_rest += digamma(q.b) - dsum;
    } else {
      out[i] = log_rest;
    }
  }
  return out;
}

void require_finite(double v, std::string_view what) {
  if (!std::isfinite(v)) throw NumericalError(fmt::format("non-finite value in {}", what));
}

// Dense view of the state's factors for one dataset.
struct Index {
  std::vector<CustomerPosterior*> customers;
  std::vector<std::vector<std::size_t>> customer_orders;
  std::vector<ArticlePosterior*> articles;
  std::vector<std::vector<std::size_t>> article_orders;
  std::vector<std::size_t> order_customer;
  std::vector<std::size_t> order_article;
};

template <typename State>
Index build_index(State& state, const OrdersDataset& dataset) {
  Index idx;
  std::unordered_map<std::string_view, std::size_t> cmap;
  std::unordered_map<std::string_view, std::size_t> amap;
  for (auto& [id, c] : state.customers) {
    cmap.emplace(id, idx.customers.size());
    idx.customers.push_back(const_cast<CustomerPosterior*>(&c));
  }
  for (auto& [id, a] : state.articles) {
    amap.emplace(id, idx.articles.size());
    idx.articles.push_back(const_cast<ArticlePosterior*>(&a));
  }
  idx.customer_orders.resize(idx.customers.size());
  idx.article_orders.resize(idx.articles.size());
  idx.order_customer.reserve(dataset.size());
  idx.order_article.reserve(dataset.size());
  for (std::size_t o = 0; o < dataset.size(); ++o) {
    const auto& order = dataset.orders[o];
    const auto ci = cmap.find(order.customer_id);
    const auto ai = amap.find(order.article_id);
    if (ci == cmap.end() || ai == amap.end()) {
      throw DataError(fmt::format("order '{}' references a customer or article without posterior state",
                                  order.order_id));
    }
    idx.order_customer.push_back(ci->second);
    idx.order_article.push_back(ai->second);
    idx.customer_orders[ci->second].push_back(o);
    idx.article_orders[ai->second].push_back(o);
  }
  return idx;
}

template <typename Fn>
void for_each_index(std::size_t n, Fn&& fn) {
  tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n), [&](const tbb::blocked_range<std::size_t>& r) {
    for (std::size_t i = r.begin(); i != r.end(); ++i) fn(i);
  });
}

double ordered_sum(const std::vector<double>& parts) {
  CompensatedSum s;
  for (const double p : parts) s += p;
  return s.value();
}

Simplex3 article_prior_concentration(const HBayesState& state, std::string_view brand,
                                     std::string_view category) {
  static const ReturnCounts zero{};
  const auto b = state.brand_counts.find(brand);
  const auto c = state.category_counts.find(category);
  return dirichlet_concentration(b == state.brand_counts.end() ? zero : b->second,
                                 c == state.category_counts.end() ? zero : c->second, state.global.w,
                                 state.global.w_prime, state.hyper.alpha_floor);
}

// Dirichlet-multinomial log likelihood of an ordered sequence with counts n.
double log_dirichlet_multinomial(const ReturnCounts& n, const Simplex3& alpha) {
  const double total = static_cast<double>(n.total());
  if (total == 0.0) return 0.0;
  const double asum = alpha[0] + alpha[1] + alpha[2];
  double v = std::lgamma(asum) - std::lgamma(asum + total);
  for (std::size_t r = 0; r < 3; ++r) {
    if (n.n[r] > 0) v += std::lgamma(alpha[r] + static_cast<double>(n.n[r])) - std::lgamma(alpha[r]);
  }
  return v;
}

}  // namespace

double InvGammaFactor::mean_log() const { return std::log(scale) - digamma(shape); }

double InvGammaFactor::point_estimate() const {
  return shape > 1.0 ? scale / (shape - 1.0) : scale / (shape + 1.0);
}

Hyperparams Hyperparams::defaults() {
  Hyperparams h;
  h.size_priors.emplace(size_prior_key("shoes", "m", "EU"), SizePrior{42.0, 9.0});
  h.size_priors.emplace(size_prior_key("shoes", "f", "EU"), SizePrior{39.0, 9.0});
  return h;
}

void Hyperparams::validate() const {
  const auto bad = [](std::string_view what) {
    throw DataError(fmt::format("invalid hyperparameter: {}", what));
  };
  if (!(default_size_prior.var > 0.0) || !std::isfinite(default_size_prior.mean)) bad("sigma0^2 must be > 0");
  for (const auto& [key, p] : size_priors) {
    if (!(p.var > 0.0) || !std::isfinite(p.mean)) bad(fmt::format("sigma0^2 for '{}' must be > 0", key));
  }
  if (!(offset_prior_var > 0.0)) bad("article offset prior variance must be > 0");
  if (!(eta_small_prior.var > 0.0) || !(eta_big_prior.var > 0.0)) bad("eta prior variance must be > 0");
  if (!(dp_concentration > 0.0)) bad("DP concentration must be > 0");
  if (truncation < 1) bad("truncation must be >= 1");
  if (!(ig_shape > 0.0) || !(ig_scale > 0.0)) bad("inverse-gamma shape and scale must be > 0");
  if (!(w_beta_a > 0.0) || !(w_prime_beta_a > 0.0)) bad("Beta shapes for w, w' must be > 0");
  if (!(alpha_floor > 0.0)) bad("Dirichlet floor must be > 0");
}

const SizePrior& Hyperparams::size_prior(const ArticleMeta& article) const {
  const auto it = size_priors.find(size_prior_key(article.category, article.gender, article.size_system));
  return it == size_priors.end() ? default_size_prior : it->second;
}

std::string size_prior_key(std::string_view category, std::string_view gender, std::string_view size_system) {
  return fmt::format("{}/{}/{}", category, gender, size_system);
}

NormalFactor GlobalParams::eta(ReturnStatus r) const {
  switch (r) {
    case ReturnStatus::TooSmall:
      return eta_small;
    case ReturnStatus::TooBig:
      return eta_big;
    case ReturnStatus::Kept:
      break;
  }
  return NormalFactor{0.0, 0.0};
}

std::vector<double> CustomerPosterior::weights() const {
  std::vector<double> b;
  b.reserve(components.size());
  for (const auto& s : sticks) b.push_back(s.mean());
  b.push_back(1.0);
  return stick_breaking_weights(b);
}

Simplex3 dirichlet_concentration(const ReturnCounts& brand, const ReturnCounts& category, double w,
                                 double w_prime, double floor) {
  Simplex3 alpha{};
  for (std::size_t r = 0; r < 3; ++r) {
    alpha[r] = w * static_cast<double>(brand.n[r]) + w_prime * static_cast<double>(category.n[r]) + floor;
  }
  return alpha;
}

Simplex3 posterior_return_probs(const ArticlePosterior& article) {
  const auto& a = article.concentration;
  const double total = a[0] + a[1] + a[2];
  return {a[0] / total, a[1] / total, a[2] / total};
}

std::vector<double> stick_breaking_weights(std::span<const double> b) {
  if (b.empty()) throw std::invalid_argument("stick_breaking_weights: empty input");
  for (const double v : b) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("stick_breaking_weights: b outside [0, 1]");
  }
  if (b.back() != 1.0) throw std::invalid_argument("stick_breaking_weights: last stick must be 1");
  std::vector<double> pi(b.size());
  double rest = 1.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    pi[i] = b[i] * rest;
    rest *= 1.0 - b[i];
  }
  return pi;
}

double likelihood_mean(const HBayesState& state, const Order& order, std::size_t component) {
  const auto& c = state.customers.find(order.customer_id)->second;
  const auto& a = state.articles.find(order.article_id)->second;
  return c.components[component].mean + a.offset.mean + state.global.eta(order.status).mean;
}

HBayesState init_state(const OrdersDataset& dataset, const Catalog& catalog, const Hyperparams& hyper,
                       std::uint64_t seed) {
  hyper.validate();
  HBayesState state;
  state.hyper = hyper;
  state.global.eta_small = hyper.eta_small_prior;
  state.global.eta_big = hyper.eta_big_prior;

  struct CustomerAccum {
    CompensatedSum size_sum;
    std::size_t n = 0;
    std::map<std::string, std::size_t> prior_keys;
  };
  std::map<std::string, CustomerAccum, std::less<>> accum;
  for (const auto& o : dataset.orders) {
    const ArticleMeta* meta = catalog.find(o.article_id);
    if (meta == nullptr) {
      throw DataError(fmt::format("order '{}' references article '{}' missing from the catalog", o.order_id,
                                  o.article_id));
    }
    auto& acc = accum[o.customer_id];
    acc.size_sum += o.size;
    ++acc.n;
    ++acc.prior_keys[size_prior_key(meta->category, meta->gender, meta->size_system)];

    auto [it, inserted] = state.articles.try_emplace(o.article_id);
    if (inserted) {
      it->second.offset = {0.0, hyper.offset_prior_var};
      it->second.brand = meta->brand;
      it->second.category = meta->category;
    }
    it->second.counts.add(o.status);
  }
  for (const auto& [id, a] : state.articles) {
    state.brand_counts[a.brand] += a.counts;
    state.category_counts[a.category] += a.counts;
  }

  const auto t = static_cast<std::size_t>(hyper.truncation);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (const auto& [id, acc] : accum) {
    CustomerPosterior c;
    // The most frequent prior key among the customer's orders sets mu_0.
    const auto key = std::max_element(acc.prior_keys.begin(), acc.prior_keys.end(),
                                      [](const auto& x, const auto& y) { return x.second < y.second; });
    const auto pit = hyper.size_priors.find(key->first);
    c.prior = pit == hyper.size_priors.end() ? hyper.default_size_prior : pit->second;
    c.n_orders = acc.n;
    const double mean = acc.size_sum.value() / static_cast<double>(acc.n);
    for (std::size_t i = 0; i < t; ++i) c.components.push_back({mean + jitter(rng), 1.0});
    c.sticks.assign(t - 1, BetaFactor{1.0, hyper.dp_concentration});
    c.noise = {hyper.ig_shape, hyper.ig_scale};
    state.customers.emplace(id, std::move(c));
  }

  for (auto& [id, a] : state.articles) {
    const auto alpha = article_prior_concentration(state, a.brand, a.category);
    for (std::size_t r = 0; r < 3; ++r) a.concentration[r] = static_cast<double>(a.counts.n[r]) + alpha[r];
  }
  state.responsibilities.assign(dataset.size(), std::vector<double>(t, 1.0 / static_cast<double>(t)));
  return state;
}

std::vector<double> weight_grid() {
  constexpr int kPoints = 50;
  std::vector<double> grid(kPoints);
  for (int k = 0; k < kPoints; ++k) grid[k] = std::pow(10.0, -3.0 + 3.0 * k / (kPoints - 1));
  grid.back() = 1.0;
  return grid;
}

double weight_objective(const HBayesState& state, double w, double w_prime) {
  CompensatedSum obj;
  for (const auto& [id, a] : state.articles) {
    static const ReturnCounts zero{};
    const auto b = state.brand_counts.find(a.brand);
    const auto c = state.category_counts.find(a.category);
    const auto alpha = dirichlet_concentration(b == state.brand_counts.end() ? zero : b->second,
                                               c == state.category_counts.end() ? zero : c->second, w,
                                               w_prime, state.hyper.alpha_floor);
    obj += log_dirichlet_multinomial(a.counts, alpha);
  }
  // log Beta(x; a, 1) = log a + (a - 1) log x
  obj += std::log(state.hyper.w_beta_a) + (state.hyper.w_beta_a - 1.0) * std::log(w);
  obj += std::log(state.hyper.w_prime_beta_a) + (state.hyper.w_prime_beta_a - 1.0) * std::log(w_prime);
  return obj.value();
}

std::pair<double, double> update_weights(const HBayesState& state) {
  const auto grid = weight_grid();
  double best = -std::numeric_limits<double>::infinity();
  std::pair<double, double> arg{grid.front(), grid.front()};
  for (const double w : grid) {
    for (const double wp : grid) {
      const double v = weight_objective(state, w, wp);
      if (v > best) {
        best = v;
        arg = {w, wp};
      }
    }
  }
  return arg;
}

namespace {

// Steps 1-4 of a sweep for one customer; articles and eta are read-only.
void update_customer(HBayesState& state, const OrdersDataset& dataset, const Index& idx, std::size_t ci) {
  auto& cust = *idx.customers[ci];
  const auto& orders = idx.customer_orders[ci];
  const std::size_t t = cust.components.size();
  const double alpha_dp = state.hyper.dp_concentration;

  // (1) responsibilities
  {
    const double prec = cust.noise.mean_precision();
    const auto elog_pi = expected_log_weights(cust.sticks, t);
    std::vector<double> logits(t);
    for (const std::size_t o : orders) {
      const auto& order = dataset.orders[o];
      const auto& art = *idx.articles[idx.order_article[o]];
      const double eta_mean = state.global.eta(order.status).mean;
      for (std::size_t i = 0; i < t; ++i) {
        const auto& comp = cust.components[i];
        const double mean = comp.mean + art.offset.mean + eta_mean;
        assert(mean == likelihood_mean(state, order, i));
        const double d = order.size - mean;
        logits[i] = elog_pi[i] - 0.5 * prec * (d * d + comp.var);
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double norm = 0.0;
      auto& rho = state.responsibilities[o];
      for (std::size_t i = 0; i < t; ++i) {
        rho[i] = std::exp(logits[i] - mx);
        norm += rho[i];
      }
      for (auto& v : rho) v /= norm;
    }
  }

  // (2) stick-breaking factors
  std::vector<double> counts(t, 0.0);
  for (const std::size_t o : orders) {
    for (std::size_t i = 0; i < t; ++i) counts[i] += state.responsibilities[o][i];
  }
  {
    double tail = 0.0;
    for (std::size_t i = t; i-- > 0;) {
      if (i + 1 < t) cust.sticks[i] = {1.0 + counts[i], alpha_dp + tail};
      tail += counts[i];
    }
  }

  // (3) component means
  {
    const double prec = cust.noise.mean_precision();
    std::vector<double> weighted(t, 0.0);
    for (const std::size_t o : orders) {
      const auto& order = dataset.orders[o];
      const auto& art = *idx.articles[idx.order_article[o]];
      const double target = order.size - art.offset.mean - state.global.eta(order.status).mean;
      for (std::size_t i = 0; i < t; ++i) weighted[i] += state.responsibilities[o][i] * target;
    }
    for (std::size_t i = 0; i < t; ++i) {
      const double lambda = 1.0 / cust.prior.var + prec * counts[i];
      cust.components[i] = {(cust.prior.mean / cust.prior.var + prec * weighted[i]) / lambda, 1.0 / lambda};
    }
  }

  // (4) noise variance
  {
    double ss = 0.0;
    for (const std::size_t o : orders) {
      const auto& order = dataset.orders[o];
      const auto& art = *idx.articles[idx.order_article[o]];
      const auto eta = state.global.eta(order.status);
      const double shift = art.offset.mean + eta.mean;
      const double shared_var = art.offset.var + eta.var;
      const auto& rho = state.responsibilities[o];
      for (std::size_t i = 0; i < t; ++i) {
        const auto& comp = cust.components[i];
        const double d = order.size - comp.mean - shift;
        ss += rho[i] * (d * d + comp.var + shared_var);
      }
    }
    cust.noise = {state.hyper.ig_shape + 0.5 * static_cast<double>(orders.size()), state.hyper.ig_scale + 0.5 * ss};
  }
}

// E[mu_{c,z_o}] under the order's responsibilities.
double expected_component_mean(const HBayesState& state, const CustomerPosterior& cust, std::size_t o) {
  const auto& rho = state.responsibilities[o];
  double m = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) m += rho[i] * cust.components[i].mean;
  return m;
}

void update_article(HBayesState& state, const OrdersDataset& dataset, const Index& idx, std::size_t ai) {
  auto& art = *idx.articles[ai];
  double lambda = 1.0 / state.hyper.offset_prior_var;
  double num = 0.0;
  for (const std::size_t o : idx.article_orders[ai]) {
    const auto& order = dataset.orders[o];
    const auto& cust = *idx.customers[idx.order_customer[o]];
    const double prec = cust.noise.mean_precision();
    lambda += prec;
    num += prec * (order.size - expected_component_mean(state, cust, o) - state.global.eta(order.status).mean);
  }
  art.offset = {num / lambda, 1.0 / lambda};
}

NormalFactor update_eta(const HBayesState& state, const OrdersDataset& dataset, const Index& idx,
                        ReturnStatus status, const NormalFactor& prior) {
  double lambda = 1.0 / prior.var;
  double num = prior.mean / prior.var;
  for (std::size_t o = 0; o < dataset.size(); ++o) {
    const auto& order = dataset.orders[o];
    if (order.status != status) continue;
    const auto& cust = *idx.customers[idx.order_customer[o]];
    const auto& art = *idx.articles[idx.order_article[o]];
    const double prec = cust.noise.mean_precision();
    lambda += prec;
    num += prec * (order.size - expected_component_mean(state, cust, o) - art.offset.mean);
  }
  return {num / lambda, 1.0 / lambda};
}

}  // namespace

double cavi_sweep(HBayesState& state, const OrdersDataset& dataset) {
  if (state.responsibilities.size() != dataset.size()) {
    throw DataError("cavi_sweep: state was initialized for a different dataset");
  }
  const Index idx = build_index(state, dataset);

  for_each_index(idx.customers.size(), [&](std::size_t ci) { update_customer(state, dataset, idx, ci); });
  for_each_index(idx.articles.size(), [&](std::size_t ai) { update_article(state, dataset, idx, ai); });
  state.global.eta_small = update_eta(state, dataset, idx, ReturnStatus::TooSmall, state.hyper.eta_small_prior);
  state.global.eta_big = update_eta(state, dataset, idx, ReturnStatus::TooBig, state.hyper.eta_big_prior);

  // The Dirichlet refresh uses the freshly estimated weights so the stored
  // posterior always matches the prior in use.
  std::tie(state.global.w, state.global.w_prime) = update_weights(state);
  for (auto* art : idx.articles) {
    const auto alpha = article_prior_concentration(state, art->brand, art->category);
    for (std::size_t r = 0; r < 3; ++r) art->concentration[r] = static_cast<double>(art->counts.n[r]) + alpha[r];
  }

  const double value = elbo(state, dataset);
  state.elbo_trace.push_back(value);
  return value;
}

double elbo(const HBayesState& state, const OrdersDataset& dataset) {
  if (!dataset.empty() && state.responsibilities.size() != dataset.size()) {
    throw DataError("elbo: responsibilities do not match the dataset");
  }
  const Index idx = build_index(state, dataset);
  const auto& hyper = state.hyper;

  std::vector<double> customer_terms(idx.customers.size(), 0.0);
  for_each_index(idx.customers.size(), [&](std::size_t ci) {
    const auto& cust = *idx.customers[ci];
    const std::size_t t = cust.components.size();
    CompensatedSum s;
    const double prec = cust.noise.mean_precision();
    const double elog_var = cust.noise.mean_log();
    const auto elog_pi = expected_log_weights(cust.sticks, t);
    for (const std::size_t o : idx.customer_orders[ci]) {
      const auto& order = dataset.orders[o];
      const auto& art = *idx.articles[idx.order_article[o]];
      const auto eta = state.global.eta(order.status);
      const auto& rho = state.responsibilities[o];
      for (std::size_t i = 0; i < t; ++i) {
        if (rho[i] <= 0.0) continue;
        const auto& comp = cust.components[i];
        const double d = order.size - (comp.mean + art.offset.mean + eta.mean);
        const double sq = d * d + comp.var + art.offset.var + eta.var;
        s += rho[i] * (elog_pi[i] - 0.5 * kLog2Pi - 0.5 * elog_var - 0.5 * prec * sq - std::log(rho[i]));
      }
    }
    for (const auto& comp : cust.components) {
      s += expected_log_normal(comp, cust.prior.mean, cust.prior.var) + normal_entropy(comp);
    }
    for (const auto& stick : cust.sticks) {
      const double elog_1mb = digamma(stick.b) - digamma(stick.a + stick.b);
      s += std::log(hyper.dp_concentration) + (hyper.dp_concentration - 1.0) * elog_1mb + beta_entropy(stick);
    }
    s += hyper.ig_shape * std::log(hyper.ig_scale) - std::lgamma(hyper.ig_shape) -
         (hyper.ig_shape + 1.0) * elog_var - hyper.ig_scale * prec + inv_gamma_entropy(cust.noise);
    customer_terms[ci] = s.value();
  });

  std::vector<double> article_terms(idx.articles.size(), 0.0);
  for_each_index(idx.articles.size(), [&](std::size_t ai) {
    const auto& art = *idx.articles[ai];
    CompensatedSum s;
    s += expected_log_normal(art.offset, 0.0, hyper.offset_prior_var) + normal_entropy(art.offset);

    ReturnCounts n;
    for (const std::size_t o : idx.article_orders[ai]) n.add(dataset.orders[o].status);
    const auto alpha = article_prior_concentration(state, art.brand, art.category);
    const auto& post = art.concentration;
    const double post_sum = post[0] + post[1] + post[2];
    const double dsum = digamma(post_sum);
    double prior_norm = std::lgamma(alpha[0] + alpha[1] + alpha[2]);
    double post_norm = std::lgamma(post_sum);
    for (std::size_t r = 0; r < 3; ++r) {
      const double elog_theta = digamma(post[r]) - dsum;
      s += static_cast<double>(n.n[r]) * elog_theta;
      prior_norm += (alpha[r] - 1.0) * elog_theta - std::lgamma(alpha[r]);
      post_norm += (post[r] - 1.0) * elog_theta - std::lgamma(post[r]);
    }
    s += prior_norm - post_norm;
    article_terms[ai] = s.value();
  });

  CompensatedSum total;
  total += ordered_sum(customer_terms);
  total += ordered_sum(article_terms);
  total += expected_log_normal(state.global.eta_small, hyper.eta_small_prior.mean, hyper.eta_small_prior.var) +
           normal_entropy(state.global.eta_small);
  total += expected_log_normal(state.global.eta_big, hyper.eta_big_prior.mean, hyper.eta_big_prior.var) +
           normal_entropy(state.global.eta_big);
  const double value = total.value();
  if (!std::isfinite(value)) {
    for (std::size_t i = 0; i < customer_terms.size(); ++i) {
      require_finite(customer_terms[i], fmt::format("ELBO customer factors (customer #{})", i));
    }
    for (std::size_t i = 0; i < article_terms.size(); ++i) {
      require_finite(article_terms[i], fmt::format("ELBO article factors (article #{})", i));
    }
    throw NumericalError("non-finite value in ELBO global factors (eta)");
  }
  return value;
}

HBayesState fit_hbayes(const OrdersDataset& dataset, const Catalog& catalog, const Hyperparams& hyper,
                       const FitOptions& options) {
  if (dataset.empty()) throw DataError("fit_hbayes: empty dataset");
  if (options.max_sweeps < 1) throw DataError("fit_hbayes: max_sweeps must be >= 1");
  HBayesState state = init_state(dataset, catalog, hyper, options.seed);
  double previous = elbo(state, dataset);
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    const double value = cavi_sweep(state, dataset);
    if (options.on_sweep) options.on_sweep(sweep, value);
    if (std::abs(value - previous) / std::abs(value) < options.tol) break;
    previous = value;
  }
  return state;
}

namespace {

struct ArticleView {
  NormalFactor offset;
  bool known = false;
};

ArticleView article_view(const HBayesState& state, std::string_view article_id) {
  const auto it = state.articles.find(article_id);
  if (it == state.articles.end()) return {{0.0, state.hyper.offset_prior_var}, false};
  return {it->second.offset, true};
}

}  // namespace

GaussianMixture predictive_size_density(const HBayesState& state, const Catalog& catalog,
                                        std::string_view customer_id, std::string_view article_id,
                                        ReturnStatus r) {
  const ArticleMeta& meta = catalog.at(article_id);
  const auto art = article_view(state, article_id);
  const auto eta = state.global.eta(r);
  const auto cit = state.customers.find(customer_id);
  std::vector<GaussianComponent> comps;
  if (cit == state.customers.end()) {
    const auto& prior = state.hyper.size_prior(meta);
    const InvGammaFactor noise_prior{state.hyper.ig_shape, state.hyper.ig_scale};
    const double var = prior.var + noise_prior.point_estimate() + art.offset.var + eta.var;
    comps.push_back({1.0, prior.mean + art.offset.mean + eta.mean, std::sqrt(var)});
  } else {
    const auto& cust = cit->second;
    const auto pi = cust.weights();
    const double noise = cust.noise.point_estimate();
    for (std::size_t i = 0; i < cust.components.size(); ++i) {
      const auto& c = cust.components[i];
      const double var = noise + c.var + art.offset.var + eta.var;
      comps.push_back({pi[i], c.mean + art.offset.mean + eta.mean, std::sqrt(var)});
    }
  }
  return GaussianMixture(std::move(comps));
}

Simplex3 predictive_return_probs(const HBayesState& state, const Catalog& catalog, std::string_view article_id) {
  const ArticleMeta& meta = catalog.at(article_id);
  const auto it = state.articles.find(article_id);
  if (it != state.articles.end()) return posterior_return_probs(it->second);
  ArticlePosterior fresh;
  fresh.concentration = article_prior_concentration(state, meta.brand, meta.category);
  return posterior_return_probs(fresh);
}

double param_confidence(const HBayesState& state, const Catalog& catalog, std::string_view customer_id,
                        std::string_view article_id) {
  const ArticleMeta* meta = catalog.find(article_id);
  const auto cit = state.customers.find(customer_id);
  const auto ait = state.articles.find(article_id);
  if (meta == nullptr || cit == state.customers.end() || ait == state.articles.end()) return 0.0;
  const auto& cust = cit->second;
  const auto pi = cust.weights();
  const auto best = static_cast<std::size_t>(std::max_element(pi.begin(), pi.end()) - pi.begin());
  const double var = cust.components[best].var + ait->second.offset.var;
  if (!(var > 0.0)) return 1.0;
  return std::erf(0.5 * meta->step / std::sqrt(2.0 * var));
}

namespace {

nlohmann::json normal_json(const NormalFactor& f) { return {{"mean", f.mean}, {"var", f.var}}; }
NormalFactor normal_from_json(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("var").get<double>()};
}
nlohmann::json counts_json(const ReturnCounts& c) { return nlohmann::json::array({c.n[0], c.n[1], c.n[2]}); }
ReturnCounts counts_from_json(const nlohmann::json& j) {
  ReturnCounts c;
  c.n = j.get<std::array<std::uint64_t, 3>>();
  return c;
}
nlohmann::json prior_json(const SizePrior& p) { return {{"mean", p.mean}, {"var", p.var}}; }
SizePrior prior_from_json(const nlohmann::json& j) { return {j.at("mean").get<double>(), j.at("var").get<double>()}; }

nlohmann::json hyper_json(const Hyperparams& h) {
  nlohmann::json priors = nlohmann::json::object();
  for (const auto& [k, p] : h.size_priors) priors[k] = prior_json(p);
  return {{"size_priors", priors},
          {"default_size_prior", prior_json(h.default_size_prior)},
          {"offset_prior_var", h.offset_prior_var},
          {"eta_small_prior", normal_json(h.eta_small_prior)},
          {"eta_big_prior", normal_json(h.eta_big_prior)},
          {"dp_concentration", h.dp_concentration},
          {"truncation", h.truncation},
          {"ig_shape", h.ig_shape},
          {"ig_scale", h.ig_scale},
          {"w_beta_a", h.w_beta_a},
          {"w_prime_beta_a", h.w_prime_beta_a},
          {"alpha_floor", h.alpha_floor}};
}

Hyperparams hyper_from_json(const nlohmann::json& j) {
  Hyperparams h;
  for (const auto& [k, p] : j.at("size_priors").items()) h.size_priors.emplace(k, prior_from_json(p));
  h.default_size_prior = prior_from_json(j.at("default_size_prior"));
  h.offset_prior_var = j.at("offset_prior_var").get<double>();
  h.eta_small_prior = normal_from_json(j.at("eta_small_prior"));
  h.eta_big_prior = normal_from_json(j.at("eta_big_prior"));
  h.dp_concentration = j.at("dp_concentration").get<double>();
  h.truncation = j.at("truncation").get<int>();
  h.ig_shape = j.at("ig_shape").get<double>();
  h.ig_scale = j.at("ig_scale").get<double>();
  h.w_beta_a = j.at("w_beta_a").get<double>();
  h.w_prime_beta_a = j.at("w_prime_beta_a").get<double>();
  h.alpha_floor = j.at("alpha_floor").get<double>();
  h.validate();
  return h;
}

}  // namespace

nlohmann::json to_json(const HBayesState& state) {
  nlohmann::json doc;
  doc["kind"] = "hbayes";
  doc["version"] = kHBayesFormatVersion;
  doc["hyperparams"] = hyper_json(state.hyper);
  doc["global"] = {{"w", state.global.w},
                   {"w_prime", state.global.w_prime},
                   {"eta_small", normal_json(state.global.eta_small)},
                   {"eta_big", normal_json(state.global.eta_big)}};
  auto& customers = doc["customers"] = nlohmann::json::object();
  for (const auto& [id, c] : state.customers) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& f : c.components) comps.push_back(normal_json(f));
    nlohmann::json sticks = nlohmann::json::array();
    for (const auto& s : c.sticks) sticks.push_back({{"a", s.a}, {"b", s.b}});
    customers[id] = {{"components", comps},
                     {"sticks", sticks},
                     {"noise", {{"shape", c.noise.shape}, {"scale", c.noise.scale}}},
                     {"prior", prior_json(c.prior)},
                     {"n_orders", c.n_orders}};
  }
  auto& articles = doc["articles"] = nlohmann::json::object();
  for (const auto& [id, a] : state.articles) {
    articles[id] = {{"offset", normal_json(a.offset)},
                    {"concentration", a.concentration},
                    {"counts", counts_json(a.counts)},
                    {"brand", a.brand},
                    {"category", a.category}};
  }
  auto& brands = doc["brand_counts"] = nlohmann::json::object();
  for (const auto& [id, c] : state.brand_counts) brands[id] = counts_json(c);
  auto& categories = doc["category_counts"] = nlohmann::json::object();
  for (const auto& [id, c] : state.category_counts) categories[id] = counts_json(c);
  doc["elbo_trace"] = state.elbo_trace;
  return doc;
}

HBayesState hbayes_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "hbayes") throw DataError("model file is not an hbayes model");
    if (doc.at("version").get<int>() != kHBayesFormatVersion) {
      throw DataError(fmt::format("unsupported hbayes model version {}", doc.at("version").dump()));
    }
    HBayesState s;
    s.hyper = hyper_from_json(doc.at("hyperparams"));
    const auto& g = doc.at("global");
    s.global.w = g.at("w").get<double>();
    s.global.w_prime = g.at("w_prime").get<double>();
    s.global.eta_small = normal_from_json(g.at("eta_small"));
    s.global.eta_big = normal_from_json(g.at("eta_big"));
    const auto t = static_cast<std::size_t>(s.hyper.truncation);
    for (const auto& [id, j] : doc.at("customers").items()) {
      CustomerPosterior c;
      for (const auto& f : j.at("components")) c.components.push_back(normal_from_json(f));
      for (const auto& b : j.at("sticks")) c.sticks.push_back({b.at("a").get<double>(), b.at("b").get<double>()});
      c.noise = {j.at("noise").at("shape").get<double>(), j.at("noise").at("scale").get<double>()};
      c.prior = prior_from_json(j.at("prior"));
      c.n_orders = j.at("n_orders").get<std::size_t>();
      if (c.components.size() != t || c.sticks.size() + 1 != t) {
        throw DataError(fmt::format("customer '{}': expected {} mixture components", id, t));
      }
      s.customers.emplace(id, std::move(c));
    }
    for (const auto& [id, j] : doc.at("articles").items()) {
      ArticlePosterior a;
      a.offset = normal_from_json(j.at("offset"));
      a.concentration = j.at("concentration").get<Simplex3>();
      a.counts = counts_from_json(j.at("counts"));
      a.brand = j.at("brand").get<std::string>();
      a.category = j.at("category").get<std::string>();
      s.articles.emplace(id, std::move(a));
    }
    for (const auto& [id, j] : doc.at("brand_counts").items()) s.brand_counts.emplace(id, counts_from_json(j));
    for (const auto& [id, j] : doc.at("category_counts").items()) s.category_counts.emplace(id, counts_from_json(j));
    s.elbo_trace = doc.at("elbo_trace").get<std::vector<double>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed hbayes model: {}", e.what()));
  }
}

}  // namespace sizecast
