#include "sizecast/baseline.hpp"

#include "sizecast/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sizecast {

namespace {

// Linear-interpolation quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

CustomerKde make_kde(std::vector<double> sizes, double h_min) {
  CustomerKde kde;
  kde.bandwidth = kde_bandwidth(sizes, h_min);
  kde.sizes = std::move(sizes);
  return kde;
}

}  // namespace

double CustomerKde::pdf(double s) const {
  CompensatedSum sum;
  for (const double c : sizes) sum += normal_pdf(s, c, bandwidth);
  return sum.value() / static_cast<double>(sizes.size());
}

const CustomerKde& BaselineModel::size_model(std::string_view customer_id) const {
  const auto it = customers.find(customer_id);
  return it == customers.end() ? global_sizes : it->second;
}

const ArticleReturnCounts& BaselineModel::return_counts(std::string_view article_id) const {
  const auto it = articles.find(article_id);
  return it == articles.end() ? global_returns : it->second;
}

double kde_bandwidth(std::span<const double> sizes, double h_min) {
  const std::size_t n = sizes.size();
  if (n <= 1) return h_min;
  const double mean = std::accumulate(sizes.begin(), sizes.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (const double s : sizes) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) return h_min;
  std::vector<double> sorted(sizes.begin(), sizes.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  const double spread = std::min(sd, iqr / 1.34);
  return std::max(h_min, 0.9 * spread * std::pow(static_cast<double>(n), -0.2));
}

Simplex3 return_probs(const ArticleReturnCounts& counts) {
  const double denom = static_cast<double>(counts.total()) + 3.0;
  Simplex3 p{};
  for (std::size_t r = 0; r < 3; ++r) p[r] = (static_cast<double>(counts.n[r]) + 1.0) / denom;
  return p;
}

BaselineModel fit_baseline(const OrdersDataset& dataset, const BaselineOptions& options) {
  if (dataset.empty()) throw DataError("fit_baseline: empty dataset");
  if (!(options.h_min > 0.0)) throw DataError("fit_baseline: h_min must be positive");

  std::map<std::string, std::vector<double>, std::less<>> by_customer;
  BaselineModel model;
  model.h_min = options.h_min;
  std::vector<double> pooled;
  pooled.reserve(dataset.size());
  for (const auto& o : dataset.orders) {
    by_customer[o.customer_id].push_back(o.size);
    model.articles[o.article_id].add(o.status);
    model.global_returns.add(o.status);
    pooled.push_back(o.size);
  }
  for (auto& [id, sizes] : by_customer) model.customers.emplace(id, make_kde(std::move(sizes), options.h_min));

  if (pooled.size() > options.global_sample_cap) {
    std::mt19937_64 rng(options.subsample_seed);
    std::vector<std::size_t> idx(pooled.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(options.global_sample_cap);
    std::sort(idx.begin(), idx.end());
    std::vector<double> sample;
    sample.reserve(idx.size());
    for (const auto i : idx) sample.push_back(pooled[i]);
    pooled = std::move(sample);
  }
  model.global_sizes = make_kde(std::move(pooled), options.h_min);
  return model;
}

double kde_density(const BaselineModel& model, std::string_view customer_id, double s) {
  return model.size_model(customer_id).pdf(s);
}

BaselineJoint baseline_joint_density(const BaselineModel& model, std::string_view customer_id,
                                     std::string_view article_id) {
  BaselineJoint j;
  j.known_customer = model.knows_customer(customer_id);
  j.known_article = model.knows_article(article_id);
  j.size_density = model.size_model(customer_id).density();
  j.returns = return_probs(model.return_counts(article_id));
  return j;
}

namespace {

nlohmann::json counts_json(const ArticleReturnCounts& c) {
  return {{"nK", c.kept()}, {"nS", c.too_small()}, {"nB", c.too_big()}};
}

ArticleReturnCounts counts_from_json(const nlohmann::json& j) {
  ArticleReturnCounts c;
  c.n = {j.at("nK").get<std::uint64_t>(), j.at("nS").get<std::uint64_t>(),
         j.at("nB").get<std::uint64_t>()};
  return c;
}

nlohmann::json kde_json(const CustomerKde& k) { return {{"sizes", k.sizes}, {"h", k.bandwidth}}; }

CustomerKde kde_from_json(const nlohmann::json& j) {
  CustomerKde k;
  k.sizes = j.at("sizes").get<std::vector<double>>();
  k.bandwidth = j.at("h").get<double>();
  if (k.sizes.empty() || !(k.bandwidth > 0.0)) throw DataError("baseline model: invalid KDE entry");
  return k;
}

}  // namespace

nlohmann::json to_json(const BaselineModel& model) {
  nlohmann::json doc;
  doc["kind"] = "baseline";
  doc["version"] = kBaselineFormatVersion;
  doc["h_min"] = model.h_min;
  auto& customers = doc["customers"] = nlohmann::json::object();
  for (const auto& [id, kde] : model.customers) customers[id] = kde_json(kde);
  auto& articles = doc["articles"] = nlohmann::json::object();
  for (const auto& [id, c] : model.articles) articles[id] = counts_json(c);
  doc["global"] = {{"sizes", kde_json(model.global_sizes)}, {"returns", counts_json(model.global_returns)}};
  return doc;
}

BaselineModel baseline_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "baseline") throw DataError("model file is not a baseline model");
    if (doc.at("version").get<int>() != kBaselineFormatVersion) {
      throw DataError(fmt::format("unsupported baseline model version {}", doc.at("version").dump()));
    }
    BaselineModel m;
    m.h_min = doc.at("h_min").get<double>();
    for (const auto& [id, j] : doc.at("customers").items()) m.customers.emplace(id, kde_from_json(j));
    for (const auto& [id, j] : doc.at("articles").items()) m.articles.emplace(id, counts_from_json(j));
    m.global_sizes = kde_from_json(doc.at("global").at("sizes"));
    m.global_returns = counts_from_json(doc.at("global").at("returns"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed baseline model: {}", e.what()));
  }
}

}  // namespace sizecast
