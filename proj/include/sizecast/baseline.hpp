#pragma once

// Independent size/return baseline: a Gaussian KDE over each customer's
// purchased sizes and add-one smoothed return frequencies per article, with
// pooled marginals for customers or articles not seen in training.

#include "sizecast/domain.hpp"
#include "sizecast/mixture.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sizecast {

using ArticleReturnCounts = ReturnCounts;

struct CustomerKde {
  std::vector<double> sizes;
  double bandwidth = 0.5;

  GaussianMixture density() const { return GaussianMixture::kde(sizes, bandwidth); }
  double pdf(double s) const;
};

struct BaselineOptions {
  double h_min = 0.5;
  std::size_t global_sample_cap = 100'000;
  std::uint64_t subsample_seed = 0x5eed'b45e'11e0ULL;
};

struct BaselineModel {
  std::map<std::string, CustomerKde, std::less<>> customers;
  std::map<std::string, ArticleReturnCounts, std::less<>> articles;
  CustomerKde global_sizes;
  ArticleReturnCounts global_returns;
  double h_min = 0.5;

  bool knows_customer(std::string_view id) const { return customers.find(id) != customers.end(); }
  bool knows_article(std::string_view id) const { return articles.find(id) != articles.end(); }
  // Customer KDE, or the pooled size marginal for an unknown customer.
  const CustomerKde& size_model(std::string_view customer_id) const;
  // Article counts, or the pooled counts for an unknown article.
  const ArticleReturnCounts& return_counts(std::string_view article_id) const;
};

inline constexpr int kBaselineFormatVersion = 1;

// Throws DataError on an empty dataset.
BaselineModel fit_baseline(const OrdersDataset& dataset, const BaselineOptions& options = {});

// Silverman's rule of thumb, floored at h_min:
// max(h_min, 0.9 * min(sd, IQR / 1.34) * n^(-1/5)); h_min when n == 1 or sd == 0.
double kde_bandwidth(std::span<const double> sizes, double h_min);

double kde_density(const BaselineModel& model, std::string_view customer_id, double s);

// (n_r + 1) / (n + 3)
Simplex3 return_probs(const ArticleReturnCounts& counts);

struct BaselineJoint {
  GaussianMixture size_density;
  Simplex3 returns{};
  bool known_customer = false;
  bool known_article = false;

  double joint(double s, ReturnStatus r) const { return size_density.pdf(s) * returns[index_of(r)]; }
};

BaselineJoint baseline_joint_density(const BaselineModel& model, std::string_view customer_id,
                                     std::string_view article_id);

nlohmann::json to_json(const BaselineModel& model);
BaselineModel baseline_from_json(const nlohmann::json& doc);

}  // namespace sizecast
