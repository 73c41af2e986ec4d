#include "support.hpp"

#include "sizecast/baseline.hpp"
#include "sizecast/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace sizecast;
using R = ReturnStatus;

namespace {

// Composite Simpson rule on [a, b].
template <class F>
double simpson(F f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Type-7 quantile, computed independently of the library.
double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double silverman(const std::vector<double>& v, double h_min) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1));
  if (v.size() < 2 || sd == 0.0) return h_min;
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return std::max(h_min, 0.9 * spread * std::pow(n, -0.2));
}

}  // namespace

TEST_CASE("bandwidth examples") {
  CHECK(kde_bandwidth(std::vector<double>{42}, 0.5) == 0.5);
  CHECK(kde_bandwidth(std::vector<double>{42, 42, 42}, 0.5) == 0.5);
  const std::vector<double> five{40, 41, 42, 43, 44};
  const double expected = 0.9 * (2.0 / 1.34) * std::pow(5.0, -0.2);
  CHECK(kde_bandwidth(five, 0.5) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.97358).epsilon(1e-5));
  CHECK(kde_bandwidth(five, 2.0) == 2.0);
}

TEST_CASE("bandwidth matches an independent Silverman oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 40);
    std::normal_distribution<double> size(42.0, 0.2 + (rng() % 30) / 10.0);
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(std::round(size(rng) * 2.0) / 2.0);
    const double h_min = 0.1 + (rng() % 10) / 10.0;
    const double h = kde_bandwidth(v, h_min);
    CHECK(h >= h_min);
    CHECK(h == doctest::Approx(silverman(v, h_min)).epsilon(1e-12));
  }
}

TEST_CASE("return probabilities") {
  auto counts = [](std::uint64_t k, std::uint64_t s, std::uint64_t b) {
    ReturnCounts c;
    c.n = {k, s, b};
    return c;
  };
  const auto uniform = return_probs(counts(0, 0, 0));
  for (double p : uniform) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const auto a = return_probs(counts(7, 1, 0));
  CHECK(std::abs(a[0] - 8.0 / 11.0) <= 1e-12);
  CHECK(std::abs(a[1] - 2.0 / 11.0) <= 1e-12);
  CHECK(std::abs(a[2] - 1.0 / 11.0) <= 1e-12);

  // n = 999, so the denominator is 1002.
  const auto b = return_probs(counts(997, 1, 1));
  CHECK(std::abs(b[0] - 998.0 / 1002.0) <= 1e-12);
  CHECK(std::abs(b[1] - 2.0 / 1002.0) <= 1e-12);
  CHECK(std::abs(b[2] - 2.0 / 1002.0) <= 1e-12);
}

TEST_CASE("return probabilities are a strictly interior simplex") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    ReturnCounts c;
    for (auto& n : c.n) n = rng() % (trial % 2 ? 10 : 100000);
    const auto p = return_probs(c);
    CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) <= 1e-12);
    for (double x : p) {
      CHECK(x > 0.0);
      CHECK(x < 1.0);
    }
  }
}

TEST_CASE("single kept order") {
  const auto ds = test::dataset({test::order("c1", "a1", 42)});
  const auto m = fit_baseline(ds);
  REQUIRE(m.customers.size() == 1);
  CHECK(m.customers.at("c1").sizes == std::vector<double>{42});
  CHECK(m.customers.at("c1").bandwidth == 0.5);
  CHECK(m.articles.at("a1").n == std::array<std::uint64_t, 3>{1, 0, 0});
  CHECK_THROWS_AS(fit_baseline(test::dataset({})), DataError);
}

TEST_CASE("kde density") {
  BaselineModel m;
  m.customers["c"] = CustomerKde{{42}, 1.0};
  m.global_sizes = CustomerKde{{40}, 1.0};
  CHECK(kde_density(m, "c", 42) == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(kde_density(m, "c", 41.5) == kde_density(m, "c", 42.5));
  CHECK(kde_density(m, "unknown", 40) == kde_density(m, "c", 42));
}

TEST_CASE("kde density is normalized and non-negative") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v;
    const int n = 1 + static_cast<int>(rng() % 20);
    std::normal_distribution<double> size(42.0, 2.0);
    for (int i = 0; i < n; ++i) v.push_back(size(rng));
    const CustomerKde k{v, kde_bandwidth(v, 0.5)};
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double a = *lo - 10 * k.bandwidth, b = *hi + 10 * k.bandwidth;
    const double mass = simpson([&](double s) { return k.pdf(s); }, a, b);
    CHECK(std::abs(mass - 1.0) <= 1e-6);
    for (double s = a; s <= b; s += 0.37) CHECK(k.pdf(s) >= 0.0);
  }
}

TEST_CASE("cold start and product structure") {
  const auto ds = test::dataset({test::order("c1", "a1", 42), test::order("c1", "a1", 43, R::TooSmall),
                                 test::order("c2", "a2", 40, R::TooBig), test::order("c2", "a2", 40)});
  const auto m = fit_baseline(ds);
  CHECK(m.global_sizes.sizes.size() == 4);
  CHECK(m.global_returns.n == std::array<std::uint64_t, 3>{2, 1, 1});

  const auto known = baseline_joint_density(m, "c1", "a1");
  CHECK(known.known_customer);
  CHECK(known.known_article);
  const auto pa = return_probs(m.articles.at("a1"));
  for (double s : {40.0, 41.5, 42.0, 43.0}) {
    for (auto r : kAllStatuses) {
      CHECK(known.joint(s, r) == doctest::Approx(m.customers.at("c1").pdf(s) * pa[index_of(r)]).epsilon(1e-14));
    }
  }

  const auto cold_customer = baseline_joint_density(m, "zz", "a1");
  CHECK_FALSE(cold_customer.known_customer);
  CHECK(cold_customer.returns == pa);
  CHECK(cold_customer.size_density.pdf(41) == doctest::Approx(m.global_sizes.pdf(41)).epsilon(1e-14));

  const auto cold_both = baseline_joint_density(m, "zz", "yy");
  CHECK_FALSE(cold_both.known_article);
  CHECK(cold_both.returns == return_probs(m.global_returns));
}

TEST_CASE("global marginal subsampling is capped and deterministic") {
  std::vector<Order> orders;
  for (int i = 0; i < 500; ++i) orders.push_back(test::order("c" + std::to_string(i % 7), "a", 40 + i % 5));
  BaselineOptions opt;
  opt.global_sample_cap = 100;
  const auto m1 = fit_baseline(test::dataset(orders), opt);
  const auto m2 = fit_baseline(test::dataset(orders), opt);
  CHECK(m1.global_sizes.sizes.size() == 100);
  CHECK(m1.global_sizes.sizes == m2.global_sizes.sizes);
  CHECK(m1.global_returns.total() == 500);
}

TEST_CASE("bandwidth floor holds for every customer") {
  std::vector<Order> orders;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 300; ++i) orders.push_back(test::order("c" + std::to_string(rng() % 30), "a", 38 + rng() % 8));
  BaselineOptions opt;
  opt.h_min = 0.7;
  const auto m = fit_baseline(test::dataset(orders), opt);
  for (const auto& [id, k] : m.customers) CHECK(k.bandwidth >= 0.7);
}

TEST_CASE("json round trip") {
  const auto ds = test::dataset({test::order("c1", "a1", 42), test::order("c1", "a1", 43.5, R::TooSmall),
                                 test::order("c2", "a2", 40, R::TooBig)});
  const auto m = fit_baseline(ds);
  const auto doc = to_json(m);
  CHECK(doc.at("kind") == "baseline");
  CHECK(doc.at("version") == kBaselineFormatVersion);
  CHECK(doc.at("customers").at("c1").at("sizes").size() == 2);
  CHECK(doc.at("articles").at("a1").at("nS") == 1);
  const auto back = baseline_from_json(doc);
  CHECK(to_json(back).dump() == doc.dump());
  CHECK_THROWS_AS(baseline_from_json(nlohmann::json{{"kind", "hbayes"}}), DataError);
}
