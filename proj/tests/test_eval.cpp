#include "support.hpp"

#include "sizecast/error.hpp"
#include "sizecast/eval.hpp"
#include "sizecast/synthgen.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace sizecast;
using R = ReturnStatus;
namespace fs = std::filesystem;

namespace {

// Uniform joint table over a four-size grid.
class UniformPredictor final : public JointPredictor {
 public:
  ModelKind kind() const override { return ModelKind::Baseline; }
  JointTable table(std::string_view customer_id, std::string_view article_id) const override {
    JointTable t;
    t.grid = SizeGrid{{40, 41, 42, 43}, 1.0};
    t.probs.assign(4, {1.0 / 12, 1.0 / 12, 1.0 / 12});
    t.customer_id = customer_id;
    t.article_id = article_id;
    return t;
  }
};

// Mass peaked on (42, Kept), with a confidence that depends on the customer.
class PeakedPredictor final : public JointPredictor {
 public:
  ModelKind kind() const override { return ModelKind::HBayes; }
  JointTable table(std::string_view customer_id, std::string_view) const override {
    JointTable t;
    t.kind = ModelKind::HBayes;
    t.grid = SizeGrid{{40, 41, 42, 43}, 1.0};
    const double peak = customer_id == "c0" ? 0.7 : 0.3;
    const double rest = (1.0 - peak) / 11.0;
    t.probs.assign(4, {rest, rest, rest});
    t.probs[2][0] = peak;
    t.param_confidence = customer_id == "c0" ? 0.9 : 0.2;
    return t;
  }
};

std::vector<Order> spread_orders(std::uint64_t seed, int n, int span_days) {
  std::mt19937_64 rng(seed);
  std::vector<Order> orders;
  for (int i = 0; i < n; ++i) {
    const auto t = test::day(static_cast<int>(rng() % span_days), static_cast<int>(rng() % 86400));
    orders.push_back(test::order("c" + std::to_string(rng() % 30), "a", 40 + rng() % 4,
                                 static_cast<R>(rng() % 3), t));
  }
  return orders;
}

void check_hygiene(const OrdersDataset& ds, const std::vector<TemporalFold>& folds, int gap_days) {
  const auto gap = std::chrono::days{gap_days};
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& fold = folds[f];
    CHECK(fold.gap_days == gap_days);
    for (const auto& o : fold.train.orders) CHECK(o.timestamp + gap <= fold.validation_start);
    for (const auto& o : fold.validation.orders) {
      CHECK(o.timestamp >= fold.validation_start);
      CHECK(o.timestamp < fold.validation_end);
      for (const auto& t : fold.train.orders) CHECK(t.order_id != o.order_id);
    }
    for (std::size_t g = f + 1; g < folds.size(); ++g) {
      CHECK((fold.validation_end <= folds[g].validation_start || folds[g].validation_end <= fold.validation_start));
    }
    std::size_t expected_train = 0, expected_val = 0;
    for (const auto& o : ds.orders) {
      if (o.timestamp + gap <= fold.validation_start && o.timestamp < fold.validation_start - gap) ++expected_train;
      if (o.timestamp >= fold.validation_start && o.timestamp < fold.validation_end) ++expected_val;
    }
    CHECK(fold.train.size() == expected_train);
    CHECK(fold.validation.size() == expected_val);
  }
}

}  // namespace

TEST_CASE("temporal splits over one year") {
  const auto ds = test::dataset(spread_orders(1, 3000, 365));
  const auto folds = temporal_splits(ds, 3, 21, 28);
  REQUIRE(folds.size() == 3);
  check_hygiene(ds, folds, 21);
  CHECK(folds[0].validation_start < folds[1].validation_start);
  CHECK(folds[2].validation_end - folds[0].validation_start == std::chrono::days{84});

  const auto single = temporal_splits(ds, 1, 21, 28);
  REQUIRE(single.size() == 1);
  CHECK(single[0].validation_start == folds[2].validation_start);

  const auto short_ds = test::dataset(spread_orders(2, 100, 50));
  try {
    temporal_splits(short_ds, 3, 21, 28);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("105") != std::string::npos);
  }
  CHECK_THROWS_AS(temporal_splits(ds, 0, 21, 28), DataError);
}

TEST_CASE("fold hygiene on random timestamp sets") {
  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 60; ++trial) {
    const int folds = 1 + static_cast<int>(rng() % 4);
    const int gap = static_cast<int>(rng() % 30);
    const int val = 1 + static_cast<int>(rng() % 40);
    const int span = folds * val + gap + 1 + static_cast<int>(rng() % 200);
    const auto ds = test::dataset(spread_orders(rng(), 50 + static_cast<int>(rng() % 400), span));
    std::vector<TemporalFold> out;
    try {
      out = temporal_splits(ds, folds, gap, val);
    } catch (const DataError&) {
      continue;  // random draws may leave the span short
    }
    CHECK(out.size() == static_cast<std::size_t>(folds));
    check_hygiene(ds, out, gap);
  }
}

TEST_CASE("average log joint") {
  const auto ds = test::dataset(spread_orders(3, 400, 200));
  const auto folds = temporal_splits(ds, 2, 21, 28);
  const UniformPredictor uniform;
  for (const auto& fold : folds) {
    CHECK(avg_log_joint(uniform, fold, true) == doctest::Approx(std::log(1.0 / 12.0)).epsilon(1e-12));
  }

  TemporalFold fold;
  fold.train = test::dataset({test::order("known", "a", 41)});
  fold.validation = test::dataset({test::order("stranger", "a", 41), test::order("stranger", "a", 42)});
  CHECK_THROWS_AS(avg_log_joint(uniform, fold, false), UndefinedMetricError);
  CHECK(avg_log_joint(uniform, fold, true) == doctest::Approx(std::log(1.0 / 12.0)));
}

TEST_CASE("metric consistency and unknown-customer accounting") {
  const PeakedPredictor peaked;
  TemporalFold fold;
  fold.train = test::dataset({test::order("c0", "a", 42)});
  std::vector<Order> val(7, test::order("c0", "a", 42));
  fold.validation = test::dataset(val);
  CHECK(avg_log_joint(peaked, fold, true) == doctest::Approx(std::log(0.7)).epsilon(1e-14));

  fold.validation = test::dataset({test::order("c0", "a", 42), test::order("c9", "a", 42), test::order("c9", "a", 41)});
  const double excl = avg_log_joint(peaked, fold, false);
  CHECK(excl == doctest::Approx(std::log(0.7)).epsilon(1e-14));
  const double incl = avg_log_joint(peaked, fold, true);
  CHECK(incl == doctest::Approx((std::log(0.7) + std::log(0.3) + std::log(0.7 / 11.0)) / 3.0).epsilon(1e-14));
}

TEST_CASE("coverage accuracy curves") {
  TemporalFold fold;
  fold.train = test::dataset({test::order("c0", "a", 42), test::order("c1", "a", 42)});
  fold.validation = test::dataset({test::order("c0", "a", 42), test::order("c0", "a", 42, R::TooBig),
                                   test::order("c1", "a", 42), test::order("c2", "a", 41)});
  const PeakedPredictor peaked;
  const std::vector<double> thresholds{0.0, 0.3, 0.5, 0.7, 0.8};
  const auto joint = coverage_accuracy_curve(peaked, fold, thresholds, ThresholdMode::JointOnly);
  REQUIRE(joint.size() == 5);
  CHECK(joint[0].coverage() == 1.0);
  CHECK(*joint[0].accuracy() == 0.5);
  CHECK(joint[2].coverage() == 0.5);
  CHECK(*joint[2].accuracy() == 0.5);
  CHECK(joint[4].coverage() == 0.0);
  CHECK_FALSE(joint[4].accuracy().has_value());

  const auto both = coverage_accuracy_curve(peaked, fold, thresholds, ThresholdMode::JointAndParam, 0.5);
  CHECK(both[0].coverage() == 0.5);
  const auto excl = coverage_accuracy_curve(peaked, fold, thresholds, ThresholdMode::JointOnly, 0.0, false);
  CHECK(excl[0].total == 3);

  const UniformPredictor uniform;
  CHECK_THROWS_AS(coverage_accuracy_curve(uniform, fold, thresholds, ThresholdMode::JointAndParam, 0.5), DataError);
  const std::vector<double> unsorted{0.5, 0.1};
  CHECK_THROWS_AS(coverage_accuracy_curve(peaked, fold, unsorted, ThresholdMode::JointOnly), DataError);

  auto pooled = joint;
  accumulate_curve(pooled, joint);
  CHECK(pooled[0].total == 8);
  CHECK(pooled[2].coverage() == joint[2].coverage());
}

TEST_CASE("evaluation on synthetic data") {
  SynthConfig cfg;
  cfg.n_customers = 80;
  cfg.n_articles = 15;
  cfg.n_orders = 5000;
  cfg.seed = 3;
  const auto data = sample_dataset(cfg);
  EvalOptions opt;
  opt.n_folds = 2;
  const auto report = run_evaluation(data.dataset, data.catalog, opt);
  CHECK(report.metrics.size() == 8);
  REQUIRE(report.curves.size() == 3);
  for (const auto& series : report.curves) {
    if (series.mode == ThresholdMode::JointOnly) CHECK(series.points.front().coverage() == 1.0);
    for (std::size_t i = 1; i < series.points.size(); ++i) {
      CHECK(series.points[i].coverage() <= series.points[i - 1].coverage());
    }
  }
  const auto splits = temporal_splits(data.dataset, 2, 21, 28);
  for (const auto& f : report.folds) {
    const auto& fold = splits[static_cast<std::size_t>(f.fold)];
    const auto known = customer_ids(fold.train);
    std::size_t unknown = 0;
    for (const auto& o : fold.validation.orders) unknown += known.contains(o.customer_id) ? 0 : 1;
    CHECK(f.unknown_customer_orders == unknown);
  }

  // Coverage is monotone in the parameter threshold too.
  const auto folds = temporal_splits(data.dataset, 1, 21, 28);
  const auto state = fit_hbayes(folds[0].train, data.catalog, opt.hyper, {});
  const HBayesPredictor hb(state, data.catalog);
  const auto tables = validation_tables(hb, folds[0].validation);
  double last = 1.0;
  for (double tp = 0.0; tp <= 1.0; tp += 0.05) {
    const std::vector<double> th{0.05};
    const auto c = coverage_accuracy_curve(ModelKind::HBayes, folds[0], tables, th, ThresholdMode::JointAndParam,
                                           tp, true);
    CHECK(c[0].coverage() <= last);
    last = c[0].coverage();
  }

  const auto dir = fs::temp_directory_path() / "sizecast_eval_test";
  fs::remove_all(dir);
  emit_report(report, dir / "a");
  emit_report(report, dir / "b");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  for (const char* name : {"metrics.csv", "curves.csv", "summary.json"}) {
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  }
  std::istringstream metrics(slurp(dir / "a" / "metrics.csv"));
  std::string line;
  std::getline(metrics, line);
  CHECK(line == "fold,model,customers,avg_log_joint");
  int rows = 0;
  while (std::getline(metrics, line)) ++rows;
  CHECK(rows == 8);
  std::istringstream curves(slurp(dir / "a" / "curves.csv"));
  std::getline(curves, line);
  CHECK(line == "model,mode,threshold,coverage,accuracy");
  fs::remove_all(dir);
}
