#pragma once

// Temporal cross-validation: folds separated from their training data by a
// return-collection gap, average log joint probability of held-out orders,
// and coverage/accuracy curves under abstention thresholds.

#include "sizecast/baseline.hpp"
#include "sizecast/domain.hpp"
#include "sizecast/hbayes.hpp"
#include "sizecast/predict.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sizecast {

struct TemporalFold {
  OrdersDataset train;
  OrdersDataset validation;
  int gap_days = 21;
  Timestamp validation_start{};
  Timestamp validation_end{};  // exclusive
};

// The last n_folds windows of val_days each; each fold trains on every order
// strictly before (window start - gap_days). Throws DataError when the
// dataset spans less than n_folds * val_days + gap_days.
std::vector<TemporalFold> temporal_splits(const OrdersDataset& dataset, int n_folds, int gap_days = 21,
                                          int val_days = 28);

class JointPredictor {
 public:
  virtual ~JointPredictor() = default;
  virtual ModelKind kind() const = 0;
  // Throws DegenerateSupportError when the pair's density misses the grid.
  virtual JointTable table(std::string_view customer_id, std::string_view article_id) const = 0;
  bool has_param_posterior() const { return kind() == ModelKind::HBayes; }
};

class BaselinePredictor final : public JointPredictor {
 public:
  BaselinePredictor(const BaselineModel& model, const Catalog& catalog) : model_(model), catalog_(catalog) {}
  ModelKind kind() const override { return ModelKind::Baseline; }
  JointTable table(std::string_view customer_id, std::string_view article_id) const override {
    return baseline_table(model_, catalog_, customer_id, article_id);
  }

 private:
  const BaselineModel& model_;
  const Catalog& catalog_;
};

class HBayesPredictor final : public JointPredictor {
 public:
  HBayesPredictor(const HBayesState& state, const Catalog& catalog) : state_(state), catalog_(catalog) {}
  ModelKind kind() const override { return ModelKind::HBayes; }
  JointTable table(std::string_view customer_id, std::string_view article_id) const override {
    return hbayes_table(state_, catalog_, customer_id, article_id);
  }

 private:
  const HBayesState& state_;
  const Catalog& catalog_;
};

std::set<std::string, std::less<>> customer_ids(const OrdersDataset& dataset);

// One table per validation order; nullopt where the density misses the grid.
std::vector<std::optional<JointTable>> validation_tables(const JointPredictor& model,
                                                         const OrdersDataset& validation);

// Mean log p(s, r) over validation orders; with include_unknown_customers
// false, orders whose customer has no training orders are skipped. Throws
// UndefinedMetricError when no order remains.
double avg_log_joint(const JointPredictor& model, const TemporalFold& fold, bool include_unknown_customers);
double avg_log_joint(const TemporalFold& fold, std::span<const std::optional<JointTable>> tables,
                     bool include_unknown_customers);

enum class ThresholdMode { JointOnly, JointAndParam };

std::string_view to_string(ThresholdMode mode);

struct CurvePoint {
  double threshold = 0.0;
  std::size_t total = 0;
  std::size_t decided = 0;
  std::size_t correct = 0;

  double coverage() const { return total == 0 ? 0.0 : static_cast<double>(decided) / static_cast<double>(total); }
  // Defined only when something was decided.
  std::optional<double> accuracy() const {
    if (decided == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(decided);
  }
};

// Sweeps tau_joint over `thresholds` (ascending); JointAndParam additionally
// requires the parameter confidence to reach tau_param. A decision is correct
// when both the recommended size and argmax_r p(s*, r) match the order.
// Throws DataError for JointAndParam on a model without parameter posterior.
std::vector<CurvePoint> coverage_accuracy_curve(const JointPredictor& model, const TemporalFold& fold,
                                                std::span<const double> thresholds, ThresholdMode mode,
                                                double tau_param = 0.0, bool include_unknown_customers = true);
std::vector<CurvePoint> coverage_accuracy_curve(ModelKind kind, const TemporalFold& fold,
                                                std::span<const std::optional<JointTable>> tables,
                                                std::span<const double> thresholds, ThresholdMode mode,
                                                double tau_param, bool include_unknown_customers);

// Pointwise sum of counts; both curves must share thresholds.
void accumulate_curve(std::vector<CurvePoint>& into, const std::vector<CurvePoint>& add);

std::vector<double> default_thresholds();

struct FoldMetric {
  int fold = 0;
  ModelKind model = ModelKind::Baseline;
  bool include_unknown = true;
  std::optional<double> avg_log_joint;  // nullopt when undefined
  std::size_t orders = 0;
};

struct CurveSeries {
  ModelKind model = ModelKind::Baseline;
  ThresholdMode mode = ThresholdMode::JointOnly;
  std::vector<CurvePoint> points;
};

struct FoldInfo {
  int fold = 0;
  std::size_t train_orders = 0;
  std::size_t validation_orders = 0;
  std::size_t unknown_customer_orders = 0;
  Timestamp validation_start{};
  Timestamp validation_end{};
};

struct EvalReport {
  std::vector<FoldMetric> metrics;
  std::vector<CurveSeries> curves;
  std::vector<FoldInfo> folds;
  int gap_days = 21;
  int val_days = 28;
  double tau_param = 0.0;
  bool curves_include_unknown = true;

  struct Aggregate {
    double mean = 0.0;
    double std = 0.0;
    std::size_t folds = 0;
  };
  // Mean and sample std of the defined per-fold values.
  std::optional<Aggregate> aggregate(ModelKind model, bool include_unknown) const;
};

struct EvalOptions {
  int n_folds = 3;
  int gap_days = 21;
  int val_days = 28;
  std::vector<double> thresholds = default_thresholds();
  double tau_param = 0.9;
  bool curves_include_unknown = true;
  BaselineOptions baseline;
  Hyperparams hyper = Hyperparams::defaults();
  FitOptions fit;
};

// Trains both models on every fold and scores them.
EvalReport run_evaluation(const OrdersDataset& dataset, const Catalog& catalog, const EvalOptions& options);

// Writes metrics.csv, curves.csv and summary.json into `dir` (created if
// missing). Throws DataError naming the path on IO failure.
void emit_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace sizecast
