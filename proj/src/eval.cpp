#include "sizecast/eval.hpp"

#include "sizecast/error.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace sizecast {

namespace {

using Days = std::chrono::days;

OrdersDataset subset(const OrdersDataset& dataset, Timestamp from, Timestamp to_exclusive, bool lower_bound) {
  OrdersDataset out;
  for (const auto& o : dataset.orders) {
    if ((!lower_bound || o.timestamp >= from) && o.timestamp < to_exclusive) out.orders.push_back(o);
  }
  out.stats.total_rows = out.stats.accepted = out.orders.size();
  return out;
}

bool keep_order(const Order& o, const std::set<std::string, std::less<>>& known, bool include_unknown) {
  return include_unknown || known.contains(o.customer_id);
}

}  // namespace

std::vector<TemporalFold> temporal_splits(const OrdersDataset& dataset, int n_folds, int gap_days, int val_days) {
  if (n_folds < 1) throw DataError("temporal_splits: need at least one fold");
  if (val_days < 1) throw DataError("temporal_splits: validation window must be at least one day");
  if (gap_days < 0) throw DataError("temporal_splits: gap must be non-negative");
  if (dataset.empty()) throw DataError("temporal_splits: empty dataset");

  const auto [lo, hi] = std::minmax_element(dataset.orders.begin(), dataset.orders.end(),
                                            [](const Order& a, const Order& b) { return a.timestamp < b.timestamp; });
  const Timestamp first = lo->timestamp;
  const Timestamp end = hi->timestamp + std::chrono::seconds{1};
  const auto required = Days{static_cast<long>(n_folds) * val_days + gap_days};
  if (hi->timestamp - first < required) {
    const double have = std::chrono::duration<double, Days::period>(hi->timestamp - first).count();
    throw DataError(fmt::format(
        "orders span {:.1f} days but {} folds x {} validation days + {} gap days require {} days", have, n_folds,
        val_days, gap_days, required.count()));
  }

  std::vector<TemporalFold> folds;
  for (int f = 0; f < n_folds; ++f) {
    TemporalFold fold;
    fold.gap_days = gap_days;
    fold.validation_start = end - Days{static_cast<long>(n_folds - f) * val_days};
    fold.validation_end = fold.validation_start + Days{val_days};
    fold.train = subset(dataset, first, fold.validation_start - Days{gap_days}, false);
    fold.validation = subset(dataset, fold.validation_start, fold.validation_end, true);
    folds.push_back(std::move(fold));
  }
  return folds;
}

std::set<std::string, std::less<>> customer_ids(const OrdersDataset& dataset) {
  std::set<std::string, std::less<>> ids;
  for (const auto& o : dataset.orders) ids.insert(o.customer_id);
  return ids;
}

std::vector<std::optional<JointTable>> validation_tables(const JointPredictor& model,
                                                         const OrdersDataset& validation) {
  std::map<std::pair<std::string_view, std::string_view>, std::size_t> first_seen;
  std::vector<std::optional<JointTable>> tables(validation.size());
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const auto& o = validation.orders[i];
    const auto [it, inserted] = first_seen.try_emplace({o.customer_id, o.article_id}, i);
    if (!inserted) {
      tables[i] = tables[it->second];
      continue;
    }
    try {
      tables[i] = model.table(o.customer_id, o.article_id);
    } catch (const DegenerateSupportError&) {
      tables[i] = std::nullopt;
    }
  }
  return tables;
}

double avg_log_joint(const TemporalFold& fold, std::span<const std::optional<JointTable>> tables,
                     bool include_unknown_customers) {
  const auto known = customer_ids(fold.train);
  CompensatedSum sum;
  std::size_t n = 0;
  for (std::size_t i = 0; i < fold.validation.size(); ++i) {
    const auto& o = fold.validation.orders[i];
    if (!keep_order(o, known, include_unknown_customers)) continue;
    sum += tables[i] ? joint_log_prob(*tables[i], o.size, o.status) : std::log(kLogProbFloor);
    ++n;
  }
  if (n == 0) throw UndefinedMetricError("avg_log_joint: no validation orders to score");
  return sum.value() / static_cast<double>(n);
}

double avg_log_joint(const JointPredictor& model, const TemporalFold& fold, bool include_unknown_customers) {
  const auto tables = validation_tables(model, fold.validation);
  return avg_log_joint(fold, tables, include_unknown_customers);
}

std::string_view to_string(ThresholdMode mode) {
  return mode == ThresholdMode::JointOnly ? "joint" : "joint+param";
}

std::vector<CurvePoint> coverage_accuracy_curve(ModelKind kind, const TemporalFold& fold,
                                                std::span<const std::optional<JointTable>> tables,
                                                std::span<const double> thresholds, ThresholdMode mode,
                                                double tau_param, bool include_unknown_customers) {
  if (mode == ThresholdMode::JointAndParam && kind != ModelKind::HBayes) {
    throw DataError("joint+param thresholding needs a model with a parameter posterior");
  }
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw DataError("coverage_accuracy_curve: thresholds must be sorted ascending");
  }
  const double param_tau = mode == ThresholdMode::JointAndParam ? tau_param : 0.0;
  const auto known = customer_ids(fold.train);
  std::vector<CurvePoint> points(thresholds.size());
  for (std::size_t k = 0; k < thresholds.size(); ++k) points[k].threshold = thresholds[k];

  for (std::size_t i = 0; i < fold.validation.size(); ++i) {
    const auto& o = fold.validation.orders[i];
    if (!keep_order(o, known, include_unknown_customers)) continue;
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      auto& p = points[k];
      ++p.total;
      if (!tables[i]) continue;
      const auto& table = *tables[i];
      const auto rec = recommend(table, thresholds[k], param_tau);
      if (rec.abstain()) continue;
      ++p.decided;
      const bool size_ok = table.grid.find(o.size) == rec.index;
      if (size_ok && predicted_status(table, rec.index) == o.status) ++p.correct;
    }
  }
  return points;
}

std::vector<CurvePoint> coverage_accuracy_curve(const JointPredictor& model, const TemporalFold& fold,
                                                std::span<const double> thresholds, ThresholdMode mode,
                                                double tau_param, bool include_unknown_customers) {
  if (mode == ThresholdMode::JointAndParam && !model.has_param_posterior()) {
    throw DataError("joint+param thresholding needs a model with a parameter posterior");
  }
  const auto tables = validation_tables(model, fold.validation);
  return coverage_accuracy_curve(model.kind(), fold, tables, thresholds, mode, tau_param,
                                 include_unknown_customers);
}

void accumulate_curve(std::vector<CurvePoint>& into, const std::vector<CurvePoint>& add) {
  if (into.empty()) {
    into = add;
    return;
  }
  if (into.size() != add.size()) throw std::invalid_argument("accumulate_curve: threshold mismatch");
  for (std::size_t k = 0; k < into.size(); ++k) {
    into[k].total += add[k].total;
    into[k].decided += add[k].decided;
    into[k].correct += add[k].correct;
  }
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 200; ++i) t.push_back(i / 200.0);
  return t;
}

std::optional<EvalReport::Aggregate> EvalReport::aggregate(ModelKind model, bool include_unknown) const {
  std::vector<double> values;
  for (const auto& m : metrics) {
    if (m.model == model && m.include_unknown == include_unknown && m.avg_log_joint) values.push_back(*m.avg_log_joint);
  }
  if (values.empty()) return std::nullopt;
  Aggregate a;
  a.folds = values.size();
  CompensatedSum s;
  for (const double v : values) s += v;
  a.mean = s.value() / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (const double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

EvalReport run_evaluation(const OrdersDataset& dataset, const Catalog& catalog, const EvalOptions& options) {
  const auto folds = temporal_splits(dataset, options.n_folds, options.gap_days, options.val_days);

  struct FoldResult {
    std::vector<FoldMetric> metrics;
    std::vector<CurveSeries> curves;
    FoldInfo info;
  };
  std::vector<FoldResult> results(folds.size());

  tbb::parallel_for(std::size_t{0}, folds.size(), [&](std::size_t f) {
    const auto& fold = folds[f];
    auto& out = results[f];
    const int fold_no = static_cast<int>(f);
    const auto known = customer_ids(fold.train);
    out.info = {fold_no, fold.train.size(), fold.validation.size(), 0, fold.validation_start, fold.validation_end};
    for (const auto& o : fold.validation.orders) {
      if (!known.contains(o.customer_id)) ++out.info.unknown_customer_orders;
    }
    if (fold.train.empty()) throw DataError(fmt::format("fold {} has no training orders", fold_no));

    const auto baseline = fit_baseline(fold.train, options.baseline);
    const auto hbayes = fit_hbayes(fold.train, catalog, options.hyper, options.fit);
    const BaselinePredictor bp(baseline, catalog);
    const HBayesPredictor hp(hbayes, catalog);

    for (const JointPredictor* model : {static_cast<const JointPredictor*>(&bp), static_cast<const JointPredictor*>(&hp)}) {
      const auto tables = validation_tables(*model, fold.validation);
      for (const bool include : {true, false}) {
        FoldMetric m{fold_no, model->kind(), include, std::nullopt, 0};
        for (const auto& o : fold.validation.orders) m.orders += keep_order(o, known, include) ? 1 : 0;
        try {
          m.avg_log_joint = avg_log_joint(fold, tables, include);
        } catch (const UndefinedMetricError&) {
        }
        out.metrics.push_back(m);
      }
      const auto modes = model->has_param_posterior()
                             ? std::vector<ThresholdMode>{ThresholdMode::JointOnly, ThresholdMode::JointAndParam}
                             : std::vector<ThresholdMode>{ThresholdMode::JointOnly};
      for (const auto mode : modes) {
        out.curves.push_back({model->kind(), mode,
                              coverage_accuracy_curve(model->kind(), fold, tables, options.thresholds, mode,
                                                      options.tau_param, options.curves_include_unknown)});
      }
    }
  });

  EvalReport report;
  report.gap_days = options.gap_days;
  report.val_days = options.val_days;
  report.tau_param = options.tau_param;
  report.curves_include_unknown = options.curves_include_unknown;
  for (auto& r : results) {
    report.folds.push_back(r.info);
    report.metrics.insert(report.metrics.end(), r.metrics.begin(), r.metrics.end());
    for (auto& series : r.curves) {
      auto it = std::find_if(report.curves.begin(), report.curves.end(), [&](const CurveSeries& s) {
        return s.model == series.model && s.mode == series.mode;
      });
      if (it == report.curves.end()) {
        report.curves.push_back(series);
      } else {
        accumulate_curve(it->points, series.points);
      }
    }
  }
  return report;
}

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path.string()));
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw DataError(fmt::format("failed writing '{}'", path.string()));
}

std::string optional_number(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

}  // namespace

void emit_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));

  const auto metrics_path = dir / "metrics.csv";
  auto metrics = open_output(metrics_path);
  metrics << "fold,model,customers,avg_log_joint\n";
  for (const auto& m : report.metrics) {
    metrics << m.fold << ',' << to_string(m.model) << ',' << (m.include_unknown ? "incl" : "excl") << ','
            << optional_number(m.avg_log_joint) << '\n';
  }
  finish(metrics, metrics_path);

  const auto curves_path = dir / "curves.csv";
  auto curves = open_output(curves_path);
  curves << "model,mode,threshold,coverage,accuracy\n";
  for (const auto& series : report.curves) {
    for (const auto& p : series.points) {
      curves << to_string(series.model) << ',' << to_string(series.mode) << ',' << format_double(p.threshold) << ','
             << format_double(p.coverage()) << ',' << optional_number(p.accuracy()) << '\n';
    }
  }
  finish(curves, curves_path);

  nlohmann::json summary;
  summary["gap_days"] = report.gap_days;
  summary["val_days"] = report.val_days;
  summary["tau_param"] = report.tau_param;
  summary["curves_include_unknown_customers"] = report.curves_include_unknown;
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : report.folds) {
    folds.push_back({{"fold", f.fold},
                     {"train_orders", f.train_orders},
                     {"validation_orders", f.validation_orders},
                     {"unknown_customer_orders", f.unknown_customer_orders},
                     {"validation_start", format_timestamp(f.validation_start)},
                     {"validation_end", format_timestamp(f.validation_end)}});
  }
  summary["folds"] = folds;
  nlohmann::json table = nlohmann::json::object();
  for (const auto model : {ModelKind::Baseline, ModelKind::HBayes}) {
    for (const bool include : {true, false}) {
      const auto agg = report.aggregate(model, include);
      table[std::string(to_string(model))][include ? "incl" : "excl"] =
          agg ? nlohmann::json{{"mean", agg->mean}, {"std", agg->std}, {"folds", agg->folds}} : nlohmann::json(nullptr);
    }
  }
  summary["avg_log_joint"] = table;

  const auto summary_path = dir / "summary.json";
  auto out = open_output(summary_path);
  out << summary.dump(2) << '\n';
  finish(out, summary_path);
}

}  // namespace sizecast
