#include "sizecast/predict.hpp"

#include "sizecast/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace sizecast {

std::string_view to_string(ModelKind kind) { return kind == ModelKind::Baseline ? "baseline" : "hbayes"; }

double JointTable::total() const {
  CompensatedSum s;
  for (const auto& row : probs) {
    for (const double p : row) s += p;
  }
  return s.value();
}

namespace {

// Per-cell window masses of f normalized over the grid span.
std::vector<double> window_masses(const GaussianMixture& f, const SizeGrid& grid) {
  const double half = 0.5 * grid.step;
  std::vector<double> cells(grid.size());
  CompensatedSum total;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    cells[i] = f.interval_mass(grid.sizes[i] - half, grid.sizes[i] + half);
    total += cells[i];
  }
  // The cell windows tile [s_1 - step/2, s_k + step/2], so their sum is the
  // normalizer.
  const double denom = total.value();
  if (!(denom >= kDegenerateSupport)) {
    throw DegenerateSupportError(fmt::format("density has no mass on the grid [{}, {}]",
                                             grid.sizes.front() - half, grid.sizes.back() + half));
  }
  for (auto& c : cells) c /= denom;
  return cells;
}

}  // namespace

JointTable discretize(const GaussianMixture& f, const Simplex3& returns, const SizeGrid& grid) {
  const auto cells = window_masses(f, grid);
  JointTable t;
  t.grid = grid;
  t.probs.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t r = 0; r < 3; ++r) t.probs[i][r] = returns[r] * cells[i];
  }
  return t;
}

JointTable discretize(const std::array<GaussianMixture, 3>& f_by_status, const Simplex3& returns,
                      const SizeGrid& grid) {
  JointTable t;
  t.grid = grid;
  t.probs.assign(grid.size(), Simplex3{});
  for (std::size_t r = 0; r < 3; ++r) {
    if (returns[r] == 0.0) continue;
    const auto cells = window_masses(f_by_status[r], grid);
    for (std::size_t i = 0; i < grid.size(); ++i) t.probs[i][r] = returns[r] * cells[i];
  }
  return t;
}

Recommendation recommend(const JointTable& table, double tau_joint, double tau_param) {
  Recommendation rec;
  rec.tau_joint = tau_joint;
  rec.tau_param = tau_param;
  rec.confidence = table.param_confidence;
  std::size_t best = 0;
  for (std::size_t i = 1; i < table.grid.size(); ++i) {
    if (table.at(i, ReturnStatus::Kept) > table.at(best, ReturnStatus::Kept)) best = i;
  }
  rec.index = best;
  rec.p_kept = table.at(best, ReturnStatus::Kept);
  bool ok = rec.p_kept >= tau_joint;
  if (table.param_confidence && *table.param_confidence < tau_param) ok = false;
  if (ok) rec.size = table.grid.sizes[best];
  return rec;
}

Recommendation abstention(double tau_joint, double tau_param, std::optional<double> confidence) {
  Recommendation rec;
  rec.tau_joint = tau_joint;
  rec.tau_param = tau_param;
  rec.confidence = confidence;
  return rec;
}

double joint_log_prob(const JointTable& table, double s, ReturnStatus r) {
  const auto i = table.grid.find(s);
  if (!i) {
    throw DataError(fmt::format("size {} is not on the grid of article '{}'", format_double(s), table.article_id));
  }
  return std::log(std::max(table.at(*i, r), kLogProbFloor));
}

ReturnStatus predicted_status(const JointTable& table, std::size_t i) {
  ReturnStatus best = ReturnStatus::Kept;
  for (const auto r : kAllStatuses) {
    if (table.at(i, r) > table.at(i, best)) best = r;
  }
  return best;
}

JointTable baseline_table(const BaselineModel& model, const Catalog& catalog, std::string_view customer_id,
                          std::string_view article_id) {
  const auto grid = size_grid(catalog.at(article_id));
  const auto joint = baseline_joint_density(model, customer_id, article_id);
  auto t = discretize(joint.size_density, joint.returns, grid);
  t.kind = ModelKind::Baseline;
  t.customer_id = std::string(customer_id);
  t.article_id = std::string(article_id);
  return t;
}

JointTable hbayes_table(const HBayesState& state, const Catalog& catalog, std::string_view customer_id,
                        std::string_view article_id) {
  const auto grid = size_grid(catalog.at(article_id));
  std::array<GaussianMixture, 3> f;
  for (const auto r : kAllStatuses) {
    f[index_of(r)] = predictive_size_density(state, catalog, customer_id, article_id, r);
  }
  auto t = discretize(f, predictive_return_probs(state, catalog, article_id), grid);
  t.kind = ModelKind::HBayes;
  t.customer_id = std::string(customer_id);
  t.article_id = std::string(article_id);
  t.param_confidence = param_confidence(state, catalog, customer_id, article_id);
  return t;
}

nlohmann::json recommendation_json(const Recommendation& rec, std::string_view customer_id,
                                   std::string_view article_id) {
  nlohmann::json j;
  j["customer_id"] = customer_id;
  j["article_id"] = article_id;
  if (rec.size) {
    j["decision"] = *rec.size;
  } else {
    j["decision"] = "abstain";
  }
  j["p_kept"] = rec.p_kept;
  j["tau_joint"] = rec.tau_joint;
  j["tau_param"] = rec.tau_param;
  j["confidence"] = rec.confidence ? nlohmann::json(*rec.confidence) : nlohmann::json(nullptr);
  return j;
}

}  // namespace sizecast
