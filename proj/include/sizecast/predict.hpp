#pragma once

#include "sizecast/baseline.hpp"
#include "sizecast/domain.hpp"
#include "sizecast/hbayes.hpp"
#include "sizecast/mixture.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sizecast {

enum class ModelKind { Baseline, HBayes };

std::string_view to_string(ModelKind kind);

// Discrete joint p(size_i, status) over an article's grid.
struct JointTable {
  SizeGrid grid;
  std::vector<Simplex3> probs;  // one row per grid size
  ModelKind kind = ModelKind::Baseline;
  std::string customer_id;
  std::string article_id;
  std::optional<double> param_confidence;  // HBayes tables only

  double at(std::size_t i, ReturnStatus r) const { return probs[i][index_of(r)]; }
  double total() const;
};

// Window mass of f over [s_i - step/2, s_i + step/2], renormalized over the
// grid span and scaled by p(r). Throws DegenerateSupportError when f has
// (numerically) no mass on the grid span.
JointTable discretize(const GaussianMixture& f, const Simplex3& returns, const SizeGrid& grid);
// Status-conditional densities: f_by_status[r] is p(s | r).
JointTable discretize(const std::array<GaussianMixture, 3>& f_by_status, const Simplex3& returns,
                      const SizeGrid& grid);

inline constexpr double kDegenerateSupport = 1e-300;

struct Recommendation {
  std::optional<double> size;  // nullopt = abstain
  std::size_t index = 0;       // argmax grid index (valid even when abstaining)
  double p_kept = 0.0;         // p(s*, Kept)
  double tau_joint = 0.0;
  double tau_param = 0.0;
  std::optional<double> confidence;

  bool abstain() const { return !size.has_value(); }
};

// argmax_s p(s, Kept), ties to the smaller size; abstains when p(s*, Kept) <
// tau_joint or, for tables carrying a parameter confidence, confidence < tau_param.
Recommendation recommend(const JointTable& table, double tau_joint, double tau_param);

// Abstention for a pair whose table could not be formed.
Recommendation abstention(double tau_joint, double tau_param, std::optional<double> confidence);

inline constexpr double kLogProbFloor = 1e-12;

// log p(s, r), floored at log(1e-12). Throws DataError if s is not on the grid.
double joint_log_prob(const JointTable& table, double s, ReturnStatus r);

// argmax_r p(s_i, r), ties toward Kept, then TooSmall.
ReturnStatus predicted_status(const JointTable& table, std::size_t i);

JointTable baseline_table(const BaselineModel& model, const Catalog& catalog, std::string_view customer_id,
                          std::string_view article_id);
JointTable hbayes_table(const HBayesState& state, const Catalog& catalog, std::string_view customer_id,
                        std::string_view article_id);

nlohmann::json recommendation_json(const Recommendation& rec, std::string_view customer_id,
                                   std::string_view article_id);

}  // namespace sizecast
