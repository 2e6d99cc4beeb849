#pragma once

#include "manifool/classifier.hpp"
#include "manifool/geodesic.hpp"
#include "manifool/image.hpp"
#include "manifool/transform_group.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace manifool {

struct AttackParams {
  int max_iters = 50;
  double momentum = 0.5;
  double initial_step = 0.2;
  int line_search_trials = 8;
  double line_search_shrink = 0.5;
  int num_targets = 5;
  double step_floor = 1e-4;
  /// Consecutive accepted steps below step_floor before the attack gives up.
  int stall_limit = 5;
  double tangent_epsilon = kDefaultTangentEpsilon;
  /// Record the normalized score of the running transform in every trace row.
  bool trace_scores = false;

  /// Throws InvalidArgument when a bound is violated.
  void validate() const;
};

/// One iteration of a single-target attack.
struct TraceRow {
  int iteration = 0;
  int target = 0;
  double step = 0.0;       // accepted line-search step
  double g_before = 0.0;   // g at the start of the iteration
  double g_after = 0.0;    // g after the step
  bool forced = false;     // no trial step decreased g
  Coeffs u;                // applied coefficients (includes momentum)
  double running_score = std::numeric_limits<double>::quiet_NaN();
};

struct TargetOutcome {
  int label = 0;
  bool success = false;
  double score = 0.0;   // valid when success
  int iterations = 0;
  std::string failure;  // reason when !success
};

struct FoolResult {
  bool success = false;
  Transform tau_hat;
  Image fooled_image;
  int original_label = 0;
  int new_label = 0;
  double geodesic_score = 0.0;
  int iterations = 0;
  std::string failure;
  std::vector<TargetOutcome> per_target_scores;  // sorted by label
  std::vector<TraceRow> trace;                   // trace of the returned target
};

/// Evaluates g at a candidate point of the manifold.
using ScoreFn = std::function<double(const Image&)>;

struct LineSearchResult {
  double step = 0.0;
  bool forced = false;
  Coeffs u;             // step * direction + offset
  Transform transform;  // exp(u) composed after the base transform
  Image image;
  double g = 0.0;
};

/// Geometric backtracking along `direction` from the point warp(origin, base):
/// candidate u = step * direction + offset, image = warp(origin, exp(u) * base).
/// Returns the first step that strictly decreases g; the smallest trial
/// (flagged forced) when none does.
LineSearchResult line_search_step(const ScoreFn& g_eval, const Image& origin,
                                  const Transform& base, double g_current,
                                  const TangentVector& direction, const TangentVector& offset,
                                  const AttackParams& params);

/// Algorithm for one target: drives g = f_positive - f_target to the label
/// boundary by projected gradient steps on the transformation manifold.
FoolResult manifool_binary(const Image& img, const ClassifierModel& model, int positive_label,
                           int target_label, const TransformGroup& group,
                           const AttackParams& params = {}, const GeodesicParams& geo = {});

/// Attacks the top `num_targets` runner-up classes and keeps the fooling
/// transform with the smallest normalized geodesic score. `jobs` > 1 runs
/// targets concurrently; the result does not depend on it.
FoolResult manifool_multiclass(const Image& img, const ClassifierModel& model,
                               const TransformGroup& group, const AttackParams& params = {},
                               const GeodesicParams& geo = {}, int jobs = 1);

/// Rebuilds tau_hat as the product of per-iteration exp(u) factors.
Transform recompose(const std::vector<TraceRow>& trace, const TransformGroup& group);

}  // namespace manifool
