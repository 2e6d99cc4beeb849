#include "manifool/attack.hpp"

#include "manifool/errors.hpp"
#include "manifool/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace manifool {

void AttackParams::validate() const {
  if (max_iters < 0) throw InvalidArgument("max_iters must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (!(initial_step > 0.0)) throw InvalidArgument("initial_step must be > 0");
  if (line_search_trials < 1) throw InvalidArgument("line_search_trials must be >= 1");
  if (!(line_search_shrink > 0.0 && line_search_shrink < 1.0)) {
    throw InvalidArgument("line_search_shrink must lie in (0, 1)");
  }
  if (num_targets < 1) throw InvalidArgument("num_targets must be >= 1");
  if (!(step_floor > 0.0)) throw InvalidArgument("step_floor must be > 0");
  if (stall_limit < 1) throw InvalidArgument("stall_limit must be >= 1");
  if (!(tangent_epsilon > 0.0)) throw InvalidArgument("tangent_epsilon must be > 0");
}

LineSearchResult line_search_step(const ScoreFn& g_eval, const Image& origin,
                                  const Transform& base, double g_current,
                                  const TangentVector& direction, const TangentVector& offset,
                                  const AttackParams& params) {
  double step = params.initial_step;
  for (int trial = 0; trial < params.line_search_trials; ++trial) {
    const bool last = trial + 1 == params.line_search_trials;
    const Coeffs u = step * direction.coeffs + offset.coeffs;
    try {
      const Transform candidate = compose(exp_map(TangentVector(direction.group, u)), base);
      Image image = warp(origin, candidate);
      const double g = g_eval(image);
      if (g < g_current || last) {
        return {step, !(g < g_current), u, candidate, std::move(image), g};
      }
    } catch (const HorizonPoint&) {
      if (last) throw;
    }
    step *= params.line_search_shrink;
  }
  throw InvalidArgument("line search ran no trials");  // unreachable after validate()
}

Transform recompose(const std::vector<TraceRow>& trace, const TransformGroup& group) {
  Matrix3 product = Matrix3::Identity();
  for (const auto& row : trace) product = exp_map(TangentVector(group, row.u)).matrix() * product;
  return Transform(product);
}

namespace {

FoolResult fail(FoolResult result, std::string reason) {
  result.success = false;
  result.failure = std::move(reason);
  result.per_target_scores = {{result.per_target_scores.front().label, false, 0.0,
                               result.iterations, result.failure}};
  return result;
}

}  // namespace

FoolResult manifool_binary(const Image& img, const ClassifierModel& model, int positive_label,
                           int target_label, const TransformGroup& group,
                           const AttackParams& params, const GeodesicParams& geo) {
  params.validate();
  const int classes = model.num_classes();
  if (positive_label < 0 || positive_label >= classes || target_label < 0 ||
      target_label >= classes) {
    throw InvalidArgument("attack labels outside the model's class range");
  }
  if (positive_label == target_label) {
    throw InvalidArgument("target label must differ from the positive label");
  }

  FoolResult result;
  result.original_label = positive_label;
  result.fooled_image = img;
  result.per_target_scores = {{target_label, false, 0.0, 0, {}}};

  std::vector<double> scores = forward(model, img);
  int label = argmax(scores);
  if (label != positive_label) {
    result.success = true;
    result.new_label = label;
    result.per_target_scores.front().success = true;
    return result;
  }

  std::vector<double> weights(static_cast<std::size_t>(classes), 0.0);
  weights[static_cast<std::size_t>(positive_label)] = 1.0;
  weights[static_cast<std::size_t>(target_label)] = -1.0;
  auto g_of = [&](std::span<const double> s) {
    return s[static_cast<std::size_t>(positive_label)] - s[static_cast<std::size_t>(target_label)];
  };
  const ScoreFn g_eval = [&](const Image& x) { return g_of(forward(model, x)); };

  Transform tau;
  Image current = img;
  double g = g_of(scores);
  TangentVector momentum_term = TangentVector::zero(group);
  int stalled = 0;

  for (int iter = 0; iter < params.max_iters; ++iter) {
    const std::vector<double> grad = input_gradient(model, current, weights);
    TangentVector projected = TangentVector::zero(group);
    try {
      const TangentBasis basis = tangent_basis(img, tau, group, params.tangent_epsilon);
      projected = project_to_tangent(basis, grad);
    } catch (const DegenerateTangent& e) {
      result.tau_hat = tau;
      result.fooled_image = current;
      result.new_label = label;
      return fail(std::move(result), e.what());
    }
    const double norm = projected.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      result.tau_hat = tau;
      result.fooled_image = current;
      result.new_label = label;
      return fail(std::move(result), "projected gradient vanished");
    }
    const TangentVector direction(group, -projected.coeffs / norm);
    const TangentVector offset(group, params.momentum * momentum_term.coeffs);

    LineSearchResult step =
        line_search_step(g_eval, img, tau, g, direction, offset, params);

    TraceRow row;
    row.iteration = iter;
    row.target = target_label;
    row.step = step.step;
    row.g_before = g;
    row.g_after = step.g;
    row.forced = step.forced;
    row.u = step.u;

    tau = step.transform;
    current = std::move(step.image);
    g = step.g;
    momentum_term = TangentVector(group, step.u);
    result.iterations = iter + 1;

    scores = forward(model, current);
    label = argmax(scores);
    if (params.trace_scores) {
      try {
        row.running_score = normalized_score(img, tau, group, geo);
      } catch (const Error&) {
      }
    }
    result.trace.push_back(std::move(row));

    if (label != positive_label) break;
    stalled = step.step < params.step_floor ? stalled + 1 : 0;
    if (stalled >= params.stall_limit) {
      result.tau_hat = tau;
      result.fooled_image = current;
      result.new_label = label;
      return fail(std::move(result), "step size stalled below step_floor");
    }
  }

  result.tau_hat = tau;
  result.fooled_image = current;
  result.new_label = label;
  if (label == positive_label) {
    return fail(std::move(result), "no label change within max_iters");
  }
  try {
    result.geodesic_score = normalized_score(img, tau, group, geo);
  } catch (const Error& e) {
    return fail(std::move(result), std::string("geodesic score undefined: ") + e.what());
  }
  result.success = true;
  result.per_target_scores = {
      {target_label, true, result.geodesic_score, result.iterations, {}}};
  return result;
}

FoolResult manifool_multiclass(const Image& img, const ClassifierModel& model,
                               const TransformGroup& group, const AttackParams& params,
                               const GeodesicParams& geo, int jobs) {
  params.validate();
  const std::vector<double> scores = forward(model, img);
  const int source = argmax(scores);

  std::vector<int> ranked;
  for (int k = 0; k < model.num_classes(); ++k) {
    if (k != source) ranked.push_back(k);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  ranked.resize(std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(params.num_targets)));
  std::sort(ranked.begin(), ranked.end());

  std::vector<FoolResult> attempts(ranked.size());
  parallel_for(ranked.size(), jobs, [&](std::size_t i) {
    attempts[i] = manifool_binary(img, model, source, ranked[i], group, params, geo);
  });

  std::vector<TargetOutcome> outcomes;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < attempts.size(); ++i) {
    outcomes.push_back(attempts[i].per_target_scores.front());
    if (!attempts[i].success) continue;
    if (!best || attempts[i].geodesic_score < attempts[*best].geodesic_score) best = i;
  }

  FoolResult result;
  if (best) {
    result = std::move(attempts[*best]);
  } else {
    result.original_label = source;
    result.new_label = source;
    result.fooled_image = img;
    result.failure = "no target class could be reached";
    for (const auto& a : attempts) result.iterations = std::max(result.iterations, a.iterations);
  }
  result.per_target_scores = std::move(outcomes);
  return result;
}

}  // namespace manifool
