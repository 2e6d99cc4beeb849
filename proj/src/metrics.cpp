#include "manifool/metrics.hpp"

#include "manifool/errors.hpp"
#include "manifool/parallel.hpp"
#include "manifool/text.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace manifool {

double EvalReport::recompute_rho() const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& rec : per_image) {
    if (!rec.success) continue;
    sum += rec.score;
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

std::string EvalReport::to_csv() const {
  CsvTable table({"image_id", "label", "success", "score", "new_label", "iterations", "transform"});
  for (const auto& rec : per_image) {
    table.add_row({std::to_string(rec.id), std::to_string(rec.label), rec.success ? "1" : "0",
                   rec.success ? format_double(rec.score) : "nan", std::to_string(rec.new_label),
                   std::to_string(rec.iterations), format_transform(rec.tau_hat)});
  }
  return table.str();
}

EvalReport invariance_score(const LabeledDataset& data, const ClassifierModel& model,
                            const TransformGroup& group, const AttackParams& attack,
                            const GeodesicParams& geo, int jobs) {
  if (data.empty()) throw EmptyDataset("invariance score of an empty dataset");
  data.validate(model.num_classes());
  attack.validate();

  EvalReport report;
  report.group = group;
  report.attack = attack;
  report.geodesic = geo;
  report.per_image.resize(data.size());

  parallel_for(data.size(), jobs, [&](std::size_t i) {
    ImageRecord& rec = report.per_image[i];
    rec.id = i;
    rec.label = data.labels[i];
    const int predicted = predict(model, data.images[i]);
    if (predicted != rec.label) {
      rec.success = true;
      rec.new_label = predicted;
      return;
    }
    const FoolResult fool = manifool_multiclass(data.images[i], model, group, attack, geo, 1);
    rec.success = fool.success;
    rec.score = fool.success ? fool.geodesic_score : 0.0;
    rec.new_label = fool.new_label;
    rec.iterations = fool.iterations;
    rec.tau_hat = fool.tau_hat;
  });

  for (const auto& rec : report.per_image) {
    if (!rec.success) ++report.failure_count;
  }
  if (report.failure_count == data.size()) {
    throw AllFailed("no image in the dataset yielded a fooling transformation");
  }
  report.rho_hat = report.recompute_rho();
  return report;
}

std::string RobustnessCurve::to_csv() const {
  CsvTable table({"r", "valid", "flips", "bracket_failures", "rate"});
  for (std::size_t k = 0; k < r_grid.size(); ++k) {
    table.add_row({format_double(r_grid[k]), std::to_string(valid[k]), std::to_string(flips[k]),
                   std::to_string(bracket_failures[k]),
                   valid[k] ? format_double(misclassification_rate[k]) : "nan"});
  }
  return table.str();
}

RobustnessCurve misclassification_curve(const LabeledDataset& data, const ClassifierModel& model,
                                        const TransformGroup& group,
                                        const std::vector<double>& r_grid, int reps_per_image,
                                        std::uint64_t seed, const GeodesicParams& geo, int jobs) {
  if (r_grid.empty()) throw InvalidArgument("r grid is empty");
  for (std::size_t k = 0; k < r_grid.size(); ++k) {
    if (!(r_grid[k] > 0.0) || (k > 0 && !(r_grid[k] > r_grid[k - 1]))) {
      throw InvalidArgument("r grid must be positive and strictly increasing");
    }
  }
  if (reps_per_image < 1) throw InvalidArgument("reps_per_image must be >= 1");
  if (data.empty()) throw EmptyDataset("misclassification curve of an empty dataset");

  const std::size_t points = r_grid.size();
  struct Counts {
    std::vector<std::size_t> flips, valid, failures;
  };
  std::vector<Counts> per_image(data.size());

  parallel_for(data.size(), jobs, [&](std::size_t i) {
    Counts& counts = per_image[i];
    counts.flips.assign(points, 0);
    counts.valid.assign(points, 0);
    counts.failures.assign(points, 0);
    const Image& img = data.images[i];
    const int reference = predict(model, img);
    for (std::size_t k = 0; k < points; ++k) {
      for (int rep = 0; rep < reps_per_image; ++rep) {
        // The direction depends on (image, replicate) only, so every grid
        // point probes the same rays.
        const std::uint64_t s = derive_seed(seed, i, static_cast<std::uint64_t>(rep));
        try {
          const SampledTransform sample = sample_random_transform(img, group, r_grid[k], s, geo);
          ++counts.valid[k];
          if (predict(model, warp(img, sample.transform)) != reference) ++counts.flips[k];
        } catch (const BracketFailure&) {
          ++counts.failures[k];
        } catch (const ZeroImage&) {
          ++counts.failures[k];
        }
      }
    }
  });

  RobustnessCurve curve;
  curve.r_grid = r_grid;
  curve.samples_per_point = data.size() * static_cast<std::size_t>(reps_per_image);
  curve.flips.assign(points, 0);
  curve.valid.assign(points, 0);
  curve.bracket_failures.assign(points, 0);
  curve.misclassification_rate.assign(points, 0.0);
  for (const auto& counts : per_image) {
    for (std::size_t k = 0; k < points; ++k) {
      curve.flips[k] += counts.flips[k];
      curve.valid[k] += counts.valid[k];
      curve.bracket_failures[k] += counts.failures[k];
    }
  }
  for (std::size_t k = 0; k < points; ++k) {
    curve.misclassification_rate[k] =
        curve.valid[k] ? static_cast<double>(curve.flips[k]) / static_cast<double>(curve.valid[k])
                       : std::numeric_limits<double>::quiet_NaN();
  }
  curve.r_hat = r_hat(curve);
  return curve;
}

std::optional<double> r_hat(const RobustnessCurve& curve, double threshold) {
  std::optional<std::size_t> previous;
  for (std::size_t k = 0; k < curve.r_grid.size(); ++k) {
    if (k < curve.valid.size() && curve.valid[k] == 0) continue;
    const double rate = curve.misclassification_rate[k];
    if (rate >= threshold) {
      if (!previous) return curve.r_grid[k];
      const double r0 = curve.r_grid[*previous];
      const double rate0 = curve.misclassification_rate[*previous];
      return r0 + (threshold - rate0) / (rate - rate0) * (curve.r_grid[k] - r0);
    }
    previous = k;
  }
  return std::nullopt;
}

std::optional<OracleResult> oracle_min_translation(const Image& img, const ClassifierModel& model,
                                                   int label, double search_radius,
                                                   double grid_step, const GeodesicParams& geo) {
  if (!(grid_step > 0.0) || !(search_radius >= 0.0)) {
    throw InvalidArgument("oracle needs grid_step > 0 and search_radius >= 0");
  }
  const TransformGroup group(GroupKind::Translation);
  OracleResult best;
  best.grid_epsilon = normalized_score(img, Transform::translation(grid_step, 0.0), group, geo);
  if (predict(model, img) != label) return best;

  const int steps = static_cast<int>(std::floor(search_radius / grid_step + 1e-9));
  bool found = false;
  for (int iy = -steps; iy <= steps; ++iy) {
    for (int ix = -steps; ix <= steps; ++ix) {
      if (ix == 0 && iy == 0) continue;
      const Transform t = Transform::translation(ix * grid_step, iy * grid_step);
      if (predict(model, warp(img, t)) == label) continue;
      const double score = normalized_score(img, t, group, geo);
      if (!found || score < best.score) {
        best.transform = t;
        best.score = score;
        found = true;
      }
    }
  }
  if (!found) return std::nullopt;
  return best;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = mean_rank;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("spearman needs paired samples");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace manifool
