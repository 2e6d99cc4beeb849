#pragma once

#include "manifool/attack.hpp"
#include "manifool/classifier.hpp"
#include "manifool/geodesic.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace manifool {

struct ImageRecord {
  std::size_t id = 0;
  int label = 0;
  bool success = false;
  double score = 0.0;  // normalized geodesic score; 0 when already misclassified
  int new_label = 0;
  int iterations = 0;
  Transform tau_hat;
};

struct EvalReport {
  double rho_hat = 0.0;
  std::vector<ImageRecord> per_image;
  std::size_t failure_count = 0;
  TransformGroup group{GroupKind::Translation};
  AttackParams attack;
  GeodesicParams geodesic;

  /// Mean score over successful records.
  double recompute_rho() const;
  std::string to_csv() const;
};

/// Empirical invariance score: mean minimal fooling score over the dataset.
/// Images the model already misclassifies contribute 0. Throws AllFailed
/// when no image could be fooled.
EvalReport invariance_score(const LabeledDataset& data, const ClassifierModel& model,
                            const TransformGroup& group, const AttackParams& attack = {},
                            const GeodesicParams& geo = {}, int jobs = 1);

struct RobustnessCurve {
  std::vector<double> r_grid;
  std::vector<std::size_t> flips;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> bracket_failures;
  std::vector<double> misclassification_rate;
  std::size_t samples_per_point = 0;
  std::optional<double> r_hat;

  std::string to_csv() const;
};

/// Fraction of random transforms of score r that change the predicted label,
/// for every r in the grid. Samples whose score cannot be bracketed are left
/// out of the denominator.
RobustnessCurve misclassification_curve(const LabeledDataset& data, const ClassifierModel& model,
                                        const TransformGroup& group,
                                        const std::vector<double>& r_grid, int reps_per_image,
                                        std::uint64_t seed, const GeodesicParams& geo = {},
                                        int jobs = 1);

/// Smallest r whose rate reaches `threshold`, linearly interpolated between
/// bracketing grid points; nullopt if never reached.
std::optional<double> r_hat(const RobustnessCurve& curve, double threshold = 0.5);

struct OracleResult {
  Transform transform;
  double score = 0.0;
  double grid_epsilon = 0.0;  // score of a single grid_step translation
};

/// Exhaustive scan of translations on a grid_step lattice within
/// [-radius, radius]^2 for the label-changing one with the smallest score.
std::optional<OracleResult> oracle_min_translation(const Image& img, const ClassifierModel& model,
                                                   int label, double search_radius = 12.0,
                                                   double grid_step = 1.0,
                                                   const GeodesicParams& geo = {});

double median(std::vector<double> values);
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace manifool
