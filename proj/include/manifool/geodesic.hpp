#pragma once

#include "manifool/image.hpp"
#include "manifool/transform_group.hpp"

#include <cstdint>

namespace manifool {

struct GeodesicParams {
  double step = 0.05;  // coefficient-space substep length
  int max_segments = 10000;
};

/// Length of the direct path t -> warp(img, exp(s * log(t))), s in [0, 1],
/// sampled every `step` in coefficient space and summed as L2 chords.
/// Throws LogUndefined, SegmentOverflow.
double geodesic_distance(const Image& img, const Transform& t, const TransformGroup& group,
                         const GeodesicParams& params = {});

/// geodesic_distance / ||img||. Throws ZeroImage for an all-zero image.
double normalized_score(const Image& img, const Transform& t, const TransformGroup& group,
                        const GeodesicParams& params = {});

struct SampledTransform {
  Transform transform;
  Coeffs direction;  // unit vector in coefficient space
  double alpha = 0.0;
  double score = 0.0;
};

/// Relative tolerance on the achieved score.
inline constexpr double kSampleTolerance = 1e-3;

/// Draws a direction uniformly on the unit sphere of coefficient space and
/// scales it until the normalized score equals `target_score`.
/// Throws BracketFailure when the score cannot be bracketed monotonically.
SampledTransform sample_random_transform(const Image& img, const TransformGroup& group,
                                         double target_score, std::uint64_t seed,
                                         const GeodesicParams& params = {});

/// Seed for replicate `replicate` of item `item`, independent of scheduling.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t item, std::uint64_t replicate);

}  // namespace manifool
