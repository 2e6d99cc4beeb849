#include "manifool/geodesic.hpp"

#include "manifool/errors.hpp"

#include <cmath>
#include <random>

namespace manifool {

double geodesic_distance(const Image& img, const Transform& t, const TransformGroup& group,
                         const GeodesicParams& params) {
  if (!(params.step > 0.0)) throw InvalidArgument("geodesic step must be positive");
  const TangentVector v1 = log_map(t, group);
  const double length = v1.norm();
  const Image target = warp(img, t);
  if (length == 0.0) return l2_distance(target, img);

  const double segments = std::floor(length / params.step);
  if (segments > params.max_segments) {
    throw SegmentOverflow("direct path needs " + std::to_string(static_cast<long long>(segments)) +
                          " segments (max " + std::to_string(params.max_segments) + ")");
  }
  const int n = static_cast<int>(segments);
  const Coeffs unit_step = v1.coeffs * (params.step / length);

  double total = 0.0;
  Image previous = img;
  for (int i = 1; i <= n; ++i) {
    Image current = warp(img, exp_map(TangentVector(group, unit_step * static_cast<double>(i))));
    total += l2_distance(current, previous);
    previous = std::move(current);
  }
  return total + l2_distance(target, previous);
}

double normalized_score(const Image& img, const Transform& t, const TransformGroup& group,
                        const GeodesicParams& params) {
  const double norm = l2_norm(img);
  if (norm == 0.0) throw ZeroImage("normalized score of an all-zero image");
  return geodesic_distance(img, t, group, params) / norm;
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t item, std::uint64_t replicate) {
  // splitmix64 finalizer over the packed (root, item, replicate) triple.
  std::uint64_t z = root ^ (item * 0x9E3779B97F4A7C15ull) ^ (replicate * 0xD1B54A32D192ED03ull);
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

SampledTransform sample_random_transform(const Image& img, const TransformGroup& group,
                                         double target_score, std::uint64_t seed,
                                         const GeodesicParams& params) {
  if (!(target_score > 0.0)) throw InvalidArgument("target score must be positive");
  if (l2_norm(img) == 0.0) throw ZeroImage("cannot sample transforms of an all-zero image");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Coeffs direction(group.dim());
  do {
    for (int j = 0; j < group.dim(); ++j) direction[j] = normal(rng);
  } while (direction.norm() == 0.0);
  direction /= direction.norm();

  auto transform_at = [&](double alpha) {
    return exp_map(TangentVector(group, direction * alpha));
  };
  auto score_at = [&](double alpha) {
    Transform t;
    try {
      t = transform_at(alpha);
    } catch (const InvalidArgument& e) {
      // Far along the ray exp() overflows or its determinant underflows.
      throw BracketFailure(std::string("transform not representable along the ray: ") + e.what());
    }
    try {
      return normalized_score(img, t, group, params);
    } catch (const LogUndefined& e) {
      throw BracketFailure(std::string("score undefined along the ray: ") + e.what());
    } catch (const SegmentOverflow& e) {
      throw BracketFailure(std::string("score undefined along the ray: ") + e.what());
    } catch (const HorizonPoint& e) {
      throw BracketFailure(std::string("score undefined along the ray: ") + e.what());
    }
  };
  const double tol = kSampleTolerance * target_score;

  constexpr double kInitialAlpha = 0.1;
  double lo = 0.0;
  double lo_score = 0.0;
  double hi = kInitialAlpha;
  double hi_score = score_at(hi);

  if (hi_score >= target_score) {
    // Shrink toward the identity until the score drops below the target.
    while (hi_score - target_score > tol) {
      const double half = 0.5 * hi;
      const double half_score = score_at(half);
      if (half_score > hi_score) throw BracketFailure("score not monotone along the ray");
      if (half_score < target_score) {
        lo = half;
        lo_score = half_score;
        break;
      }
      hi = half;
      hi_score = half_score;
      if (hi < 1e-300) throw BracketFailure("score does not vanish at the identity");
    }
  } else {
    const double alpha_max = std::ldexp(kInitialAlpha, 40);
    while (hi_score < target_score) {
      if (std::abs(hi_score - target_score) <= tol) break;
      lo = hi;
      lo_score = hi_score;
      hi *= 2.0;
      if (hi > alpha_max) throw BracketFailure("score never reached the target along the ray");
      hi_score = score_at(hi);
      if (hi_score < lo_score) throw BracketFailure("score not monotone along the ray");
    }
  }

  double alpha = hi;
  double score = hi_score;
  if (std::abs(lo_score - target_score) < std::abs(score - target_score) && lo > 0.0) {
    alpha = lo;
    score = lo_score;
  }
  for (int iter = 0; iter < 200 && std::abs(score - target_score) > tol; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double mid_score = score_at(mid);
    if (mid_score < lo_score || mid_score > hi_score) {
      throw BracketFailure("score not monotone along the ray");
    }
    if (mid_score < target_score) {
      lo = mid;
      lo_score = mid_score;
    } else {
      hi = mid;
      hi_score = mid_score;
    }
    alpha = mid;
    score = mid_score;
  }
  if (std::abs(score - target_score) > tol) {
    throw BracketFailure("bisection did not reach the target score");
  }
  return {transform_at(alpha), direction, alpha, score};
}

}  // namespace manifool
