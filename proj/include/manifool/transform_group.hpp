#pragma once

#include <Eigen/Core>

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace manifool {

using Matrix3 = Eigen::Matrix3d;
using Coeffs = Eigen::VectorXd;

enum class GroupKind {
  Translation,
  RotationTranslation,
  ScaleTranslation,
  Similarity,
  Affine,
  Projective,
};

/// A matrix Lie group of planar transformations together with its canonical
/// generator basis. Generators act on centered pixel coordinates (x, y, 1).
///
/// Generator order:
///   Translation          {E02, E12}
///   RotationTranslation  {E02, E12, E10 - E01}
///   ScaleTranslation     {E02, E12, E00 + E11}
///   Similarity           {E02, E12, E10 - E01, E00 + E11}
///   Affine               {E02, E12, E00, E01, E10, E11}
///   Projective           Affine + {E20, E21}
class TransformGroup {
 public:
  explicit TransformGroup(GroupKind kind) : kind_(kind) {}

  GroupKind kind() const { return kind_; }
  int dim() const { return static_cast<int>(generators().size()); }
  const std::vector<Matrix3>& generators() const;
  bool projective() const { return kind_ == GroupKind::Projective; }

  std::string_view name() const;

  friend bool operator==(const TransformGroup& a, const TransformGroup& b) {
    return a.kind_ == b.kind_;
  }

 private:
  GroupKind kind_;
};

/// Parses the names accepted on the command line ("translation",
/// "rotation-translation", "scale-translation", "similarity", "affine",
/// "projective"). Throws InvalidArgument otherwise.
GroupKind parse_group_kind(std::string_view name);
std::string_view group_kind_name(GroupKind kind);

const std::vector<Matrix3>& generators(const TransformGroup& group);

/// Invertible 3x3 homogeneous transformation of the centered pixel plane.
class Transform {
 public:
  Transform() : matrix_(Matrix3::Identity()) {}
  explicit Transform(const Matrix3& m);

  static Transform identity() { return Transform(); }
  static Transform translation(double dx, double dy);
  static Transform rotation(double angle);

  const Matrix3& matrix() const { return matrix_; }
  Transform inverse() const;

  /// Maximum absolute entry-wise difference.
  double max_abs_diff(const Transform& other) const;

 private:
  Matrix3 matrix_;
};

/// Coefficients u_j over a group's generators.
struct TangentVector {
  TransformGroup group;
  Coeffs coeffs;

  TangentVector(TransformGroup g, Coeffs c);
  static TangentVector zero(const TransformGroup& g);
  double norm() const { return coeffs.norm(); }
};

/// exp(sum_j u_j G_j) by scaling and squaring.
Transform exp_map(const TangentVector& u);
Matrix3 matrix_exp(const Matrix3& a);

/// Principal matrix logarithm expanded in the group's generator basis.
/// Throws LogUndefined when the principal log does not exist or leaves the
/// span of the generators.
TangentVector log_map(const Transform& t, const TransformGroup& group);
Matrix3 matrix_log(const Matrix3& t);

/// The transform that applies t2 first, then t1.
Transform compose(const Transform& t1, const Transform& t2);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Throws HorizonPoint when the homogeneous coordinate vanishes.
Point apply_to_point(const Transform& t, Point p);

/// Nine numbers, row-major, whitespace separated, full round-trip precision.
std::string format_transform(const Transform& t);
Transform parse_transform(std::string_view line);

}  // namespace manifool
