#include "manifool/transform_group.hpp"

#include "manifool/errors.hpp"
#include "manifool/text.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <sstream>

namespace manifool {

namespace {

Matrix3 unit(int row, int col) {
  Matrix3 m = Matrix3::Zero();
  m(row, col) = 1.0;
  return m;
}

std::vector<Matrix3> build_generators(GroupKind kind) {
  const Matrix3 tx = unit(0, 2);
  const Matrix3 ty = unit(1, 2);
  const Matrix3 rot = unit(1, 0) - unit(0, 1);
  const Matrix3 scale = unit(0, 0) + unit(1, 1);
  switch (kind) {
    case GroupKind::Translation:
      return {tx, ty};
    case GroupKind::RotationTranslation:
      return {tx, ty, rot};
    case GroupKind::ScaleTranslation:
      return {tx, ty, scale};
    case GroupKind::Similarity:
      return {tx, ty, rot, scale};
    case GroupKind::Affine:
      return {tx, ty, unit(0, 0), unit(0, 1), unit(1, 0), unit(1, 1)};
    case GroupKind::Projective:
      return {tx,         ty,         unit(0, 0), unit(0, 1),
              unit(1, 0), unit(1, 1), unit(2, 0), unit(2, 1)};
  }
  throw InvalidArgument("unknown group kind");
}

double one_norm(const Matrix3& m) { return m.cwiseAbs().colwise().sum().maxCoeff(); }

constexpr int kTaylorOrder = 16;
constexpr double kExpScaledNorm = 0.5;
constexpr double kLogTargetNorm = 0.3;

// Denman-Beavers iteration for the principal square root.
Matrix3 principal_sqrt(const Matrix3& a) {
  Matrix3 y = a;
  Matrix3 z = Matrix3::Identity();
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::FullPivLU<Matrix3> ly(y);
    Eigen::FullPivLU<Matrix3> lz(z);
    if (!ly.isInvertible() || !lz.isInvertible()) {
      throw LogUndefined("singular iterate in matrix square root");
    }
    const Matrix3 y_next = 0.5 * (y + lz.inverse());
    const Matrix3 z_next = 0.5 * (z + ly.inverse());
    const double change = one_norm(y_next - y);
    y = y_next;
    z = z_next;
    if (change <= 1e-15 * one_norm(y)) return y;
  }
  throw LogUndefined("matrix square root did not converge");
}

}  // namespace

const std::vector<Matrix3>& TransformGroup::generators() const {
  static const std::array<std::vector<Matrix3>, 6> tables = {
      build_generators(GroupKind::Translation),
      build_generators(GroupKind::RotationTranslation),
      build_generators(GroupKind::ScaleTranslation),
      build_generators(GroupKind::Similarity),
      build_generators(GroupKind::Affine),
      build_generators(GroupKind::Projective),
  };
  return tables[static_cast<std::size_t>(kind_)];
}

std::string_view TransformGroup::name() const { return group_kind_name(kind_); }

std::string_view group_kind_name(GroupKind kind) {
  switch (kind) {
    case GroupKind::Translation:
      return "translation";
    case GroupKind::RotationTranslation:
      return "rotation-translation";
    case GroupKind::ScaleTranslation:
      return "scale-translation";
    case GroupKind::Similarity:
      return "similarity";
    case GroupKind::Affine:
      return "affine";
    case GroupKind::Projective:
      return "projective";
  }
  return "unknown";
}

GroupKind parse_group_kind(std::string_view name) {
  for (auto kind : {GroupKind::Translation, GroupKind::RotationTranslation,
                    GroupKind::ScaleTranslation, GroupKind::Similarity, GroupKind::Affine,
                    GroupKind::Projective}) {
    if (group_kind_name(kind) == name) return kind;
  }
  throw InvalidArgument("unknown transformation group '" + std::string(name) + "'");
}

const std::vector<Matrix3>& generators(const TransformGroup& group) {
  return group.generators();
}

Transform::Transform(const Matrix3& m) : matrix_(m) {
  if (!m.allFinite()) throw InvalidArgument("transform has non-finite entries");
  if (m.determinant() == 0.0) throw InvalidArgument("transform is singular");
}

Transform Transform::translation(double dx, double dy) {
  Matrix3 m = Matrix3::Identity();
  m(0, 2) = dx;
  m(1, 2) = dy;
  return Transform(m);
}

Transform Transform::rotation(double angle) {
  Matrix3 m = Matrix3::Identity();
  m(0, 0) = std::cos(angle);
  m(0, 1) = -std::sin(angle);
  m(1, 0) = std::sin(angle);
  m(1, 1) = std::cos(angle);
  return Transform(m);
}

Transform Transform::inverse() const { return Transform(matrix_.inverse()); }

double Transform::max_abs_diff(const Transform& other) const {
  return (matrix_ - other.matrix_).cwiseAbs().maxCoeff();
}

TangentVector::TangentVector(TransformGroup g, Coeffs c) : group(g), coeffs(std::move(c)) {
  if (coeffs.size() != group.dim()) {
    throw DimensionMismatch("tangent vector length does not match group dimension");
  }
  if (!coeffs.allFinite()) throw InvalidArgument("tangent vector has non-finite entries");
}

TangentVector TangentVector::zero(const TransformGroup& g) {
  return TangentVector(g, Coeffs::Zero(g.dim()));
}

Matrix3 matrix_exp(const Matrix3& a) {
  const double norm = one_norm(a);
  int squarings = 0;
  if (norm > kExpScaledNorm) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / kExpScaledNorm)));
  }
  const Matrix3 scaled = a * std::ldexp(1.0, -squarings);
  Matrix3 sum = Matrix3::Identity();
  Matrix3 term = Matrix3::Identity();
  for (int k = 1; k <= kTaylorOrder; ++k) {
    term = (term * scaled) / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

Transform exp_map(const TangentVector& u) {
  const auto& gens = u.group.generators();
  Matrix3 a = Matrix3::Zero();
  for (int j = 0; j < u.group.dim(); ++j) a += u.coeffs[j] * gens[static_cast<std::size_t>(j)];
  return Transform(matrix_exp(a));
}

Matrix3 matrix_log(const Matrix3& t) {
  Eigen::EigenSolver<Matrix3> eig(t, /*computeEigenvectors=*/false);
  for (int i = 0; i < 3; ++i) {
    const auto lambda = eig.eigenvalues()[i];
    const double scale = std::max(1.0, std::abs(lambda));
    if (std::abs(lambda.imag()) <= 1e-12 * scale && lambda.real() <= 0.0) {
      throw LogUndefined("matrix has a non-positive real eigenvalue; principal log undefined");
    }
  }

  Matrix3 x = t;
  int roots = 0;
  while (one_norm(x - Matrix3::Identity()) > kLogTargetNorm) {
    if (++roots > 60) throw LogUndefined("matrix log: square roots failed to approach identity");
    x = principal_sqrt(x);
  }

  // Mercator series for log(I + d).
  const Matrix3 d = x - Matrix3::Identity();
  Matrix3 power = d;
  Matrix3 sum = Matrix3::Zero();
  for (int k = 1; k <= 200; ++k) {
    const Matrix3 term = power / static_cast<double>(k);
    sum += (k % 2 == 1) ? term : Matrix3(-term);
    if (one_norm(term) <= 1e-18 * std::max(1.0, one_norm(sum))) break;
    power = power * d;
  }
  return sum * std::ldexp(1.0, roots);
}

TangentVector log_map(const Transform& t, const TransformGroup& group) {
  const Matrix3 log = matrix_log(t.matrix());
  const auto& gens = group.generators();
  const int d = group.dim();

  Eigen::MatrixXd gram(d, d);
  Eigen::VectorXd rhs(d);
  for (int i = 0; i < d; ++i) {
    const auto& gi = gens[static_cast<std::size_t>(i)];
    rhs[i] = gi.cwiseProduct(log).sum();
    for (int j = 0; j < d; ++j) gram(i, j) = gi.cwiseProduct(gens[static_cast<std::size_t>(j)]).sum();
  }
  Coeffs coeffs = gram.llt().solve(rhs);

  Matrix3 rebuilt = Matrix3::Zero();
  for (int j = 0; j < d; ++j) rebuilt += coeffs[j] * gens[static_cast<std::size_t>(j)];
  const double residual = (rebuilt - log).norm();
  if (residual > 1e-6 * std::max(1.0, log.norm())) {
    throw LogUndefined("matrix log lies outside the span of the group generators");
  }
  return TangentVector(group, std::move(coeffs));
}

Transform compose(const Transform& t1, const Transform& t2) {
  return Transform(t1.matrix() * t2.matrix());
}

Point apply_to_point(const Transform& t, Point p) {
  const Eigen::Vector3d h = t.matrix() * Eigen::Vector3d(p.x, p.y, 1.0);
  if (std::abs(h[2]) < 1e-12) throw HorizonPoint("point maps through the horizon");
  return {h[0] / h[2], h[1] / h[2]};
}

std::string format_transform(const Transform& t) {
  std::string out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (!out.empty()) out += ' ';
      out += format_double(t.matrix()(r, c));
    }
  }
  return out;
}

Transform parse_transform(std::string_view line) {
  std::istringstream in{std::string(line)};
  Matrix3 m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (!(in >> m(r, c))) throw FormatError("transform line needs 9 numbers");
    }
  }
  std::string extra;
  if (in >> extra) throw FormatError("transform line has trailing tokens");
  return Transform(m);
}

}  // namespace manifool
