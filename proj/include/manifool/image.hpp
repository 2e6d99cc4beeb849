#pragma once

#include "manifool/transform_group.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

namespace manifool {

/// Grayscale raster, row-major, intensities nominally in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height);
  Image(int width, int height, std::vector<double> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }

  double at(int col, int row) const { return pixels_[index(col, row)]; }
  double& at(int col, int row) { return pixels_[index(col, row)]; }

  std::span<const double> pixels() const { return pixels_; }
  std::span<double> pixels() { return pixels_; }

  bool same_shape(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int col, int row) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> pixels_;
};

/// Centered coordinates of pixel (col, row): origin at the image center.
Point pixel_to_centered(const Image& img, double col, double row);

/// Backward bilinear warp: output(p) = img(t^-1(p)), zero outside the frame.
Image warp(const Image& img, const Transform& t);

double l2_norm(const Image& img);
/// ||a - b||_2; images must share a shape.
double l2_distance(const Image& a, const Image& b);

/// Columns are d(warp)/du_j, one per generator, for the image
/// warp(origin, base). Built from central differences through the full warp.
struct TangentBasis {
  Eigen::MatrixXd columns;  // n x d
  TransformGroup group;
};

inline constexpr double kDefaultTangentEpsilon = 0.05;

/// Throws DegenerateTangent when J^T J is (numerically) singular.
TangentBasis tangent_basis(const Image& img, const TransformGroup& group,
                           double epsilon = kDefaultTangentEpsilon);
TangentBasis tangent_basis(const Image& origin, const Transform& base,
                           const TransformGroup& group, double epsilon = kDefaultTangentEpsilon);

/// Least-squares coefficients J^+ grad via the normal equations.
TangentVector project_to_tangent(const TangentBasis& basis, std::span<const double> grad);

/// Central differences in the interior, one-sided at the borders.
std::pair<Image, Image> spatial_gradient(const Image& img);

/// Binary PGM (P5, maxval <= 255); intensities scaled to [0, 1].
Image read_pgm(std::istream& in);
Image read_pgm(const std::filesystem::path& path);
void write_pgm(std::ostream& out, const Image& img);
void write_pgm(const std::filesystem::path& path, const Image& img);

}  // namespace manifool
