#include "manifool/image.hpp"

#include "manifool/errors.hpp"
#include "manifool/text.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace manifool {

Image::Image(int width, int height)
    : Image(width, height,
            std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                static_cast<std::size_t>(std::max(height, 0)))) {}

Image::Image(int width, int height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width <= 0 || height <= 0) throw InvalidArgument("image dimensions must be positive");
  if (pixels_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw DimensionMismatch("pixel count does not match width * height");
  }
  for (double v : pixels_) {
    if (!std::isfinite(v)) throw InvalidArgument("image contains non-finite pixels");
  }
}

Point pixel_to_centered(const Image& img, double col, double row) {
  return {col - 0.5 * (img.width() - 1), row - 0.5 * (img.height() - 1)};
}

namespace {

// Affine matrices are inverted in closed form so the bottom row stays exact.
Matrix3 inverse_matrix(const Matrix3& m) {
  if (m(2, 0) != 0.0 || m(2, 1) != 0.0 || m(2, 2) != 1.0) return m.inverse();
  const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  Matrix3 inv = Matrix3::Identity();
  inv(0, 0) = m(1, 1) / det;
  inv(0, 1) = -m(0, 1) / det;
  inv(1, 0) = -m(1, 0) / det;
  inv(1, 1) = m(0, 0) / det;
  inv(0, 2) = -(inv(0, 0) * m(0, 2) + inv(0, 1) * m(1, 2));
  inv(1, 2) = -(inv(1, 0) * m(0, 2) + inv(1, 1) * m(1, 2));
  return inv;
}

}  // namespace

Image warp(const Image& img, const Transform& t) {
  const Matrix3 inv = inverse_matrix(t.matrix());
  const int w = img.width();
  const int h = img.height();
  const double cx = 0.5 * (w - 1);
  const double cy = 0.5 * (h - 1);
  const auto src = img.pixels();
  const bool affine = inv(2, 0) == 0.0 && inv(2, 1) == 0.0 && inv(2, 2) == 1.0;

  auto sample = [&](int col, int row) -> double {
    if (col < 0 || col >= w || row < 0 || row >= h) return 0.0;
    return src[static_cast<std::size_t>(row) * static_cast<std::size_t>(w) +
               static_cast<std::size_t>(col)];
  };

  Image out(w, h);
  auto dst = out.pixels();
  for (int row = 0; row < h; ++row) {
    const double y = row - cy;
    for (int col = 0; col < w; ++col) {
      const double x = col - cx;
      double sx = inv(0, 0) * x + inv(0, 1) * y + inv(0, 2);
      double sy = inv(1, 0) * x + inv(1, 1) * y + inv(1, 2);
      if (!affine) {
        const double hw = inv(2, 0) * x + inv(2, 1) * y + inv(2, 2);
        if (std::abs(hw) < 1e-12) throw HorizonPoint("warp maps a pixel through the horizon");
        sx /= hw;
        sy /= hw;
      }
      sx += cx;
      sy += cy;
      if (!(sx > -1.0 && sx < w && sy > -1.0 && sy < h)) continue;
      const double fx0 = std::floor(sx);
      const double fy0 = std::floor(sy);
      const double ax = sx - fx0;
      const double ay = sy - fy0;
      const int x0 = static_cast<int>(fx0);
      const int y0 = static_cast<int>(fy0);
      dst[static_cast<std::size_t>(row) * static_cast<std::size_t>(w) +
          static_cast<std::size_t>(col)] =
          (1.0 - ay) * ((1.0 - ax) * sample(x0, y0) + ax * sample(x0 + 1, y0)) +
          ay * ((1.0 - ax) * sample(x0, y0 + 1) + ax * sample(x0 + 1, y0 + 1));
    }
  }
  return out;
}

double l2_norm(const Image& img) {
  double sum = 0.0;
  for (double v : img.pixels()) sum += v * v;
  return std::sqrt(sum);
}

double l2_distance(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("image shapes differ");
  double sum = 0.0;
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = pa[i] - pb[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

namespace {

void check_conditioning(const Eigen::MatrixXd& gram) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double smallest = eig.eigenvalues().minCoeff();
  const double largest = eig.eigenvalues().maxCoeff();
  if (!(smallest >= 1e-12) || largest / smallest > 1e12) {
    throw DegenerateTangent("tangent basis is rank deficient (J^T J singular or ill-conditioned)");
  }
}

}  // namespace

TangentBasis tangent_basis(const Image& img, const TransformGroup& group, double epsilon) {
  return tangent_basis(img, Transform::identity(), group, epsilon);
}

TangentBasis tangent_basis(const Image& origin, const Transform& base, const TransformGroup& group,
                           double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("tangent epsilon must be positive");
  const int d = group.dim();
  const auto n = static_cast<Eigen::Index>(origin.size());
  TangentBasis basis{Eigen::MatrixXd(n, d), group};
  for (int j = 0; j < d; ++j) {
    Coeffs step = Coeffs::Zero(d);
    step[j] = epsilon;
    const Image plus = warp(origin, compose(exp_map(TangentVector(group, step)), base));
    const Image minus = warp(origin, compose(exp_map(TangentVector(group, -step)), base));
    const auto pp = plus.pixels();
    const auto pm = minus.pixels();
    for (Eigen::Index i = 0; i < n; ++i) {
      basis.columns(i, j) =
          (pp[static_cast<std::size_t>(i)] - pm[static_cast<std::size_t>(i)]) / (2.0 * epsilon);
    }
  }
  check_conditioning(basis.columns.transpose() * basis.columns);
  return basis;
}

TangentVector project_to_tangent(const TangentBasis& basis, std::span<const double> grad) {
  if (static_cast<Eigen::Index>(grad.size()) != basis.columns.rows()) {
    throw DimensionMismatch("gradient length does not match tangent basis rows");
  }
  const Eigen::Map<const Eigen::VectorXd> g(grad.data(), static_cast<Eigen::Index>(grad.size()));
  const Eigen::MatrixXd gram = basis.columns.transpose() * basis.columns;
  check_conditioning(gram);
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) throw DegenerateTangent("J^T J is not positive definite");
  return TangentVector(basis.group, llt.solve(basis.columns.transpose() * g));
}

std::pair<Image, Image> spatial_gradient(const Image& img) {
  const int w = img.width();
  const int h = img.height();
  if (w < 3 || h < 3) throw InvalidArgument("spatial_gradient needs an image of at least 3x3");
  Image gx(w, h);
  Image gy(w, h);
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      if (col == 0) {
        gx.at(col, row) = img.at(1, row) - img.at(0, row);
      } else if (col == w - 1) {
        gx.at(col, row) = img.at(w - 1, row) - img.at(w - 2, row);
      } else {
        gx.at(col, row) = 0.5 * (img.at(col + 1, row) - img.at(col - 1, row));
      }
      if (row == 0) {
        gy.at(col, row) = img.at(col, 1) - img.at(col, 0);
      } else if (row == h - 1) {
        gy.at(col, row) = img.at(col, h - 1) - img.at(col, h - 2);
      } else {
        gy.at(col, row) = 0.5 * (img.at(col, row + 1) - img.at(col, row - 1));
      }
    }
  }
  return {std::move(gx), std::move(gy)};
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  if (token.empty()) throw FormatError("PGM header truncated");
  return token;
}

int pgm_int(std::istream& in, const char* what) {
  const std::string token = pgm_token(in);
  try {
    std::size_t used = 0;
    const int value = std::stoi(token, &used);
    if (used != token.size() || value <= 0) throw FormatError("");
    return value;
  } catch (const std::exception&) {
    throw FormatError(std::string("PGM header: invalid ") + what + " '" + token + "'");
  }
}

}  // namespace

Image read_pgm(std::istream& in) {
  if (pgm_token(in) != "P5") throw FormatError("not a binary PGM (expected P5 magic)");
  const int w = pgm_int(in, "width");
  const int h = pgm_int(in, "height");
  const int maxval = pgm_int(in, "maxval");
  if (maxval > 255) throw FormatError("only 8-bit PGM (maxval <= 255) is supported");
  // pgm_token consumed exactly one whitespace byte after maxval.
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw FormatError("PGM pixel data truncated");
  }
  std::vector<double> pixels(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    pixels[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
  }
  return Image(w, h, std::move(pixels));
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return read_pgm(in);
}

void write_pgm(std::ostream& out, const Image& img) {
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::string raw;
  raw.reserve(img.size());
  for (double v : img.pixels()) {
    raw.push_back(static_cast<char>(
        static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ostringstream buf;
  write_pgm(buf, img);
  write_atomic(path, buf.str());
}

}  // namespace manifool
