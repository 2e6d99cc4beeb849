#include "manifool/data.hpp"

#include "manifool/errors.hpp"
#include "manifool/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>

namespace manifool {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw FormatError("IDX header truncated");
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t size) {
  std::vector<unsigned char> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(in.gcount()) != size) throw FormatError("IDX payload truncated");
  return bytes;
}

void check_magic(std::uint32_t magic, std::uint32_t expected) {
  if (magic == expected) return;
  if ((magic >> 8) != 0x08) {
    throw FormatError("unsupported IDX element type (only unsigned byte)");
  }
  throw FormatError("IDX magic 0x" + [&] {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", magic);
    return std::string(buf);
  }() + " is not the expected archive kind");
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

std::vector<Image> load_idx_images(std::istream& in) {
  check_magic(read_be32(in), kIdxImagesMagic);
  const std::uint32_t count = read_be32(in);
  const std::uint32_t rows = read_be32(in);
  const std::uint32_t cols = read_be32(in);
  if (count > 0 && (rows == 0 || cols == 0)) throw FormatError("IDX image dimensions are zero");
  const std::size_t per_image = static_cast<std::size_t>(rows) * cols;
  std::vector<Image> images;
  images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto bytes = read_payload(in, per_image);
    std::vector<double> pixels(per_image);
    for (std::size_t p = 0; p < per_image; ++p) pixels[p] = bytes[p] / 255.0;
    images.emplace_back(static_cast<int>(cols), static_cast<int>(rows), std::move(pixels));
  }
  return images;
}

std::vector<Image> load_idx_images(const std::filesystem::path& path) {
  auto in = open_binary(path);
  return load_idx_images(in);
}

std::vector<int> load_idx_labels(std::istream& in) {
  check_magic(read_be32(in), kIdxLabelsMagic);
  const std::uint32_t count = read_be32(in);
  const auto bytes = read_payload(in, count);
  return {bytes.begin(), bytes.end()};
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  auto in = open_binary(path);
  return load_idx_labels(in);
}

void write_idx_images(std::ostream& out, const std::vector<Image>& images) {
  write_be32(out, kIdxImagesMagic);
  write_be32(out, static_cast<std::uint32_t>(images.size()));
  const int rows = images.empty() ? 0 : images.front().height();
  const int cols = images.empty() ? 0 : images.front().width();
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  for (const auto& img : images) {
    if (img.width() != cols || img.height() != rows) {
      throw DimensionMismatch("IDX archives need images of a single size");
    }
    for (double v : img.pixels()) {
      out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
  }
}

void write_idx_labels(std::ostream& out, const std::vector<int>& labels) {
  write_be32(out, kIdxLabelsMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int label : labels) {
    if (label < 0 || label > 255) throw InvalidArgument("IDX labels must fit in a byte");
    out.put(static_cast<char>(label));
  }
}

LabeledDataset load_idx_dataset(const std::filesystem::path& images,
                                const std::filesystem::path& labels) {
  LabeledDataset data{load_idx_images(images), load_idx_labels(labels)};
  if (data.images.size() != data.labels.size()) {
    throw FormatError("image and label archives have different counts");
  }
  return data;
}

std::vector<int> load_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::map<long, int> by_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto cells = split(text, ',');
    if (cells.size() != 2) throw FormatError("labels CSV line " + std::to_string(line_no));
    try {
      const long index = std::stol(std::string(trim(cells[0])));
      const int label = std::stoi(std::string(trim(cells[1])));
      if (index < 0 || label < 0) throw FormatError("");
      if (!by_index.emplace(index, label).second) {
        throw FormatError("duplicate image index " + std::to_string(index));
      }
    } catch (const FormatError&) {
      throw FormatError("labels CSV line " + std::to_string(line_no) + ": bad entry");
    } catch (const std::exception&) {
      if (line_no == 1) continue;  // header row
      throw FormatError("labels CSV line " + std::to_string(line_no) + ": not numeric");
    }
  }
  std::vector<int> labels;
  for (const auto& [index, label] : by_index) {
    if (index != static_cast<long>(labels.size())) {
      throw FormatError("labels CSV indices must be contiguous from 0");
    }
    labels.push_back(label);
  }
  return labels;
}

LabeledDataset load_pgm_directory(const std::filesystem::path& dir,
                                  const std::filesystem::path& labels_csv) {
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
  }
  if (ec) throw FormatError("cannot list '" + dir.string() + "': " + ec.message());
  std::sort(files.begin(), files.end());
  LabeledDataset data;
  for (const auto& f : files) data.images.push_back(read_pgm(f));
  data.labels = load_labels_csv(labels_csv);
  if (data.labels.size() != data.images.size()) {
    throw FormatError("labels CSV has " + std::to_string(data.labels.size()) + " rows for " +
                      std::to_string(data.images.size()) + " images");
  }
  return data;
}

LabeledDataset synth_blobs(int n_per_class, int width, int height,
                           const std::vector<BlobOffset>& class_offsets, double blob_sigma,
                           std::uint64_t seed, double jitter) {
  if (n_per_class < 0) throw InvalidArgument("n_per_class must be >= 0");
  if (!(blob_sigma > 0.0)) throw InvalidArgument("blob sigma must be positive");
  if (jitter < 0.0) throw InvalidArgument("jitter must be >= 0");
  const double half_w = 0.5 * (width - 1);
  const double half_h = 0.5 * (height - 1);
  for (const auto& o : class_offsets) {
    if (std::abs(o.dx) > half_w || std::abs(o.dy) > half_h) {
      throw InvalidArgument("blob offset lies outside the frame");
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shake(-jitter, jitter);
  LabeledDataset data;
  for (int i = 0; i < n_per_class; ++i) {
    for (std::size_t c = 0; c < class_offsets.size(); ++c) {
      const double jx = jitter > 0.0 ? shake(rng) : 0.0;
      const double jy = jitter > 0.0 ? shake(rng) : 0.0;
      const double cx = half_w + class_offsets[c].dx + jx;
      const double cy = half_h + class_offsets[c].dy + jy;
      Image img(width, height);
      for (int row = 0; row < height; ++row) {
        for (int col = 0; col < width; ++col) {
          const double d2 = (col - cx) * (col - cx) + (row - cy) * (row - cy);
          img.at(col, row) = std::exp(-d2 / (2.0 * blob_sigma * blob_sigma));
        }
      }
      data.images.push_back(std::move(img));
      data.labels.push_back(static_cast<int>(c));
    }
  }
  return data;
}

}  // namespace manifool
