#pragma once

#include "manifool/classifier.hpp"
#include "manifool/image.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace manifool {

/// IDX3 unsigned-byte images (magic 0x00000803, big-endian header).
/// Intensities are byte / 255.
std::vector<Image> load_idx_images(std::istream& in);
std::vector<Image> load_idx_images(const std::filesystem::path& path);

/// IDX1 unsigned-byte labels (magic 0x00000801).
std::vector<int> load_idx_labels(std::istream& in);
std::vector<int> load_idx_labels(const std::filesystem::path& path);

void write_idx_images(std::ostream& out, const std::vector<Image>& images);
void write_idx_labels(std::ostream& out, const std::vector<int>& labels);

LabeledDataset load_idx_dataset(const std::filesystem::path& images,
                                 const std::filesystem::path& labels);

/// "image_index,label" rows; an optional header line is skipped.
std::vector<int> load_labels_csv(const std::filesystem::path& path);

/// Every *.pgm in `dir` in lexicographic order, labelled by `labels_csv`.
LabeledDataset load_pgm_directory(const std::filesystem::path& dir,
                                  const std::filesystem::path& labels_csv);

struct BlobOffset {
  double dx = 0.0;
  double dy = 0.0;
};

/// Gaussian blobs, one class per offset (centered coordinates). Each sample
/// is jittered uniformly by up to `jitter` pixels per axis. Samples are
/// interleaved by class.
LabeledDataset synth_blobs(int n_per_class, int width, int height,
                           const std::vector<BlobOffset>& class_offsets, double blob_sigma,
                           std::uint64_t seed, double jitter = 1.0);

}  // namespace manifool
