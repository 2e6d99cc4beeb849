#pragma once

#include "manifool/image.hpp"
#include "manifool/transform_group.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace manifool {

enum class Architecture : std::uint32_t {
  LinearSoftmax = 0,
  MLP = 1,
  SmallCNN = 2,
};

Architecture parse_architecture(std::string_view name);
std::string_view architecture_name(Architecture arch);

struct LabeledDataset {
  std::vector<Image> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  /// Checks equal lengths, shared dimensions and labels in [0, num_classes).
  void validate(int num_classes) const;
  /// Rows [offset, offset + count) clipped to the dataset.
  LabeledDataset slice(std::size_t offset, std::size_t count) const;
};

/// One parameter block of the flat weight vector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t fan_in = 0;

  std::size_t size() const { return rows * cols; }

  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

/// Differentiable c-class scorer over images of a fixed size.
///
///   LinearSoftmax  scores = W x + b
///   MLP            scores = W2 relu(W1 x + b1) + b2
///   SmallCNN       conv 5x5 (8 maps, valid) -> relu -> 2x2 max-pool -> dense
///
/// Parameters are stored as 32-bit floats; all arithmetic runs in double.
class ClassifierModel {
 public:
  static constexpr int kConvMaps = 8;
  static constexpr int kConvKernel = 5;

  ClassifierModel(Architecture arch, int num_classes, int width, int height, int hidden_width = 0);

  /// Uniform(-s, s) initialization with s = 1 / sqrt(fan_in), seeded.
  static ClassifierModel initialized(Architecture arch, int num_classes, int width, int height,
                                     std::uint64_t seed, int hidden_width = 64);

  Architecture architecture() const { return arch_; }
  int num_classes() const { return num_classes_; }
  int width() const { return width_; }
  int height() const { return height_; }
  int hidden_width() const { return hidden_width_; }

  std::span<const float> parameters() const { return params_; }
  std::span<float> parameters() { return params_; }
  const std::vector<ParamBlock>& shape_table() const { return blocks_; }

  friend bool operator==(const ClassifierModel&, const ClassifierModel&) = default;

 private:
  Architecture arch_;
  int num_classes_;
  int width_;
  int height_;
  int hidden_width_;
  std::vector<ParamBlock> blocks_;
  std::vector<float> params_;
};

/// Raw logits.
std::vector<double> forward(const ClassifierModel& model, const Image& img);

/// Index of the largest entry, lowest index on ties.
int argmax(std::span<const double> scores);
int predict(const ClassifierModel& model, const Image& img);

/// Gradient of sum_k out_weights[k] * f_k with respect to the input pixels.
std::vector<double> input_gradient(const ClassifierModel& model, const Image& img,
                                   std::span<const double> out_weights);

struct TrainOptions {
  int epochs = 5;
  double learning_rate = 0.05;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

struct TrainReport {
  /// Mean softmax cross-entropy over the whole dataset after each epoch.
  std::vector<double> epoch_loss;
};

/// Minibatch SGD on softmax cross-entropy, continuing from the model's
/// current weights. Deterministic for a given seed.
ClassifierModel train_sgd(ClassifierModel model, const LabeledDataset& data,
                          const TrainOptions& options, TrainReport* report = nullptr);

/// Continues SGD on images warped by their fooling transforms (original
/// image where the entry is empty) at learning_rate * lr_scale.
ClassifierModel finetune_adversarial(ClassifierModel model, const LabeledDataset& data,
                                     std::span<const std::optional<Transform>> fool_transforms,
                                     const TrainOptions& options, double lr_scale = 0.5,
                                     TrainReport* report = nullptr);

double accuracy(const ClassifierModel& model, const LabeledDataset& data);
double mean_loss(const ClassifierModel& model, const LabeledDataset& data);

/// Weights file: "MFW1", then little-endian u32 architecture tag, classes,
/// width, height, parameter count, then little-endian f32 parameters.
void save_weights(std::ostream& out, const ClassifierModel& model);
void save_weights(const std::filesystem::path& path, const ClassifierModel& model);
ClassifierModel load_weights(std::istream& in);
ClassifierModel load_weights(const std::filesystem::path& path);

}  // namespace manifool
