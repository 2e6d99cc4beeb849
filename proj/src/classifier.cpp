#include "manifool/classifier.hpp"

#include "manifool/errors.hpp"
#include "manifool/text.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace manifool {

Architecture parse_architecture(std::string_view name) {
  if (name == "linear") return Architecture::LinearSoftmax;
  if (name == "mlp") return Architecture::MLP;
  if (name == "cnn") return Architecture::SmallCNN;
  throw InvalidArgument("unknown architecture '" + std::string(name) + "' (linear, mlp, cnn)");
}

std::string_view architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::LinearSoftmax:
      return "linear";
    case Architecture::MLP:
      return "mlp";
    case Architecture::SmallCNN:
      return "cnn";
  }
  return "unknown";
}

void LabeledDataset::validate(int num_classes) const {
  if (images.size() != labels.size()) {
    throw DimensionMismatch("dataset has different numbers of images and labels");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(images.front())) {
      throw DimensionMismatch("dataset images do not share dimensions");
    }
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw InvalidArgument("label " + std::to_string(labels[i]) + " outside [0, " +
                            std::to_string(num_classes) + ")");
    }
  }
}

LabeledDataset LabeledDataset::slice(std::size_t offset, std::size_t count) const {
  LabeledDataset out;
  const std::size_t begin = std::min(offset, images.size());
  const std::size_t end = std::min(images.size(), begin + count);
  out.images.assign(images.begin() + static_cast<std::ptrdiff_t>(begin),
                    images.begin() + static_cast<std::ptrdiff_t>(end));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

namespace {

int conv_out(int side) { return side - ClassifierModel::kConvKernel + 1; }

std::vector<ParamBlock> make_blocks(Architecture arch, int c, int w, int h, int hidden) {
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<ParamBlock> blocks;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
    blocks.push_back({std::move(name), offset, rows, cols, fan_in});
    offset += rows * cols;
  };
  const auto classes = static_cast<std::size_t>(c);
  switch (arch) {
    case Architecture::LinearSoftmax:
      add("fc.weight", classes, n, n);
      add("fc.bias", classes, 1, n);
      break;
    case Architecture::MLP: {
      const auto hw = static_cast<std::size_t>(hidden);
      add("hidden.weight", hw, n, n);
      add("hidden.bias", hw, 1, n);
      add("out.weight", classes, hw, hw);
      add("out.bias", classes, 1, hw);
      break;
    }
    case Architecture::SmallCNN: {
      const auto k = static_cast<std::size_t>(ClassifierModel::kConvKernel);
      const auto maps = static_cast<std::size_t>(ClassifierModel::kConvMaps);
      const auto pooled = maps * static_cast<std::size_t>(conv_out(w) / 2) *
                          static_cast<std::size_t>(conv_out(h) / 2);
      add("conv.weight", maps, k * k, k * k);
      add("conv.bias", maps, 1, k * k);
      add("fc.weight", classes, pooled, pooled);
      add("fc.bias", classes, 1, pooled);
      break;
    }
  }
  return blocks;
}

enum class LayerKind { Dense, Relu, Conv, MaxPool };

struct Layer {
  LayerKind kind;
  std::size_t in_size = 0;
  std::size_t out_size = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  // Spatial layers: input width/height, output width/height, channel count.
  int in_w = 0, in_h = 0, out_w = 0, out_h = 0, maps = 0;
};

std::vector<Layer> make_layers(const ClassifierModel& model) {
  const auto& b = model.shape_table();
  const std::size_t n = static_cast<std::size_t>(model.width()) *
                        static_cast<std::size_t>(model.height());
  const auto c = static_cast<std::size_t>(model.num_classes());
  std::vector<Layer> layers;
  switch (model.architecture()) {
    case Architecture::LinearSoftmax:
      layers.push_back({LayerKind::Dense, n, c, b[0].offset, b[1].offset});
      break;
    case Architecture::MLP: {
      const auto hidden = static_cast<std::size_t>(model.hidden_width());
      layers.push_back({LayerKind::Dense, n, hidden, b[0].offset, b[1].offset});
      layers.push_back({LayerKind::Relu, hidden, hidden});
      layers.push_back({LayerKind::Dense, hidden, c, b[2].offset, b[3].offset});
      break;
    }
    case Architecture::SmallCNN: {
      const int maps = ClassifierModel::kConvMaps;
      const int ow = conv_out(model.width());
      const int oh = conv_out(model.height());
      const auto conv_size = static_cast<std::size_t>(maps * ow * oh);
      const auto pooled = static_cast<std::size_t>(maps * (ow / 2) * (oh / 2));
      Layer conv{LayerKind::Conv, n, conv_size, b[0].offset, b[1].offset};
      conv.in_w = model.width();
      conv.in_h = model.height();
      conv.out_w = ow;
      conv.out_h = oh;
      conv.maps = maps;
      layers.push_back(conv);
      layers.push_back({LayerKind::Relu, conv_size, conv_size});
      Layer pool{LayerKind::MaxPool, conv_size, pooled};
      pool.in_w = ow;
      pool.in_h = oh;
      pool.out_w = ow / 2;
      pool.out_h = oh / 2;
      pool.maps = maps;
      layers.push_back(pool);
      layers.push_back({LayerKind::Dense, pooled, c, b[2].offset, b[3].offset});
      break;
    }
  }
  return layers;
}

/// Forward/backward executor holding activations of the last forward pass.
class Network {
 public:
  explicit Network(const ClassifierModel& model)
      : layers_(make_layers(model)),
        weights_(model.parameters().begin(), model.parameters().end()) {}

  const std::vector<double>& forward(std::span<const double> input) {
    acts_.resize(layers_.size() + 1);
    pool_index_.resize(layers_.size());
    acts_[0].assign(input.begin(), input.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      run_forward(l, acts_[l], acts_[l + 1]);
    }
    return acts_.back();
  }

  /// Back-propagates dLoss/dScores. Accumulates parameter gradients into
  /// `param_grad` when non-null; returns dLoss/dInput.
  std::vector<double> backward(std::span<const double> score_grad,
                               std::vector<double>* param_grad) {
    std::vector<double> grad(score_grad.begin(), score_grad.end());
    for (std::size_t l = layers_.size(); l-- > 0;) {
      std::vector<double> grad_in(layers_[l].in_size, 0.0);
      run_backward(l, grad, grad_in, param_grad);
      grad = std::move(grad_in);
    }
    return grad;
  }

 private:
  void run_forward(std::size_t l, const std::vector<double>& in, std::vector<double>& out) {
    const Layer& layer = layers_[l];
    out.assign(layer.out_size, 0.0);
    switch (layer.kind) {
      case LayerKind::Dense: {
        const double* w = weights_.data() + layer.weight_offset;
        const double* b = weights_.data() + layer.bias_offset;
        for (std::size_t o = 0; o < layer.out_size; ++o) {
          const double* row = w + o * layer.in_size;
          double sum = b[o];
          for (std::size_t i = 0; i < layer.in_size; ++i) sum += row[i] * in[i];
          out[o] = sum;
        }
        break;
      }
      case LayerKind::Relu:
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
        break;
      case LayerKind::Conv: {
        const int k = ClassifierModel::kConvKernel;
        for (int m = 0; m < layer.maps; ++m) {
          const double* w = weights_.data() + layer.weight_offset + static_cast<std::size_t>(m * k * k);
          const double bias = weights_[layer.bias_offset + static_cast<std::size_t>(m)];
          for (int y = 0; y < layer.out_h; ++y) {
            for (int x = 0; x < layer.out_w; ++x) {
              double sum = bias;
              for (int ky = 0; ky < k; ++ky) {
                const double* src = in.data() + (y + ky) * layer.in_w + x;
                for (int kx = 0; kx < k; ++kx) sum += w[ky * k + kx] * src[kx];
              }
              out[static_cast<std::size_t>((m * layer.out_h + y) * layer.out_w + x)] = sum;
            }
          }
        }
        break;
      }
      case LayerKind::MaxPool: {
        auto& index = pool_index_[l];
        index.assign(layer.out_size, 0);
        for (int m = 0; m < layer.maps; ++m) {
          for (int y = 0; y < layer.out_h; ++y) {
            for (int x = 0; x < layer.out_w; ++x) {
              std::size_t best = static_cast<std::size_t>((m * layer.in_h + 2 * y) * layer.in_w + 2 * x);
              for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                  const auto at = static_cast<std::size_t>(
                      (m * layer.in_h + 2 * y + dy) * layer.in_w + 2 * x + dx);
                  if (in[at] > in[best]) best = at;
                }
              }
              const auto o = static_cast<std::size_t>((m * layer.out_h + y) * layer.out_w + x);
              out[o] = in[best];
              index[o] = best;
            }
          }
        }
        break;
      }
    }
  }

  void run_backward(std::size_t l, const std::vector<double>& grad_out,
                    std::vector<double>& grad_in, std::vector<double>* param_grad) {
    const Layer& layer = layers_[l];
    const std::vector<double>& in = acts_[l];
    switch (layer.kind) {
      case LayerKind::Dense: {
        const double* w = weights_.data() + layer.weight_offset;
        for (std::size_t o = 0; o < layer.out_size; ++o) {
          const double g = grad_out[o];
          if (g == 0.0) continue;
          const double* row = w + o * layer.in_size;
          for (std::size_t i = 0; i < layer.in_size; ++i) grad_in[i] += row[i] * g;
          if (param_grad) {
            double* gw = param_grad->data() + layer.weight_offset + o * layer.in_size;
            for (std::size_t i = 0; i < layer.in_size; ++i) gw[i] += g * in[i];
            (*param_grad)[layer.bias_offset + o] += g;
          }
        }
        break;
      }
      case LayerKind::Relu:
        for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
        break;
      case LayerKind::Conv: {
        const int k = ClassifierModel::kConvKernel;
        for (int m = 0; m < layer.maps; ++m) {
          const double* w = weights_.data() + layer.weight_offset + static_cast<std::size_t>(m * k * k);
          double* gw = param_grad ? param_grad->data() + layer.weight_offset +
                                        static_cast<std::size_t>(m * k * k)
                                  : nullptr;
          double bias_grad = 0.0;
          for (int y = 0; y < layer.out_h; ++y) {
            for (int x = 0; x < layer.out_w; ++x) {
              const double g =
                  grad_out[static_cast<std::size_t>((m * layer.out_h + y) * layer.out_w + x)];
              if (g == 0.0) continue;
              bias_grad += g;
              for (int ky = 0; ky < k; ++ky) {
                const auto base = static_cast<std::size_t>((y + ky) * layer.in_w + x);
                for (int kx = 0; kx < k; ++kx) {
                  grad_in[base + static_cast<std::size_t>(kx)] += w[ky * k + kx] * g;
                  if (gw) gw[ky * k + kx] += g * in[base + static_cast<std::size_t>(kx)];
                }
              }
            }
          }
          if (param_grad) (*param_grad)[layer.bias_offset + static_cast<std::size_t>(m)] += bias_grad;
        }
        break;
      }
      case LayerKind::MaxPool: {
        const auto& index = pool_index_[l];
        for (std::size_t o = 0; o < layer.out_size; ++o) grad_in[index[o]] += grad_out[o];
        break;
      }
    }
  }

  std::vector<Layer> layers_;
  std::vector<double> weights_;
  std::vector<std::vector<double>> acts_;
  std::vector<std::vector<std::size_t>> pool_index_;
};

void check_input(const ClassifierModel& model, const Image& img) {
  if (img.width() != model.width() || img.height() != model.height()) {
    throw DimensionMismatch("image is " + std::to_string(img.width()) + "x" +
                            std::to_string(img.height()) + ", model expects " +
                            std::to_string(model.width()) + "x" + std::to_string(model.height()));
  }
}

// Softmax cross-entropy and its gradient with respect to the logits.
double softmax_xent(std::span<const double> logits, int label, std::vector<double>* grad) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - peak);
  const double log_total = std::log(total) + peak;
  if (grad) {
    grad->resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) (*grad)[k] = std::exp(logits[k] - log_total);
    (*grad)[static_cast<std::size_t>(label)] -= 1.0;
  }
  return log_total - logits[static_cast<std::size_t>(label)];
}

}  // namespace

ClassifierModel::ClassifierModel(Architecture arch, int num_classes, int width, int height,
                                 int hidden_width)
    : arch_(arch),
      num_classes_(num_classes),
      width_(width),
      height_(height),
      hidden_width_(arch == Architecture::MLP ? hidden_width : 0) {
  if (num_classes < 2) throw InvalidArgument("a classifier needs at least two classes");
  if (width <= 0 || height <= 0) throw InvalidArgument("input dimensions must be positive");
  if (arch == Architecture::MLP && hidden_width <= 0) {
    throw InvalidArgument("MLP hidden width must be positive");
  }
  if (arch == Architecture::SmallCNN && (conv_out(width) < 2 || conv_out(height) < 2)) {
    throw InvalidArgument("SmallCNN needs inputs of at least 6x6");
  }
  blocks_ = make_blocks(arch, num_classes, width, height, hidden_width_);
  params_.assign(blocks_.back().offset + blocks_.back().size(), 0.0f);
}

ClassifierModel ClassifierModel::initialized(Architecture arch, int num_classes, int width,
                                             int height, std::uint64_t seed, int hidden_width) {
  ClassifierModel model(arch, num_classes, width, height, hidden_width);
  std::mt19937_64 rng(seed);
  for (const auto& block : model.blocks_) {
    const double s = 1.0 / std::sqrt(static_cast<double>(block.fan_in));
    std::uniform_real_distribution<double> dist(-s, s);
    for (std::size_t i = 0; i < block.size(); ++i) {
      model.params_[block.offset + i] = static_cast<float>(dist(rng));
    }
  }
  return model;
}

std::vector<double> forward(const ClassifierModel& model, const Image& img) {
  check_input(model, img);
  Network net(model);
  return net.forward(img.pixels());
}

int argmax(std::span<const double> scores) {
  if (scores.empty()) throw InvalidArgument("argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return static_cast<int>(best);
}

int predict(const ClassifierModel& model, const Image& img) { return argmax(forward(model, img)); }

std::vector<double> input_gradient(const ClassifierModel& model, const Image& img,
                                   std::span<const double> out_weights) {
  check_input(model, img);
  if (out_weights.size() != static_cast<std::size_t>(model.num_classes())) {
    throw DimensionMismatch("output weight vector length must equal the number of classes");
  }
  Network net(model);
  net.forward(img.pixels());
  return net.backward(out_weights, nullptr);
}

ClassifierModel train_sgd(ClassifierModel model, const LabeledDataset& data,
                          const TrainOptions& options, TrainReport* report) {
  if (data.empty()) throw EmptyDataset("training dataset is empty");
  data.validate(model.num_classes());
  if (!data.images.front().same_shape(Image(model.width(), model.height()))) {
    throw DimensionMismatch("dataset images do not match the model input size");
  }
  if (options.batch_size <= 0) throw InvalidArgument("batch size must be positive");
  if (options.epochs < 0) throw InvalidArgument("epochs must be non-negative");

  std::mt19937_64 shuffle_rng(options.seed);
  std::vector<std::size_t> order(data.size());
  std::vector<double> grad(model.parameters().size());
  std::vector<double> score_grad;
  const auto batch = static_cast<std::size_t>(options.batch_size);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      Network net(model);
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t idx = order[i];
        const auto& logits = net.forward(data.images[idx].pixels());
        softmax_xent(logits, data.labels[idx], &score_grad);
        net.backward(score_grad, &grad);
      }
      const double scale = options.learning_rate / static_cast<double>(stop - start);
      auto params = model.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) {
        params[p] = static_cast<float>(static_cast<double>(params[p]) - scale * grad[p]);
      }
    }
    if (report) report->epoch_loss.push_back(mean_loss(model, data));
  }
  return model;
}

ClassifierModel finetune_adversarial(ClassifierModel model, const LabeledDataset& data,
                                     std::span<const std::optional<Transform>> fool_transforms,
                                     const TrainOptions& options, double lr_scale,
                                     TrainReport* report) {
  if (data.empty()) throw EmptyDataset("fine-tuning dataset is empty");
  if (fool_transforms.size() > data.size()) {
    throw DimensionMismatch("more fooling transforms than images");
  }
  LabeledDataset warped;
  warped.labels = data.labels;
  warped.images.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i < fool_transforms.size() && fool_transforms[i]) {
      warped.images.push_back(warp(data.images[i], *fool_transforms[i]));
    } else {
      warped.images.push_back(data.images[i]);
    }
  }
  TrainOptions scaled = options;
  scaled.learning_rate = options.learning_rate * lr_scale;
  return train_sgd(std::move(model), warped, scaled, report);
}

double accuracy(const ClassifierModel& model, const LabeledDataset& data) {
  if (data.empty()) throw EmptyDataset("accuracy of an empty dataset");
  std::size_t correct = 0;
  Network net(model);
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_input(model, data.images[i]);
    if (argmax(net.forward(data.images[i].pixels())) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double mean_loss(const ClassifierModel& model, const LabeledDataset& data) {
  if (data.empty()) throw EmptyDataset("loss of an empty dataset");
  double total = 0.0;
  Network net(model);
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_input(model, data.images[i]);
    total += softmax_xent(net.forward(data.images[i].pixels()), data.labels[i], nullptr);
  }
  return total / static_cast<double>(data.size());
}

namespace {

constexpr std::array<char, 4> kWeightsMagic = {'M', 'F', 'W', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw FormatError("weights file truncated in header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_weights(std::ostream& out, const ClassifierModel& model) {
  std::string buf(kWeightsMagic.begin(), kWeightsMagic.end());
  put_u32(buf, static_cast<std::uint32_t>(model.architecture()));
  put_u32(buf, static_cast<std::uint32_t>(model.num_classes()));
  put_u32(buf, static_cast<std::uint32_t>(model.width()));
  put_u32(buf, static_cast<std::uint32_t>(model.height()));
  put_u32(buf, static_cast<std::uint32_t>(model.parameters().size()));
  for (float p : model.parameters()) put_u32(buf, std::bit_cast<std::uint32_t>(p));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void save_weights(const std::filesystem::path& path, const ClassifierModel& model) {
  std::ostringstream buf;
  save_weights(buf, model);
  write_atomic(path, buf.str());
}

ClassifierModel load_weights(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4 || magic != kWeightsMagic) throw FormatError("bad weights magic");
  const std::uint32_t tag = get_u32(in);
  if (tag > static_cast<std::uint32_t>(Architecture::SmallCNN)) {
    throw FormatError("unknown architecture tag " + std::to_string(tag));
  }
  const auto arch = static_cast<Architecture>(tag);
  const auto classes = static_cast<int>(get_u32(in));
  const auto width = static_cast<int>(get_u32(in));
  const auto height = static_cast<int>(get_u32(in));
  const std::uint32_t count = get_u32(in);

  int hidden = 0;
  if (arch == Architecture::MLP) {
    // count = hidden * (n + 1 + c) + c
    const std::int64_t n = static_cast<std::int64_t>(width) * height;
    const std::int64_t per_unit = n + 1 + classes;
    const std::int64_t rest = static_cast<std::int64_t>(count) - classes;
    if (per_unit <= 0 || rest <= 0 || rest % per_unit != 0) {
      throw FormatError("MLP parameter count does not match any hidden width");
    }
    hidden = static_cast<int>(rest / per_unit);
  }
  ClassifierModel model = [&] {
    try {
      return ClassifierModel(arch, classes, width, height, hidden);
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("invalid weights header: ") + e.what());
    }
  }();
  if (model.parameters().size() != count) {
    throw FormatError("parameter count " + std::to_string(count) + " does not match architecture (" +
                      std::to_string(model.parameters().size()) + ")");
  }
  for (float& p : model.parameters()) p = std::bit_cast<float>(get_u32(in));
  return model;
}

ClassifierModel load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return load_weights(in);
}

}  // namespace manifool
