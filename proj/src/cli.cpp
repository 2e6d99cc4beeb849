#include "manifool/cli.hpp"

#include "manifool/attack.hpp"
#include "manifool/classifier.hpp"
#include "manifool/data.hpp"
#include "manifool/errors.hpp"
#include "manifool/geodesic.hpp"
#include "manifool/metrics.hpp"
#include "manifool/parallel.hpp"
#include "manifool/text.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace manifool {

namespace {

// Root-seed derivation per consumer (item index in derive_seed).
constexpr std::uint64_t kSeedInit = 1;
constexpr std::uint64_t kSeedShuffle = 2;
constexpr std::uint64_t kSeedFinetune = 3;
constexpr std::uint64_t kSeedSample = 4;

class UsageError : public Error {
 public:
  using Error::Error;
};

class AlgorithmFailure : public Error {
 public:
  using Error::Error;
};

struct DatasetOptions {
  std::string images;
  std::string labels;
  std::string pgm_dir;
  std::string labels_csv;
  int synth_n = 0;
  int synth_width = 16;
  int synth_height = 16;
  std::string synth_offsets = "-3,0;3,0";
  double synth_sigma = 2.0;
  double synth_jitter = 1.0;
  std::size_t offset = 0;
  std::size_t limit = 0;  // 0 = everything
};

/// Every field the commands read; flags and the key=value config file fill it.
struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out;
  std::string summary_out;

  DatasetOptions data;
  DatasetOptions test_data;
  std::string image;
  int index = -1;
  std::optional<int> label;

  std::string model;
  std::string model_out;
  std::string arch = "cnn";
  int hidden = 64;
  int classes = 0;
  TrainOptions train;

  std::string group = "similarity";
  AttackParams attack;
  GeodesicParams geodesic;

  std::string transform;
  std::string transform_file;
  std::string transform_out;
  std::string image_out;
  std::string trace_out;

  std::string r_grid;
  double r = 1.0;
  int reps = 10;

  std::string mode = "minimal";
  double lr_scale = 0.5;
};

int default_jobs() {
  if (const char* env = std::getenv("MANIFOOL_JOBS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
    }
  }
  return 1;
}

std::vector<BlobOffset> parse_offsets(const std::string& text) {
  std::vector<BlobOffset> offsets;
  for (const auto& pair : split(text, ';')) {
    const auto xy = split(trim(pair), ',');
    if (xy.size() != 2) throw UsageError("blob offsets look like 'dx,dy;dx,dy'");
    offsets.push_back({std::stod(xy[0]), std::stod(xy[1])});
  }
  return offsets;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  for (const auto& cell : split(text, ',')) {
    try {
      grid.push_back(std::stod(std::string(trim(cell))));
    } catch (const std::exception&) {
      throw UsageError("r grid must be a comma-separated list of numbers");
    }
  }
  return grid;
}

bool has_dataset(const DatasetOptions& d) {
  return !d.images.empty() || !d.pgm_dir.empty() || d.synth_n > 0;
}

LabeledDataset load_dataset(const DatasetOptions& d, std::uint64_t seed) {
  LabeledDataset data;
  if (!d.images.empty()) {
    if (d.labels.empty()) throw UsageError("--labels is required with --images");
    data = load_idx_dataset(d.images, d.labels);
  } else if (!d.pgm_dir.empty()) {
    if (d.labels_csv.empty()) throw UsageError("--labels-csv is required with --pgm-dir");
    data = load_pgm_directory(d.pgm_dir, d.labels_csv);
  } else if (d.synth_n > 0) {
    data = synth_blobs(d.synth_n, d.synth_width, d.synth_height, parse_offsets(d.synth_offsets),
                       d.synth_sigma, seed, d.synth_jitter);
  } else {
    throw UsageError("no dataset given (use --images/--labels, --pgm-dir or --synth-n)");
  }
  if (d.offset > 0 || d.limit > 0) {
    data = data.slice(d.offset, d.limit > 0 ? d.limit : data.size());
  }
  return data;
}

void add_dataset_options(CLI::App& app, DatasetOptions& d, const std::string& prefix = "") {
  app.add_option("--" + prefix + "images", d.images, "IDX3 image archive");
  app.add_option("--" + prefix + "labels", d.labels, "IDX1 label archive");
  app.add_option("--" + prefix + "pgm-dir", d.pgm_dir, "directory of P5 PGM images");
  app.add_option("--" + prefix + "labels-csv", d.labels_csv, "image_index,label CSV");
  app.add_option("--" + prefix + "offset", d.offset, "skip this many samples");
  app.add_option("--" + prefix + "limit", d.limit, "use at most this many samples (0 = all)");
  if (!prefix.empty()) return;
  app.add_option("--synth-n", d.synth_n, "synthetic blobs per class");
  app.add_option("--synth-width", d.synth_width);
  app.add_option("--synth-height", d.synth_height);
  app.add_option("--synth-offsets", d.synth_offsets, "class centers 'dx,dy;dx,dy'");
  app.add_option("--synth-sigma", d.synth_sigma);
  app.add_option("--synth-jitter", d.synth_jitter);
}

void add_attack_options(CLI::App& app, RunConfig& cfg) {
  auto& a = cfg.attack;
  app.add_option("--group", cfg.group, "transformation group");
  app.add_option("--max-iters", a.max_iters);
  app.add_option("--momentum", a.momentum);
  app.add_option("--initial-step", a.initial_step);
  app.add_option("--line-search-trials", a.line_search_trials);
  app.add_option("--line-search-shrink", a.line_search_shrink);
  app.add_option("--num-targets", a.num_targets);
  app.add_option("--step-floor", a.step_floor);
  app.add_option("--tangent-epsilon", a.tangent_epsilon);
}

void add_geodesic_options(CLI::App& app, RunConfig& cfg) {
  app.add_option("--step", cfg.geodesic.step, "geodesic substep length");
  app.add_option("--max-segments", cfg.geodesic.max_segments);
}

// Writes to `path` when given, otherwise to the command's stdout.
void emit(const std::string& path, const std::string& csv, std::ostream& out) {
  if (!path.empty()) {
    write_atomic(path, csv);
  } else {
    out << csv;
  }
}

/// The single image an attack/sample/distance command works on.
std::pair<Image, std::optional<int>> single_image(const RunConfig& cfg) {
  if (!cfg.image.empty()) return {read_pgm(std::filesystem::path(cfg.image)), cfg.label};
  if (!has_dataset(cfg.data)) throw UsageError("give --image or a dataset with --index");
  const LabeledDataset data = load_dataset(cfg.data, cfg.seed);
  const int index = std::max(cfg.index, 0);
  if (static_cast<std::size_t>(index) >= data.size()) throw UsageError("--index out of range");
  return {data.images[static_cast<std::size_t>(index)],
          cfg.label ? cfg.label : std::optional<int>(data.labels[static_cast<std::size_t>(index)])};
}

// ---------------------------------------------------------------- commands

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  if (cfg.model_out.empty()) throw UsageError("--model-out is required");
  const LabeledDataset data = load_dataset(cfg.data, cfg.seed);
  if (data.empty()) throw UsageError("training dataset is empty");
  int classes = cfg.classes;
  if (classes <= 0) {
    classes = std::max(2, *std::max_element(data.labels.begin(), data.labels.end()) + 1);
  }
  const Image& first = data.images.front();
  ClassifierModel model =
      ClassifierModel::initialized(parse_architecture(cfg.arch), classes, first.width(),
                                   first.height(), derive_seed(cfg.seed, kSeedInit, 0), cfg.hidden);
  TrainOptions options = cfg.train;
  options.seed = derive_seed(cfg.seed, kSeedShuffle, 0);
  TrainReport report;
  model = train_sgd(std::move(model), data, options, &report);
  save_weights(std::filesystem::path(cfg.model_out), model);

  std::string test_acc = "nan";
  if (has_dataset(cfg.test_data)) {
    test_acc = format_double(accuracy(model, load_dataset(cfg.test_data, cfg.seed)));
  }
  CsvTable table({"arch", "epochs", "train_accuracy", "test_accuracy", "final_loss"});
  table.add_row({cfg.arch, std::to_string(options.epochs), format_double(accuracy(model, data)),
                 test_acc, format_double(mean_loss(model, data))});
  emit(cfg.out, table.str(), out);
  return kExitOk;
}

int cmd_attack(const RunConfig& cfg, std::ostream& out) {
  if (cfg.model.empty()) throw UsageError("--model is required");
  const ClassifierModel model = load_weights(std::filesystem::path(cfg.model));
  auto [img, label] = single_image(cfg);
  const TransformGroup group(parse_group_kind(cfg.group));
  AttackParams params = cfg.attack;
  params.trace_scores = !cfg.trace_out.empty();

  FoolResult result;
  const int predicted = predict(model, img);
  if (label && *label != predicted) {
    // Already misclassified: the identity fools it.
    result.success = true;
    result.fooled_image = img;
    result.original_label = *label;
    result.new_label = predicted;
  } else {
    result = manifool_multiclass(img, model, group, params, cfg.geodesic, cfg.jobs);
  }

  if (!cfg.transform_out.empty()) write_atomic(cfg.transform_out, format_transform(result.tau_hat) + "\n");
  if (!cfg.image_out.empty()) write_pgm(std::filesystem::path(cfg.image_out), result.fooled_image);
  if (!cfg.trace_out.empty()) {
    CsvTable trace({"iteration", "target", "step", "g", "running_score", "forced"});
    for (const auto& row : result.trace) {
      trace.add_row({std::to_string(row.iteration), std::to_string(row.target),
                     format_double(row.step), format_double(row.g_after),
                     format_double(row.running_score), row.forced ? "1" : "0"});
    }
    write_atomic(cfg.trace_out, trace.str());
  }
  CsvTable table({"success", "score", "original_label", "new_label", "iterations", "transform"});
  table.add_row({result.success ? "1" : "0", result.success ? format_double(result.geodesic_score) : "nan",
                 std::to_string(result.original_label), std::to_string(result.new_label),
                 std::to_string(result.iterations), format_transform(result.tau_hat)});
  emit(cfg.out, table.str(), out);
  return result.success ? kExitOk : kExitAlgorithmFailure;
}

int cmd_eval_rho(const RunConfig& cfg, std::ostream& out) {
  if (cfg.model.empty()) throw UsageError("--model is required");
  const ClassifierModel model = load_weights(std::filesystem::path(cfg.model));
  const LabeledDataset data = load_dataset(cfg.data, cfg.seed);
  if (data.empty()) throw UsageError("evaluation dataset is empty");

  CsvTable summary({"group", "rho_hat", "failures", "images"});
  std::string per_image;
  bool header_done = false;
  for (const auto& name : split(cfg.group, ',')) {
    const TransformGroup group(parse_group_kind(trim(name)));
    const EvalReport report = invariance_score(data, model, group, cfg.attack, cfg.geodesic, cfg.jobs);
    summary.add_row({std::string(group.name()), format_double(report.rho_hat),
                     std::to_string(report.failure_count), std::to_string(data.size())});
    std::string csv = report.to_csv();
    if (header_done) csv.erase(0, csv.find('\n') + 1);
    per_image += csv;
    header_done = true;
  }
  if (!cfg.out.empty()) write_atomic(cfg.out, per_image);
  emit(cfg.summary_out, summary.str(), out);
  return kExitOk;
}

int cmd_eval_curve(const RunConfig& cfg, std::ostream& out) {
  if (cfg.model.empty()) throw UsageError("--model is required");
  if (cfg.r_grid.empty()) throw UsageError("--r-grid is required");
  const ClassifierModel model = load_weights(std::filesystem::path(cfg.model));
  const LabeledDataset data = load_dataset(cfg.data, cfg.seed);
  if (data.empty()) throw UsageError("evaluation dataset is empty");
  const TransformGroup group(parse_group_kind(cfg.group));
  const RobustnessCurve curve = misclassification_curve(
      data, model, group, parse_grid(cfg.r_grid), cfg.reps, cfg.seed, cfg.geodesic, cfg.jobs);
  emit(cfg.out, curve.to_csv(), out);
  CsvTable summary({"group", "r_hat"});
  summary.add_row({std::string(group.name()), curve.r_hat ? format_double(*curve.r_hat) : "nan"});
  emit(cfg.summary_out, summary.str(), out);
  return curve.r_hat ? kExitOk : kExitAlgorithmFailure;
}

int cmd_sample(const RunConfig& cfg, std::ostream& out) {
  auto [img, label] = single_image(cfg);
  (void)label;
  const TransformGroup group(parse_group_kind(cfg.group));
  const SampledTransform s = sample_random_transform(img, group, cfg.r, cfg.seed, cfg.geodesic);
  if (!cfg.transform_out.empty()) write_atomic(cfg.transform_out, format_transform(s.transform) + "\n");
  if (!cfg.image_out.empty()) write_pgm(std::filesystem::path(cfg.image_out), warp(img, s.transform));
  CsvTable table({"target", "score", "alpha", "transform"});
  table.add_row({format_double(cfg.r), format_double(s.score), format_double(s.alpha),
                 format_transform(s.transform)});
  emit(cfg.out, table.str(), out);
  return kExitOk;
}

int cmd_distance(const RunConfig& cfg, std::ostream& out) {
  auto [img, label] = single_image(cfg);
  (void)label;
  std::string line = cfg.transform;
  if (!cfg.transform_file.empty()) {
    std::ifstream in(cfg.transform_file);
    if (!in || !std::getline(in, line)) throw FormatError("cannot read '" + cfg.transform_file + "'");
  }
  if (line.empty()) throw UsageError("give --transform or --transform-file");
  const Transform t = parse_transform(line);
  const TransformGroup group(parse_group_kind(cfg.group));
  CsvTable table({"score", "distance"});
  table.add_row({format_double(normalized_score(img, t, group, cfg.geodesic)),
                 format_double(geodesic_distance(img, t, group, cfg.geodesic))});
  emit(cfg.out, table.str(), out);
  return kExitOk;
}

int cmd_finetune(const RunConfig& cfg, std::ostream& out) {
  if (cfg.model.empty()) throw UsageError("--model is required");
  if (cfg.mode != "minimal" && cfg.mode != "random" && cfg.mode != "baseline") {
    throw UsageError("--mode must be minimal, random or baseline");
  }
  ClassifierModel model = load_weights(std::filesystem::path(cfg.model));
  const LabeledDataset train = load_dataset(cfg.data, cfg.seed);
  if (train.empty()) throw UsageError("fine-tuning dataset is empty");
  const LabeledDataset eval = has_dataset(cfg.test_data) ? load_dataset(cfg.test_data, cfg.seed) : train;
  const TransformGroup group(parse_group_kind(cfg.group));

  std::vector<std::optional<Transform>> transforms(train.size());
  if (cfg.mode != "baseline") {
    const EvalReport pass = invariance_score(train, model, group, cfg.attack, cfg.geodesic, cfg.jobs);
    if (cfg.mode == "minimal") {
      for (const auto& rec : pass.per_image) {
        if (rec.success && rec.score > 0.0) transforms[rec.id] = rec.tau_hat;
      }
    } else {
      std::vector<double> scores;
      for (const auto& rec : pass.per_image) {
        if (rec.success && rec.score > 0.0) scores.push_back(rec.score);
      }
      if (scores.empty()) throw AlgorithmFailure("no fooling transforms to take a median from");
      const double r = median(scores);
      parallel_for(train.size(), cfg.jobs, [&](std::size_t i) {
        try {
          transforms[i] = sample_random_transform(train.images[i], group, r,
                                                  derive_seed(cfg.seed, kSeedSample, i), cfg.geodesic)
                              .transform;
        } catch (const BracketFailure&) {
        }
      });
    }
  }

  // One row per completed epoch (epoch 0 = before fine-tuning).
  CsvTable table({"mode", "epoch", "rho_before", "rho_after", "failures", "accuracy"});
  std::string rho_before;
  auto record = [&](int epoch) {
    const EvalReport report = invariance_score(eval, model, group, cfg.attack, cfg.geodesic, cfg.jobs);
    const std::string rho = format_double(report.rho_hat);
    if (epoch == 0) rho_before = rho;
    table.add_row({cfg.mode, std::to_string(epoch), rho_before, rho,
                   std::to_string(report.failure_count), format_double(accuracy(model, eval))});
  };
  record(0);
  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    TrainOptions options = cfg.train;
    options.epochs = 1;
    options.seed = derive_seed(cfg.seed, kSeedFinetune, static_cast<std::uint64_t>(epoch));
    model = finetune_adversarial(std::move(model), train, transforms, options, cfg.lr_scale);
    record(epoch);
  }
  if (!cfg.model_out.empty()) save_weights(std::filesystem::path(cfg.model_out), model);
  emit(cfg.out, table.str(), out);
  return kExitOk;
}

struct Command {
  std::string description;
  std::function<void(CLI::App&, RunConfig&)> options;
  std::function<int(const RunConfig&, std::ostream&)> run;
};

const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table = {
      {"train",
       {"train a classifier with SGD",
        [](CLI::App& app, RunConfig& c) {
          add_dataset_options(app, c.data);
          add_dataset_options(app, c.test_data, "test-");
          app.add_option("--arch", c.arch, "linear, mlp or cnn");
          app.add_option("--hidden", c.hidden, "MLP hidden width");
          app.add_option("--classes", c.classes, "number of classes (default: max label + 1)");
          app.add_option("--epochs", c.train.epochs);
          app.add_option("--lr", c.train.learning_rate);
          app.add_option("--batch", c.train.batch_size);
          app.add_option("--model-out", c.model_out, "weights file to write");
        },
        cmd_train}},
      {"attack",
       {"find a minimal fooling transformation for one image",
        [](CLI::App& app, RunConfig& c) {
          add_dataset_options(app, c.data);
          app.add_option("--model", c.model);
          app.add_option("--image", c.image, "P5 PGM input");
          app.add_option("--index", c.index, "dataset row to attack");
          app.add_option("--label", c.label, "true label of the image");
          add_attack_options(app, c);
          add_geodesic_options(app, c);
          app.add_option("--transform-out", c.transform_out);
          app.add_option("--image-out", c.image_out);
          app.add_option("--trace-out", c.trace_out);
        },
        cmd_attack}},
      {"eval-rho",
       {"invariance score over a dataset",
        [](CLI::App& app, RunConfig& c) {
          add_dataset_options(app, c.data);
          app.add_option("--model", c.model);
          add_attack_options(app, c);
          add_geodesic_options(app, c);
        },
        cmd_eval_rho}},
      {"eval-curve",
       {"misclassification rate of random transforms versus score",
        [](CLI::App& app, RunConfig& c) {
          add_dataset_options(app, c.data);
          app.add_option("--model", c.model);
          app.add_option("--group", c.group);
          app.add_option("--r-grid", c.r_grid, "comma-separated increasing scores");
          app.add_option("--reps", c.reps, "random transforms per image and score");
          add_geodesic_options(app, c);
        },
        cmd_eval_curve}},
      {"sample",
       {"draw a random transform with a given score",
        [](CLI::App& app, RunConfig& c) {
          add_dataset_options(app, c.data);
          app.add_option("--image", c.image);
          app.add_option("--index", c.index);
          app.add_option("--group", c.group);
          app.add_option("--r", c.r, "target normalized score");
          add_geodesic_options(app, c);
          app.add_option("--transform-out", c.transform_out);
          app.add_option("--image-out", c.image_out);
        },
        cmd_sample}},
      {"finetune",
       {"fine-tune on fooling, random or clean images and report the invariance score",
        [](CLI::App& app, RunConfig& c) {
          add_dataset_options(app, c.data);
          add_dataset_options(app, c.test_data, "eval-");
          app.add_option("--model", c.model);
          app.add_option("--model-out", c.model_out);
          app.add_option("--mode", c.mode, "minimal, random or baseline");
          app.add_option("--epochs", c.train.epochs);
          app.add_option("--lr", c.train.learning_rate);
          app.add_option("--lr-scale", c.lr_scale);
          app.add_option("--batch", c.train.batch_size);
          add_attack_options(app, c);
          add_geodesic_options(app, c);
        },
        cmd_finetune}},
      {"distance",
       {"normalized geodesic score of a transform",
        [](CLI::App& app, RunConfig& c) {
          add_dataset_options(app, c.data);
          app.add_option("--image", c.image);
          app.add_option("--index", c.index);
          app.add_option("--group", c.group);
          app.add_option("--transform", c.transform, "9 numbers, row-major");
          app.add_option("--transform-file", c.transform_file);
          add_geodesic_options(app, c);
        },
        cmd_distance}},
  };
  return table;
}

std::string usage() {
  std::string text = "usage: manifool <command> [options]\ncommands:\n";
  for (const auto& [name, cmd] : commands()) text += "  " + name + "  " + cmd.description + "\n";
  return text;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty() || args[0] == "--help" || args[0] == "-h") {
    (args.empty() ? err : out) << usage();
    return args.empty() ? kExitUsage : kExitOk;
  }
  const auto found = commands().find(args[0]);
  if (found == commands().end()) {
    err << "unknown command '" << args[0] << "'\n" << usage();
    return kExitUsage;
  }

  RunConfig cfg;
  cfg.command = args[0];
  cfg.jobs = default_jobs();
  CLI::App app(found->second.description, "manifool " + args[0]);
  app.set_config("--config", "", "key=value configuration file; flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--seed", cfg.seed, "root seed");
  app.add_option("--jobs", cfg.jobs, "worker threads (default: MANIFOOL_JOBS or 1)");
  app.add_option("--out", cfg.out, "CSV output path (default: stdout)");
  app.add_option("--summary-out", cfg.summary_out, "summary CSV path");
  found->second.options(app, cfg);

  std::vector<const char*> argv;
  const std::string program = "manifool " + args[0];
  argv.push_back(program.c_str());
  for (std::size_t i = 1; i < args.size(); ++i) argv.push_back(args[i].c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    return found->second.run(cfg, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kExitUsage;
  } catch (const EmptyDataset& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const AlgorithmFailure& e) {
    err << "failed: " << e.what() << "\n";
    return kExitAlgorithmFailure;
  } catch (const AllFailed& e) {
    err << "failed: " << e.what() << "\n";
    return kExitAlgorithmFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitAlgorithmFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace manifool
