// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
// on any failure. Each criterion also has a wall-clock budget.

#include "manifool/attack.hpp"
#include "manifool/classifier.hpp"
#include "manifool/data.hpp"
#include "manifool/errors.hpp"
#include "manifool/geodesic.hpp"
#include "manifool/image.hpp"
#include "manifool/metrics.hpp"
#include "manifool/transform_group.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace manifool;
namespace fs = std::filesystem;

namespace {

constexpr GroupKind kAllGroups[] = {GroupKind::Translation, GroupKind::RotationTranslation,
                                    GroupKind::ScaleTranslation, GroupKind::Similarity,
                                    GroupKind::Affine, GroupKind::Projective};

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Accumulates checks; the first few failures are kept for the report.
struct Checker {
  Outcome out;
  int failures = 0;
  void require(bool ok, const std::string& what) {
    if (ok) return;
    out.pass = false;
    if (++failures <= 3) out.detail += (out.detail.empty() ? "" : "; ") + what;
  }
  void note(const std::string& text) { out.detail += (out.detail.empty() ? "" : "; ") + text; }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

Image gaussian(int w, int h, double cx, double cy, double sigma, double amp = 1.0) {
  Image img(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Point p = pixel_to_centered(img, c, r);
      const double dx = p.x - cx, dy = p.y - cy;
      img.at(c, r) = amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    }
  }
  return img;
}

// Two blobs: smooth and without symmetry under any of the groups.
Image fixture(int k) {
  Image a = gaussian(40, 40, -3.0 + k, 2.0, 4.0);
  const Image b = gaussian(40, 40, 4.0, -2.0 - k, 2.5, 0.6);
  for (std::size_t i = 0; i < a.size(); ++i) a.pixels()[i] += b.pixels()[i];
  return a;
}

Image bilinear_poly(int w, int h, double a, double b, double c, double d) {
  Image img(w, h);
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      const Point p = pixel_to_centered(img, col, r);
      img.at(col, r) = a + b * p.x + c * p.y + d * p.x * p.y;
    }
  }
  return img;
}

Coeffs random_coeffs(const TransformGroup& g, std::mt19937_64& rng, double norm) {
  std::normal_distribution<double> normal;
  Coeffs u(g.dim());
  for (int j = 0; j < g.dim(); ++j) u[j] = normal(rng);
  // Projective generators act on unnormalized pixel coordinates.
  if (g.projective()) u.tail(2) *= 0.02;
  return u * (norm / u.norm());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Shared fixtures built once before the criteria run.
struct Context {
  LabeledDataset train;
  LabeledDataset test;
  ClassifierModel cnn{Architecture::SmallCNN, 10, 28, 28};
  double test_accuracy = 0.0;
  // Correctly classified test images, in dataset order.
  LabeledDataset eval;
};

// ---------------------------------------------------------------------------

Outcome lie_algebra(const Context&) {
  Checker c;
  std::mt19937_64 rng(101);
  for (GroupKind kind : kAllGroups) {
    const TransformGroup g(kind);
    c.require(exp_map(TangentVector(g, Coeffs::Zero(g.dim()))).matrix() == Matrix3::Identity(),
              std::string(group_kind_name(kind)) + ": exp(0) != I");
    double worst = 0.0;
    std::uniform_real_distribution<double> radius(0.0, 0.5);
    for (int s = 0; s < 100; ++s) {
      const Coeffs u = random_coeffs(g, rng, radius(rng));
      const TangentVector back = log_map(exp_map(TangentVector(g, u)), g);
      worst = std::max(worst, (back.coeffs - u).cwiseAbs().maxCoeff());
    }
    c.require(worst <= 1e-9, std::string(group_kind_name(kind)) + " round-trip " + fmt(worst));
  }
  const TransformGroup rt(GroupKind::RotationTranslation);
  for (double theta : {-1.2, 0.3, 2.0}) {
    Coeffs u = Coeffs::Zero(rt.dim());
    u[2] = theta;
    const Matrix3 m = exp_map(TangentVector(rt, u)).matrix();
    Matrix3 expect = Matrix3::Identity();
    expect(0, 0) = expect(1, 1) = std::cos(theta);
    expect(0, 1) = -std::sin(theta);
    expect(1, 0) = std::sin(theta);
    c.require((m - expect).cwiseAbs().maxCoeff() <= 1e-12, "rotation closed form");
    c.require((m - Transform::rotation(theta).matrix()).cwiseAbs().maxCoeff() <= 1e-12,
              "rotation constructor");
  }
  const TransformGroup tr(GroupKind::Translation);
  for (auto [a, b] : {std::pair{1.5, -2.0}, {0.0, 7.25}}) {
    const Matrix3 m = exp_map(TangentVector(tr, Coeffs{{a, b}})).matrix();
    c.require((m - Transform::translation(a, b).matrix()).cwiseAbs().maxCoeff() <= 1e-12,
              "translation closed form");
  }
  return c.out;
}

Outcome warping(const Context& ctx) {
  Checker c;
  for (std::size_t i = 0; i < 20; ++i) {
    const Image& img = ctx.test.images[i];
    c.require(warp(img, Transform::identity()) == img, "identity warp not bit-identical");
    for (auto [dx, dy] : {std::pair{1, 0}, {-3, 2}, {0, -5}}) {
      const Image moved = warp(img, Transform::translation(dx, dy));
      bool same = true;
      for (int r = 0; r < img.height(); ++r) {
        for (int col = 0; col < img.width(); ++col) {
          const int sc = col - dx, sr = r - dy;
          const bool inside = sc >= 0 && sc < img.width() && sr >= 0 && sr < img.height();
          same = same && moved.at(col, r) == (inside ? img.at(sc, sr) : 0.0);
        }
      }
      c.require(same, "integer shift differs from array shift");
    }
  }
  std::mt19937_64 rng(17);
  double worst = 0.0;
  for (GroupKind kind : {GroupKind::Similarity, GroupKind::Affine, GroupKind::Projective}) {
    const TransformGroup g(kind);
    for (int s = 0; s < 10; ++s) {
      const Image img = gaussian(32, 32, 1.0, -0.5, 4.0);
      const Transform t = exp_map(TangentVector(g, random_coeffs(g, rng, 0.2)));
      const Image back = warp(warp(img, t), t.inverse());
      for (int r = 8; r < 24; ++r) {
        for (int col = 8; col < 24; ++col) {
          worst = std::max(worst, std::abs(back.at(col, r) - img.at(col, r)));
        }
      }
    }
  }
  c.require(worst <= 0.05, "round-trip error " + fmt(worst));
  c.note("worst round-trip " + fmt(worst));
  return c.out;
}

Outcome gradients(const Context& ctx) {
  Checker c;
  // Blank MNIST background puts whole pooling windows on exact ties, where
  // the network is not differentiable; a little noise moves off them.
  std::mt19937_64 rng(23);
  Image img = ctx.test.images[0];
  std::uniform_real_distribution<double> noise(0.0, 0.01);
  for (double& v : img.pixels()) v += noise(rng);
  std::uniform_int_distribution<std::size_t> pick(0, img.size() - 1);
  for (auto arch : {Architecture::LinearSoftmax, Architecture::MLP, Architecture::SmallCNN}) {
    const ClassifierModel m =
        arch == Architecture::SmallCNN ? ctx.cnn : ClassifierModel::initialized(arch, 10, 28, 28, 7, 32);
    std::vector<double> weights(10);
    for (std::size_t k = 0; k < 10; ++k) weights[k] = std::cos(1.0 + static_cast<double>(k));
    const auto grad = input_gradient(m, img, weights);
    auto weighted = [&](const Image& x) {
      const auto s = forward(m, x);
      double v = 0.0;
      for (std::size_t k = 0; k < s.size(); ++k) v += weights[k] * s[k];
      return v;
    };
    double worst = 0.0;
    for (int s = 0; s < 20; ++s) {
      const std::size_t i = pick(rng);
      Image plus = img, minus = img;
      plus.pixels()[i] += 1e-4;
      minus.pixels()[i] -= 1e-4;
      const double fd = (weighted(plus) - weighted(minus)) / 2e-4;
      const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
      worst = std::max(worst, std::abs(fd - grad[i]) / scale);
    }
    c.require(worst <= 1e-4, std::string(architecture_name(arch)) + " gradient error " + fmt(worst));
  }

  // Halving the step divides the tangent error by about four.
  const Image poly = bilinear_poly(40, 40, 0.5, 0.01, -0.02, 0.002);
  double lo = 1e9, hi = 0.0;
  for (GroupKind kind : {GroupKind::Similarity, GroupKind::Affine, GroupKind::Projective}) {
    const TransformGroup g(kind);
    const double eps = g.projective() ? kDefaultTangentEpsilon / 20 : kDefaultTangentEpsilon;
    const Eigen::MatrixXd j1 = tangent_basis(poly, Transform::identity(), g, eps).columns;
    const Eigen::MatrixXd j2 = tangent_basis(poly, Transform::identity(), g, eps / 2).columns;
    const Eigen::MatrixXd j4 = tangent_basis(poly, Transform::identity(), g, eps / 4).columns;
    double e1 = 0.0, e2 = 0.0;
    for (int r = 8; r < 32; ++r) {
      for (int col = 8; col < 32; ++col) {
        const auto i = static_cast<Eigen::Index>(r * 40 + col);
        e1 += (j1.row(i) - j2.row(i)).squaredNorm();
        e2 += (j2.row(i) - j4.row(i)).squaredNorm();
      }
    }
    const double ratio = std::sqrt(e1 / e2);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
    c.require(ratio >= 3.0 && ratio <= 5.0,
              std::string(group_kind_name(kind)) + " Richardson ratio " + fmt(ratio));
  }
  c.note("Richardson ratios in [" + fmt(lo) + ", " + fmt(hi) + "]");
  return c.out;
}

Outcome attack_postconditions(const Context& ctx) {
  Checker c;
  int runs = 0, successes = 0;
  auto verify = [&](const Image& img, const ClassifierModel& model, const TransformGroup& g) {
    ++runs;
    const FoolResult res = manifool_multiclass(img, model, g);
    if (!res.success) return;
    ++successes;
    const int flipped = predict(model, warp(img, res.tau_hat));
    c.require(flipped != res.original_label, "success without a label flip");
    c.require(flipped == res.new_label, "reported label differs from prediction");
    c.require(res.fooled_image == warp(img, res.tau_hat), "fooled image differs from warp");
    const double err = recompose(res.trace, g).max_abs_diff(res.tau_hat);
    c.require(err <= 1e-10, "recomposition error " + fmt(err));
  };
  for (std::size_t i = 0; i < 36; ++i) {
    const TransformGroup g(kAllGroups[i % std::size(kAllGroups)]);
    verify(ctx.eval.images[i], ctx.cnn, g);
  }
  const LabeledDataset blobs = synth_blobs(10, 20, 20, {{-3, 0}, {3, 0}}, 2.0, 5);
  TrainOptions opt;
  opt.epochs = 10;
  opt.learning_rate = 0.1;
  opt.seed = 1;
  const ClassifierModel linear = train_sgd(
      ClassifierModel::initialized(Architecture::LinearSoftmax, 2, 20, 20, 3), blobs, opt);
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const TransformGroup g(kAllGroups[i % 5]);
    verify(blobs.images[i], linear, g);
  }
  c.require(runs >= 50, "only " + std::to_string(runs) + " runs");
  c.require(successes > 0, "no successful attack");
  c.note(std::to_string(successes) + "/" + std::to_string(runs) + " successes verified");
  return c.out;
}

Outcome geodesic_suite(const Context&) {
  Checker c;
  std::mt19937_64 rng(31);
  for (GroupKind kind : kAllGroups) {
    const TransformGroup g(kind);
    for (int s = 0; s < 10; ++s) {
      const Image img = fixture(s % 3);
      const Transform t = exp_map(TangentVector(g, random_coeffs(g, rng, 1.5)));
      const double chord = l2_distance(warp(img, t), img);
      c.require(geodesic_distance(img, t, g) >= chord - 1e-9, "chord bound violated");
    }
  }
  double worst_conv = 0.0;
  for (GroupKind kind : {GroupKind::Translation, GroupKind::RotationTranslation,
                         GroupKind::Similarity, GroupKind::Affine}) {
    const TransformGroup g(kind);
    for (int s = 0; s < 3; ++s) {
      const Image img = fixture(s);
      const Transform t = exp_map(TangentVector(g, random_coeffs(g, rng, 1.0)));
      const double coarse = geodesic_distance(img, t, g, {0.05, 100000});
      const double fine = geodesic_distance(img, t, g, {0.025, 100000});
      worst_conv = std::max(worst_conv, std::abs(coarse - fine) / fine);
    }
  }
  c.require(worst_conv <= 0.01, "self-convergence " + fmt(worst_conv));
  int samples = 0, ok = 0;
  double worst_rel = 0.0;
  for (GroupKind kind : {GroupKind::Translation, GroupKind::RotationTranslation,
                         GroupKind::Similarity, GroupKind::Affine}) {
    const TransformGroup g(kind);
    for (double r : {0.05, 0.2, 0.5, 1.0}) {
      for (std::uint64_t seed = 0; seed < 4; ++seed) {
        ++samples;
        const Image img = fixture(static_cast<int>(seed % 3));
        try {
          const SampledTransform s = sample_random_transform(img, g, r, seed);
          const double rel = std::abs(normalized_score(img, s.transform, g) - r) / r;
          worst_rel = std::max(worst_rel, rel);
          c.require(rel <= 1e-3, "sample off target by " + fmt(rel));
          ++ok;
        } catch (const BracketFailure&) {
        }
      }
    }
  }
  c.require(ok > 0, "sampler never succeeded");
  c.note("self-convergence " + fmt(worst_conv) + ", sampler " + std::to_string(ok) + "/" +
         std::to_string(samples) + " within " + fmt(worst_rel));
  return c.out;
}

Outcome oracle_comparison(const Context& ctx) {
  Checker c;
  const TransformGroup g(GroupKind::Translation);
  std::vector<double> ratios;
  for (std::size_t i = 0; i < ctx.eval.size() && ratios.size() < 20; ++i) {
    const Image& img = ctx.eval.images[i];
    const auto oracle = oracle_min_translation(img, ctx.cnn, ctx.eval.labels[i], 12.0, 1.0);
    if (!oracle) continue;
    const FoolResult res = manifool_multiclass(img, ctx.cnn, g);
    c.require(res.success, "attack failed on image " + std::to_string(i));
    if (!res.success) continue;
    c.require(res.geodesic_score >= oracle->score - oracle->grid_epsilon,
              "image " + std::to_string(i) + " beats the oracle by more than one grid step");
    ratios.push_back(res.geodesic_score / oracle->score);
  }
  c.require(ratios.size() == 20, "only " + std::to_string(ratios.size()) + " comparable images");
  const double med = median(ratios);
  c.require(med <= 1.5, "median ratio " + fmt(med));
  c.note("median ratio " + fmt(med) + " over " + std::to_string(ratios.size()) + " images");
  return c.out;
}

Outcome group_trend(const Context& ctx) {
  Checker c;
  const LabeledDataset subset = ctx.test.slice(0, 100);
  std::vector<double> rho;
  for (GroupKind kind :
       {GroupKind::Translation, GroupKind::RotationTranslation, GroupKind::Similarity}) {
    rho.push_back(invariance_score(subset, ctx.cnn, TransformGroup(kind)).rho_hat);
  }
  c.require(rho[0] > rho[1] && rho[1] > rho[2], "ordering violated");
  c.note("rho T " + fmt(rho[0]) + ", RT " + fmt(rho[1]) + ", Sim " + fmt(rho[2]));
  return c.out;
}

Outcome curve_shape(const Context& ctx) {
  Checker c;
  const LabeledDataset subset = ctx.test.slice(0, 100);
  const std::vector<double> grid{0.05, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0};
  const RobustnessCurve curve =
      misclassification_curve(subset, ctx.cnn, TransformGroup(GroupKind::Similarity), grid, 3, 1);
  std::vector<double> rs, rates;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (curve.valid[k] == 0) continue;
    rs.push_back(grid[k]);
    rates.push_back(curve.misclassification_rate[k]);
  }
  c.require(curve.valid[0] > 0 && curve.misclassification_rate[0] <= 0.05,
            "rate at smallest r " + fmt(curve.misclassification_rate[0]));
  const double rho = spearman(rs, rates);
  c.require(rho >= 0.8, "spearman " + fmt(rho));
  c.require(curve.r_hat.has_value(), "r_hat undefined");
  c.note("rate(r0) " + fmt(curve.misclassification_rate[0]) + ", spearman " + fmt(rho) +
         ", r_hat " + (curve.r_hat ? fmt(*curve.r_hat) : std::string("nan")));
  return c.out;
}

Outcome finetune_trends(const Context& ctx) {
  Checker c;
  const TransformGroup g(GroupKind::Affine);
  const LabeledDataset eval = ctx.test.slice(0, 200);
  TrainOptions opt;
  opt.epochs = 1;
  opt.learning_rate = 0.05;
  opt.seed = 11;

  const double rho_before = invariance_score(eval, ctx.cnn, g).rho_hat;
  const RobustnessCurve pre = misclassification_curve(
      eval, ctx.cnn, g, {0.05, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0}, 3, 21);
  if (!pre.r_hat) {
    c.require(false, "pre-fine-tuning r_hat undefined");
    return c.out;
  }

  const EvalReport pass = invariance_score(ctx.train, ctx.cnn, g);
  std::vector<std::optional<Transform>> fooling(ctx.train.size());
  for (const auto& rec : pass.per_image) {
    if (rec.success && rec.score > 0.0) fooling[rec.id] = rec.tau_hat;
  }
  const ClassifierModel minimal = finetune_adversarial(ctx.cnn, ctx.train, fooling, opt);
  const ClassifierModel baseline = finetune_adversarial(
      ctx.cnn, ctx.train, std::vector<std::optional<Transform>>(ctx.train.size()), opt);
  const double rho_minimal = invariance_score(eval, minimal, g).rho_hat;
  const double rho_baseline = invariance_score(eval, baseline, g).rho_hat;
  c.require(rho_minimal > rho_before, "rho did not increase");
  c.require(rho_minimal > rho_baseline, "minimal does not beat baseline");

  // Same seed: both models see the same random transforms at r_hat.
  const std::vector<double> at{*pre.r_hat};
  const double rate_before = misclassification_curve(eval, ctx.cnn, g, at, 5, 23).misclassification_rate[0];
  const double rate_after = misclassification_curve(eval, minimal, g, at, 5, 23).misclassification_rate[0];
  const double drop = rate_before - rate_after;
  c.require(drop >= 0.05, "rate drop " + fmt(drop));
  c.note("rho " + fmt(rho_before) + " -> minimal " + fmt(rho_minimal) + " / baseline " +
         fmt(rho_baseline) + "; rate at r_hat " + fmt(*pre.r_hat) + ": " + fmt(rate_before) +
         " -> " + fmt(rate_after));
  return c.out;
}

Outcome determinism(const Context&) {
  Checker c;
  const fs::path dir = fs::temp_directory_path() / "manifool_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string data = MANIFOOL_DATA_DIR;
  const std::string mnist = " --images " + data + "/test-images-idx3-ubyte --labels " + data +
                            "/test-labels-idx1-ubyte --limit 20";
  auto cli = [&](const std::string& args) {
    const std::string cmd = std::string(MANIFOOL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  auto p = [&](const std::string& name) { return (dir / name).string(); };

  for (const char* tag : {"a", "b"}) {
    const int code = cli("train --arch cnn --epochs 2 --seed 4 --images " + data +
                         "/train-images-idx3-ubyte --labels " + data +
                         "/train-labels-idx1-ubyte --limit 500 --model-out " + p(std::string("m_") + tag));
    c.require(code == 0, "train exited " + std::to_string(code));
  }
  c.require(read_file(p("m_a")) == read_file(p("m_b")), "train weights differ");

  struct Job {
    std::string name;
    std::string args;
  };
  const std::vector<Job> jobs_runs = {
      {"rho", "eval-rho --model " + p("m_a") + " --group translation,affine --seed 3" + mnist},
      {"curve", "eval-curve --model " + p("m_a") + " --group similarity --r-grid 0.2,1,3 --reps 2 --seed 3" +
                    mnist},
      {"ft", "finetune --model " + p("m_a") + " --mode random --group similarity --epochs 1 --seed 3" +
                 mnist},
  };
  for (const auto& job : jobs_runs) {
    std::vector<std::string> outputs;
    for (const char* jobs : {"1", "1", "3"}) {
      const std::string out = p(job.name + "_" + jobs + "_out"), sum = p(job.name + "_" + jobs + "_sum");
      fs::remove(out);
      fs::remove(sum);
      const bool split = job.name != "ft";
      const int code = cli(job.args + " --jobs " + jobs + " --out " + out +
                           (split ? " --summary-out " + sum : ""));
      c.require(code == 0, job.name + " exited " + std::to_string(code));
      outputs.push_back(read_file(out) + "|" + (split ? read_file(sum) : ""));
    }
    c.require(!outputs[0].empty() && outputs[0] == outputs[1], job.name + " rerun differs");
    c.require(outputs[0] == outputs[2], job.name + " differs across --jobs");
  }
  std::vector<std::string> singles;
  for (int rep = 0; rep < 2; ++rep) {
    const std::string a = p("attack_" + std::to_string(rep)), s = p("sample_" + std::to_string(rep));
    cli("attack --model " + p("m_a") + " --index 3 --group affine --out " + a + " --trace-out " + a +
        ".trace" + mnist);
    cli("sample --index 5 --group affine --r 0.7 --seed 9 --out " + s + mnist);
    singles.push_back(read_file(a) + read_file(a + ".trace") + read_file(s));
  }
  c.require(!singles[0].empty() && singles[0] == singles[1], "attack/sample rerun differs");
  fs::remove_all(dir);
  return c.out;
}

}  // namespace

int main() {
  using Clock = std::chrono::steady_clock;
  auto seconds = [](Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };

  Context ctx;
  const auto setup = Clock::now();
  try {
    const fs::path root = MANIFOOL_DATA_DIR;
    ctx.train = load_idx_dataset(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte");
    ctx.test = load_idx_dataset(root / "test-images-idx3-ubyte", root / "test-labels-idx1-ubyte");
    TrainOptions opt;
    opt.epochs = 10;
    opt.learning_rate = 0.05;
    opt.seed = 1;
    ctx.cnn = train_sgd(ClassifierModel::initialized(Architecture::SmallCNN, 10, 28, 28, 1),
                        ctx.train, opt);
    ctx.test_accuracy = accuracy(ctx.cnn, ctx.test);
    for (std::size_t i = 0; i < ctx.test.size(); ++i) {
      if (predict(ctx.cnn, ctx.test.images[i]) != ctx.test.labels[i]) continue;
      ctx.eval.images.push_back(ctx.test.images[i]);
      ctx.eval.labels.push_back(ctx.test.labels[i]);
    }
  } catch (const std::exception& e) {
    std::cout << "FAIL setup: " << e.what() << "\n";
    return 1;
  }
  std::cout << "setup: SmallCNN trained on " << ctx.train.size() << " MNIST images, test accuracy "
            << fmt(ctx.test_accuracy) << " on " << ctx.test.size() << " (" << fmt(seconds(setup), 3)
            << " s)\n";

  struct Criterion {
    const char* name;
    double budget_seconds;
    std::function<Outcome(const Context&)> run;
  };
  const std::vector<Criterion> criteria = {
      {"lie algebra", 5, lie_algebra},
      {"warping", 10, warping},
      {"gradients and tangent basis", 30, gradients},
      {"attack postconditions", 300, attack_postconditions},
      {"geodesic estimator and sampler", 60, geodesic_suite},
      {"translation oracle comparison", 600, oracle_comparison},
      {"group dimension trend", 1200, group_trend},
      {"misclassification curve shape", 900, curve_shape},
      {"adversarial fine-tuning trends", 1800, finetune_trends},
      {"determinism", 300, determinism},
  };

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[k].run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = seconds(t0);
    if (dt > criteria[k].budget_seconds) {
      o.pass = false;
      o.detail += (o.detail.empty() ? "" : "; ") + std::string("over time budget");
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (k + 1) << " " << criteria[k].name << " ("
              << fmt(dt, 3) << " s" << (o.detail.empty() ? "" : "; " + o.detail) << ")\n"
              << std::flush;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
