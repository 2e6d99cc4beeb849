#include "manifool/classifier.hpp"
#include "manifool/cli.hpp"
#include "manifool/image.hpp"
#include "manifool/metrics.hpp"
#include "manifool/text.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace manifool;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) rows.push_back(split(line, ','));
  return rows;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  fs::path dir;
  Workspace() : dir(fs::temp_directory_path() / "manifool_cli_test") {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

const std::vector<std::string> kSynth = {"--synth-n", "20", "--synth-width", "16",
                                         "--synth-height", "16", "--synth-offsets", "-3,0;3,0"};

std::vector<std::string> with(std::vector<std::string> args, const std::vector<std::string>& more) {
  args.insert(args.end(), more.begin(), more.end());
  return args;
}

std::string train_linear(const Workspace& ws) {
  const std::string model = ws / "linear.mfw";
  const Run r = run(with({"train", "--arch", "linear", "--epochs", "10", "--lr", "0.1",
                          "--seed", "3", "--model-out", model},
                         kSynth));
  REQUIRE(r.code == 0);
  return model;
}

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"bogus"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({"train", "--help"}).code == kExitOk);
  CHECK(run({"train", "--no-such-flag"}).code == kExitUsage);
  Workspace ws;
  const Run missing = run({"train", "--model-out", ws / "m.mfw"});
  CHECK(missing.code == kExitUsage);
  CHECK(missing.err.find("dataset") != std::string::npos);
  CHECK(run({"train", "--arch", "resnet", "--model-out", ws / "m.mfw", "--synth-n", "2"}).code ==
        kExitUsage);
}

TEST_CASE("train on synthetic blobs") {
  Workspace ws;
  const std::string model = ws / "m.mfw";
  const Run r = run(with({"train", "--arch", "linear", "--epochs", "10", "--lr", "0.1", "--seed",
                          "3", "--model-out", model},
                         kSynth));
  REQUIRE(r.code == 0);
  const auto rows = parse_csv(r.out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == std::vector<std::string>{"arch", "epochs", "train_accuracy", "test_accuracy",
                                            "final_loss"});
  CHECK(std::stod(rows[1][2]) >= 0.95);
  CHECK(fs::exists(model));
  CHECK(!fs::exists(model + ".tmp"));
  CHECK(load_weights(fs::path(model)).num_classes() == 2);
}

TEST_CASE("train with zero epochs writes the initialized weights") {
  Workspace ws;
  const std::string a = ws / "a.mfw", b = ws / "b.mfw";
  REQUIRE(run(with({"train", "--arch", "mlp", "--hidden", "8", "--epochs", "0", "--seed", "5",
                    "--model-out", a},
                   kSynth))
              .code == 0);
  REQUIRE(run(with({"train", "--arch", "mlp", "--hidden", "8", "--epochs", "0", "--seed", "5",
                    "--model-out", b},
                   kSynth))
              .code == 0);
  CHECK(read_file(a) == read_file(b));
  const ClassifierModel m = load_weights(fs::path(a));
  CHECK(m.hidden_width() == 8);
  for (float v : m.parameters()) CHECK(v != 0.0f);
}

TEST_CASE("attack an analytic model through the CLI") {
  Workspace ws;
  // Blob at x = -3 on a 28x28 frame, stored as an 8-bit PGM.
  Image blob(28, 28);
  for (int r = 0; r < 28; ++r) {
    for (int c = 0; c < 28; ++c) {
      const Point p = pixel_to_centered(blob, c, r);
      blob.at(c, r) = std::exp(-((p.x + 3) * (p.x + 3) + p.y * p.y) / 12.5);
    }
  }
  write_pgm(fs::path(ws / "blob.pgm"), blob);
  const Image img = read_pgm(fs::path(ws / "blob.pgm"));
  double mass = 0.0;
  for (double v : img.pixels()) mass += v;

  // Class 1 scores the first moment along x; it wins past x = -0.6.
  ClassifierModel model(Architecture::LinearSoftmax, 2, 28, 28);
  for (int r = 0; r < 28; ++r) {
    for (int c = 0; c < 28; ++c) {
      model.parameters()[784 + static_cast<std::size_t>(r * 28 + c)] =
          static_cast<float>(pixel_to_centered(img, c, r).x);
    }
  }
  model.parameters()[2 * 784 + 1] = static_cast<float>(0.6 * mass);
  save_weights(fs::path(ws / "analytic.mfw"), model);

  const Run r = run({"attack", "--model", ws / "analytic.mfw", "--image", ws / "blob.pgm",
                     "--group", "translation", "--transform-out", ws / "t.txt", "--image-out",
                     ws / "fooled.pgm", "--trace-out", ws / "trace.csv"});
  REQUIRE(r.code == 0);
  const auto rows = parse_csv(r.out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == std::vector<std::string>{"success", "score", "original_label", "new_label",
                                            "iterations", "transform"});
  CHECK(rows[1][0] == "1");
  CHECK(rows[1][3] == "1");
  const double score = std::stod(rows[1][1]);
  const auto oracle = oracle_min_translation(img, model, 0, 6.0, 0.25);
  REQUIRE(oracle);
  CHECK(std::abs(score - oracle->score) <= 0.2 * oracle->score);

  const Transform t = parse_transform(read_file(ws / "t.txt"));
  CHECK(format_transform(t) == rows[1][5]);
  CHECK(predict(model, warp(img, t)) == 1);
  CHECK(read_pgm(fs::path(ws / "fooled.pgm")).same_shape(img));
  const auto trace = parse_csv(read_file(ws / "trace.csv"));
  CHECK(trace.size() == static_cast<std::size_t>(std::stoi(rows[1][4])) + 1);
  CHECK(trace[0][0] == "iteration");

  // The distance command agrees with the attack's score.
  const Run d = run({"distance", "--image", ws / "blob.pgm", "--group", "translation",
                     "--transform-file", ws / "t.txt"});
  REQUIRE(d.code == 0);
  CHECK(parse_csv(d.out)[1][0] == rows[1][1]);

  SUBCASE("already misclassified") {
    const Run m = run({"attack", "--model", ws / "analytic.mfw", "--image", ws / "blob.pgm",
                       "--label", "1"});
    REQUIRE(m.code == 0);
    const auto mr = parse_csv(m.out);
    CHECK(mr[1][0] == "1");
    CHECK(mr[1][1] == "0");
    CHECK(mr[1][4] == "0");
    CHECK(mr[1][5] == "1 0 0 0 1 0 0 0 1");
  }
  SUBCASE("no iterations allowed") {
    const Run f = run({"attack", "--model", ws / "analytic.mfw", "--image", ws / "blob.pgm",
                       "--max-iters", "0", "--transform-out", ws / "t0.txt"});
    CHECK(f.code == kExitAlgorithmFailure);
    CHECK(parse_csv(f.out)[1][0] == "0");
    CHECK(fs::exists(ws / "t0.txt"));
  }
}

TEST_CASE("eval-rho across groups") {
  Workspace ws;
  const std::string model = train_linear(ws);
  const Run r = run(with({"eval-rho", "--model", model, "--group", "translation,similarity,affine",
                          "--limit", "6", "--out", ws / "per_image.csv"},
                         kSynth));
  REQUIRE(r.code == 0);
  const auto summary = parse_csv(r.out);
  REQUIRE(summary.size() == 4);
  CHECK(summary[0] == std::vector<std::string>{"group", "rho_hat", "failures", "images"});
  CHECK(summary[1][0] == "translation");
  CHECK(summary[3][0] == "affine");
  const auto per_image = parse_csv(read_file(ws / "per_image.csv"));
  CHECK(per_image.size() == 1 + 3 * 6);

  CHECK(run(with({"eval-rho", "--model", model, "--offset", "1000"}, kSynth)).code == kExitUsage);
  CHECK(run(with({"eval-rho", "--model", model, "--group", "warp"}, kSynth)).code == kExitUsage);
}

TEST_CASE("eval-curve emits one row per grid point") {
  Workspace ws;
  const std::string model = train_linear(ws);
  const Run r = run(with({"eval-curve", "--model", model, "--group", "similarity", "--r-grid",
                          "0.0001,0.2,0.5,1,2", "--reps", "2", "--limit", "6", "--seed", "4",
                          "--out", ws / "curve.csv", "--summary-out", ws / "summary.csv"},
                         kSynth));
  CHECK((r.code == kExitOk || r.code == kExitAlgorithmFailure));
  const auto curve = parse_csv(read_file(ws / "curve.csv"));
  CHECK(curve.size() == 6);
  const auto summary = parse_csv(read_file(ws / "summary.csv"));
  REQUIRE(summary.size() == 2);
  CHECK(summary[0] == std::vector<std::string>{"group", "r_hat"});
  CHECK((summary[1][1] == "nan") == (r.code == kExitAlgorithmFailure));
  CHECK(run(with({"eval-curve", "--model", model, "--r-grid", "0.5,0.2"}, kSynth)).code ==
        kExitUsage);
}

TEST_CASE("sample and distance") {
  Workspace ws;
  const Run s = run(with({"sample", "--index", "1", "--group", "affine", "--r", "0.3", "--seed",
                          "9", "--transform-out", ws / "t.txt"},
                         kSynth));
  REQUIRE(s.code == 0);
  const auto rows = parse_csv(s.out);
  CHECK(std::abs(std::stod(rows[1][1]) - 0.3) <= 3e-4);
  const Run d = run(with({"distance", "--index", "1", "--group", "affine", "--seed", "9",
                          "--transform-file", ws / "t.txt"},
                         kSynth));
  REQUIRE(d.code == 0);
  CHECK(parse_csv(d.out)[1][0] == rows[1][1]);

  const Run id = run(with({"distance", "--index", "0", "--transform", "1 0 0 0 1 0 0 0 1"}, kSynth));
  REQUIRE(id.code == 0);
  CHECK(parse_csv(id.out)[1][0] == "0");
  CHECK(run(with({"distance", "--index", "0", "--transform", "1 0 0"}, kSynth)).code == kExitIo);
}

TEST_CASE("finetune baseline with zero epochs keeps the score") {
  Workspace ws;
  const std::string model = train_linear(ws);
  const Run r = run(with({"finetune", "--model", model, "--mode", "baseline", "--epochs", "0",
                          "--group", "translation", "--limit", "6"},
                         kSynth));
  REQUIRE(r.code == 0);
  const auto rows = parse_csv(r.out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == std::vector<std::string>{"mode", "epoch", "rho_before", "rho_after", "failures",
                                            "accuracy"});
  CHECK(rows[1][2] == rows[1][3]);
  CHECK(run(with({"finetune", "--model", model, "--mode", "odd"}, kSynth)).code == kExitUsage);
}

TEST_CASE("finetune minimal writes a model and one row per epoch") {
  Workspace ws;
  const std::string model = train_linear(ws);
  const Run r = run(with({"finetune", "--model", model, "--mode", "minimal", "--epochs", "2",
                          "--group", "translation", "--limit", "6", "--model-out",
                          ws / "tuned.mfw"},
                         kSynth));
  REQUIRE(r.code == 0);
  CHECK(parse_csv(r.out).size() == 4);
  CHECK(fs::exists(ws / "tuned.mfw"));
}

TEST_CASE("config files") {
  Workspace ws;
  const std::string model = train_linear(ws);
  {
    std::ofstream cfg(ws / "run.cfg");
    cfg << "model=" << model << "\ngroup=translation\nsynth-n=20\nsynth-width=16\n"
        << "synth-height=16\nlimit=4\nseed=2\n";
  }
  const Run a = run({"eval-rho", "--config", ws / "run.cfg"});
  REQUIRE(a.code == 0);
  CHECK(parse_csv(a.out)[1][0] == "translation");
  // Flags win over the file.
  const Run b = run({"eval-rho", "--config", ws / "run.cfg", "--group", "similarity"});
  REQUIRE(b.code == 0);
  CHECK(parse_csv(b.out)[1][0] == "similarity");
  {
    std::ofstream cfg(ws / "bad.cfg");
    cfg << "model=" << model << "\nsynth-n=4\nfrobnicate=1\n";
  }
  CHECK(run({"eval-rho", "--config", ws / "bad.cfg"}).code == kExitUsage);
}

TEST_CASE("io errors") {
  Workspace ws;
  CHECK(run(with({"eval-rho", "--model", ws / "absent.mfw"}, kSynth)).code == kExitIo);
  {
    std::ofstream bad(ws / "bad.mfw");
    bad << "XXXX";
  }
  CHECK(run(with({"eval-rho", "--model", ws / "bad.mfw"}, kSynth)).code == kExitIo);
  CHECK(run({"train", "--images", ws / "none.idx", "--labels", ws / "none.idx", "--model-out",
             ws / "m.mfw"})
            .code == kExitIo);
}

TEST_CASE("outputs are reproducible across runs and job counts") {
  Workspace ws;
  const std::string model = train_linear(ws);
  auto eval = [&](const std::string& jobs, const std::string& name) {
    const Run r = run(with({"eval-rho", "--model", model, "--group", "similarity", "--limit", "6",
                            "--seed", "8", "--jobs", jobs, "--out", ws / name},
                           kSynth));
    REQUIRE(r.code == 0);
    return r.out + read_file(ws / name);
  };
  const std::string one = eval("1", "a.csv");
  CHECK(eval("1", "b.csv") == one);
  CHECK(eval("4", "c.csv") == one);
}

TEST_CASE("the installed binary maps exit codes") {
  auto status = [](const std::string& args) {
    const std::string cmd = std::string(MANIFOOL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("") == 2);
  CHECK(status("--help") == 0);
  CHECK(status("train") == 2);
  CHECK(status("eval-rho --model /nonexistent.mfw --synth-n 2") == 3);
}
