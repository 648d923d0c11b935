#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "bullettrain/config.hpp"
#include "bullettrain/dataset.hpp"
#include "bullettrain/errors.hpp"
#include "bullettrain/experiment.hpp"
#include "bullettrain/io.hpp"

using namespace bt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("bt_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig tiny_run() {
  ExperimentConfig c;
  c.seed = 3;
  c.epochs = 2;
  c.batch_size = 32;
  c.train_size = 128;
  c.test_size = 64;
  c.arch = "mlp:2-8-2";
  c.eval_steps = 5;
  return c;
}

std::string bytes_of(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("synthetic datasets are deterministic and bounded") {
  for (auto kind : {SyntheticKind::kBlobs, SyntheticKind::kRings}) {
    const Dataset a = make_synthetic(kind, 101, 0.2, 7);
    const Dataset b = make_synthetic(kind, 101, 0.2, 7);
    const Dataset c = make_synthetic(kind, 101, 0.2, 8);
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK_FALSE(a.inputs == c.inputs);
    CHECK(a.size() == 101);
    CHECK_NOTHROW(a.validate());
    for (double v : a.inputs.data()) CHECK((v >= a.low && v <= a.high));
  }
  CHECK(make_synthetic(SyntheticKind::kRings, 10, 0.1, 1).provenance == "synthetic-rings");
  CHECK_THROWS_AS(make_synthetic(SyntheticKind::kBlobs, 1, 0.1, 1), ArgumentError);
}

TEST_CASE("noise-free blobs are separated by the x = 0 line") {
  const Dataset d = make_synthetic(SyntheticKind::kBlobs, 200, 0.0, 2);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK((d.inputs.at(i, 0) > 0.0) == (d.labels[i] == 1));
}

TEST_CASE("blob 1-NN accuracy is near the Gaussian Bayes rate") {
  const double bayes = 0.5 * std::erfc(-(0.5 / 0.2) / std::sqrt(2.0));
  CHECK(bayes == doctest::Approx(0.99379).epsilon(1e-5));
  const Dataset train = make_synthetic(SyntheticKind::kBlobs, 2000, 0.2, 11);
  const Dataset test = make_synthetic(SyntheticKind::kBlobs, 2000, 0.2, 12);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Label label = 0;
    for (std::size_t j = 0; j < train.size(); ++j) {
      const double dx = test.inputs.at(i, 0) - train.inputs.at(j, 0);
      const double dy = test.inputs.at(i, 1) - train.inputs.at(j, 1);
      const double d2 = dx * dx + dy * dy;
      if (d2 < best) {
        best = d2;
        label = train.labels[j];
      }
    }
    correct += label == test.labels[i];
  }
  CHECK(std::abs(static_cast<double>(correct) / test.size() - bayes) < 0.03);
}

TEST_CASE("IDX round trip and format errors") {
  const fs::path dir = scratch("idx");
  Dataset d;
  d.inputs = Tensor({3, 4}, {0, 1, 0.5, 0.25, 1, 1, 0, 0, 0.2, 0.4, 0.6, 0.8});
  for (double& v : d.inputs.data()) v = std::round(v * 255) / 255;
  d.labels = {1, 0, 9};
  d.classes = 10;
  d.height = 2;
  d.width = 2;
  write_mnist_idx(d, dir / "img", dir / "lbl");
  const Dataset back = load_mnist_idx(dir / "img", dir / "lbl");
  CHECK(back.inputs == d.inputs);
  CHECK(back.labels == d.labels);
  CHECK(back.height == 2);
  CHECK(back.width == 2);
  CHECK(back.provenance == "mnist-idx");

  std::string img = bytes_of(dir / "img");
  CHECK(img.size() == 16 + 12);
  write_file_atomic(dir / "short", img.substr(0, img.size() - 5));
  try {
    load_mnist_idx(dir / "short", dir / "lbl");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 23);
    CHECK(std::string(e.what()).find("28") != std::string::npos);
  }

  std::string bad = img;
  bad[3] = 0x01;
  write_file_atomic(dir / "bad", bad);
  try {
    load_mnist_idx(dir / "bad", dir / "lbl");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }

  std::string lbl = bytes_of(dir / "lbl");
  lbl[7] = 4;  // claims four labels
  write_file_atomic(dir / "lbl4", lbl + std::string(1, '\0'));
  CHECK_THROWS_AS(load_mnist_idx(dir / "img", dir / "lbl4"), FormatError);
  CHECK_THROWS_AS(load_mnist_idx(dir / "missing", dir / "lbl"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("official MNIST test split when available") {
  const char* env = std::getenv("BULLETTRAIN_MNIST_DIR");
  const fs::path dir = env ? env : "";
  if (!env || !fs::exists(dir / "t10k-images-idx3-ubyte")) return;
  const Dataset t = load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  CHECK(t.size() == 10000);
  CHECK(t.features() == 784);
  CHECK(t.height == 28);
  CHECK(t.labels[0] == 7);
  CHECK(t.labels[1] == 2);
}

TEST_CASE("config round trips through both formats") {
  ExperimentConfig c;
  c.algorithm = "baseline";
  c.seed = 123;
  c.epsilon = 0.1 + 0.2;
  c.gamma = 0.65;
  c.lr_decay_epochs = "5,8";
  c.random_init = false;
  c.arch = "in=1x28x28 conv=8k5s2p2 dense=10";
  CHECK(parse_config(serialize_config(c)) == c);
  CHECK(parse_config(config_to_json(c)) == c);
  CHECK(parse_config(serialize_config(ExperimentConfig{})) == ExperimentConfig{});

  const auto kv = parse_config_kv("# comment\n[run]\nseed = 9\n\n[mining]\ngamma = 0.7  # inline\n");
  CHECK(kv.seed == 9);
  CHECK(kv.gamma == 0.7);

  CHECK_THROWS_AS(parse_config_kv("[run]\nsede = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_kv("[nope]\nseed = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_json(R"({"run": {"sede": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_kv("[run]\nseed = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_kv("[run]\nalgorithm = \"fast\"\n").validate(), ConfigError);

  ExperimentConfig s;
  s.set("budget.robust_steps", "3");
  CHECK(s.robust_steps == 3);
  CHECK(s.get("budget.robust_steps") == "3");
  CHECK_THROWS_AS(s.set("budget.unknown", "1"), ConfigError);
}

TEST_CASE("metrics CSV schema is pinned") {
  CHECK(kMetricsSchemaVersion == 1);
  const auto& cols = metrics_columns();
  CHECK(cols == std::vector<std::string>{"epoch", "clean_acc", "robust_acc", "F_B", "F_R", "F_O", "gen_steps",
                                         "loss_passes", "F_R_estimate"});
  EpochMetrics e;
  e.epoch = 1;
  e.clean_acc = 0.5;
  e.fractions = Fractions{0.25, 0.5, 0.25};
  e.gen_steps = 10;
  e.loss_passes = 4;
  const std::string csv = metrics_csv({e});
  CHECK(csv.rfind("epoch,clean_acc,robust_acc,F_B,F_R,F_O,gen_steps,loss_passes,F_R_estimate\n", 0) == 0);
  CHECK(csv.find("wall_ms") == std::string::npos);
  CHECK(timing_csv({e}).rfind("epoch,wall_ms\n", 0) == 0);
}

TEST_CASE("reruns write byte-identical metrics and fractions sum to one") {
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  const ExperimentConfig cfg = tiny_run();
  const RunResult ra = run_experiment(cfg, a);
  const RunResult rb = run_experiment(cfg, b);
  for (const char* file : {"metrics.csv", "summary.json", "checkpoint.json"}) {
    CHECK(bytes_of(a / file) == bytes_of(b / file));
  }
  CHECK(fs::exists(a / "manifest.json"));
  CHECK(fs::exists(a / "timing.csv"));
  CHECK(ra.model.parameters() == rb.model.parameters());
  REQUIRE(ra.epochs.size() == 2);
  for (const auto& e : ra.epochs) CHECK(std::abs(e.fractions.total() - 1.0) < 1e-9);

  std::istringstream rows(bytes_of(a / "metrics.csv"));
  std::string line;
  std::getline(rows, line);
  std::size_t n = 0;
  while (std::getline(rows, line)) {
    ++n;
    CHECK(std::count(line.begin(), line.end(), ',') == 8);
  }
  CHECK(n == 2);

  const std::string manifest = bytes_of(a / "manifest.json");
  CHECK(manifest.find(version_string()) != std::string::npos);
  CHECK(manifest.find("\"seed\"") != std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("compare reports baseline over accelerated ledger") {
  const fs::path dir = scratch("compare");
  const Comparison c = compare_runs(tiny_run(), dir);
  CHECK(c.baseline.algorithm == "baseline");
  CHECK(c.measured_speedup ==
        doctest::Approx(c.baseline.ledger.cost(CostModel::kCriticalPath) /
                        c.accelerated.ledger.cost(CostModel::kCriticalPath))
            .epsilon(1e-12));
  CHECK(fs::exists(dir / "compare.json"));
  fs::remove_all(dir);
}

TEST_CASE("leave-one-out plan") {
  const auto plan = leave_one_out_plan(7, {0}, false);
  REQUIRE(plan.size() == 4);
  CHECK(plan[0].label == "baseline");
  CHECK((plan[0].outlier_steps == 7 && plan[0].robust_steps == 7 && plan[0].boundary_steps == 7));
  CHECK((plan[1].label == "outlier" && plan[1].outlier_steps == 0 && plan[1].boundary_steps == 7));
  CHECK((plan[3].label == "boundary" && plan[3].boundary_steps == 0 && plan[3].robust_steps == 7));
  const auto grid = leave_one_out_plan(7, {0, 3}, true);
  std::size_t grid_entries = 0;
  for (const auto& e : grid) grid_entries += e.label == "grid";
  CHECK(grid_entries == 4);
}

TEST_CASE("IO errors name the path") {
  try {
    write_file_atomic("/nonexistent_dir_bt/x.csv", "a");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("/nonexistent_dir_bt/x.csv") != std::string::npos);
  }
}
