#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "bullettrain/autodiff.hpp"
#include "bullettrain/errors.hpp"
#include "bullettrain/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace bt;
using bt::testing::check_gradients;
using bt::testing::project;
using bt::testing::random_away_from_zero;
using bt::testing::random_tensor;

namespace {

std::vector<double> softmax_of(std::vector<double> z) { return softmax<double>(z); }

// e^{z_k} / sum_j e^{z_j} evaluated directly, no max shift.
std::vector<double> naive_softmax(const std::vector<double>& z) {
  double total = 0.0;
  for (double v : z) total += std::exp(v);
  std::vector<double> out;
  for (double v : z) out.push_back(std::exp(v) / total);
  return out;
}

double naive_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t k) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(k);
  for (double& v : p) v = e(rng);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

TEST_CASE("softmax examples") {
  auto s = softmax_of({0, 0});
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-15));

  s = softmax_of({1000, 0});
  CHECK(std::isfinite(s[0]));
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] < 1e-300);

  const auto expected = naive_softmax({1, 2, 3});
  s = softmax_of({1, 2, 3});
  for (int k = 0; k < 3; ++k) CHECK(std::abs(s[k] - expected[k]) < 1e-12);
  CHECK(std::abs(s[0] - 0.09003) < 1e-5);
  CHECK(std::abs(s[1] - 0.24473) < 1e-5);
  CHECK(std::abs(s[2] - 0.66524) < 1e-5);
}

TEST_CASE("softmax rejects non-finite logits") {
  CHECK_THROWS_AS(softmax_of({1.0, std::numeric_limits<double>::quiet_NaN()}), NumericError);
  CHECK_THROWS_AS(softmax_of({std::numeric_limits<double>::infinity(), 0.0}), NumericError);
}

TEST_CASE("softmax sums to one and ignores a shared offset") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-30, 30);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(2 + trial % 9);
    for (double& v : z) v = u(rng);
    const auto s = softmax_of(z);
    CHECK(std::abs(std::accumulate(s.begin(), s.end(), 0.0) - 1.0) < 1e-12);
    for (double v : s) CHECK(v >= 0.0);
    const double c = u(rng);
    auto shifted = z;
    for (double& v : shifted) v += c;
    const auto s2 = softmax_of(shifted);
    for (std::size_t k = 0; k < z.size(); ++k) CHECK(std::abs(s[k] - s2[k]) < 1e-12);
  }
}

TEST_CASE("cross entropy examples") {
  const std::vector<double> confident = {20, 0, 0};
  CHECK(cross_entropy<double>(confident, 0) < 1e-8);
  CHECK(cross_entropy<double>(confident, 0) >= 0.0);

  const std::vector<double> uniform(10, 0.3);
  CHECK(cross_entropy<double>(uniform, 4) == doctest::Approx(std::log(10.0)).epsilon(1e-14));

  const std::vector<double> z = {1, 2, 3};
  const double oracle = -std::log(naive_softmax(z)[0]);
  CHECK(std::abs(cross_entropy<double>(z, 0) - oracle) < 1e-12);
  CHECK(std::abs(cross_entropy<double>(z, 0) - 2.40761) < 1e-4);

  CHECK_THROWS_AS(cross_entropy<double>(z, 3), ArgumentError);
}

TEST_CASE("kl divergence examples") {
  const std::vector<double> half = {0.5, 0.5};
  CHECK(kl_divergence<double>(half, half) == 0.0);

  const std::vector<double> onehot = {1.0, 0.0};
  CHECK(kl_divergence<double>(onehot, half) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  const std::vector<double> p = {0.7, 0.3}, q = {0.4, 0.6};
  CHECK(std::abs(kl_divergence<double>(p, q) - naive_kl(p, q)) < 1e-12);
  CHECK(std::abs(kl_divergence<double>(p, q) - 0.18378) < 1e-4);

  const std::vector<double> bad = {0.7, 0.2};
  CHECK_THROWS_AS(kl_divergence<double>(bad, q), ArgumentError);
  CHECK_THROWS_AS(kl_divergence<double>(p, bad), ArgumentError);
}

TEST_CASE("kl divergence is non-negative and zero only at p == q") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + trial % 8;
    const auto p = random_distribution(rng, k);
    const auto q = random_distribution(rng, k);
    CHECK(kl_divergence<double>(p, q) > 0.0);
    CHECK(std::abs(kl_divergence<double>(p, p)) < 1e-12);
  }
}

TEST_CASE("prediction variance examples") {
  for (std::size_t k : {2u, 3u, 10u}) {
    const std::vector<double> uniform(k, 1.0 / static_cast<double>(k));
    CHECK(std::abs(prediction_variance<double>(uniform)) < 1e-18);
  }
  std::vector<double> onehot(10, 0.0);
  onehot[3] = 1.0;
  CHECK(prediction_variance<double>(onehot) == doctest::Approx(0.09).epsilon(1e-14));

  const std::vector<double> two = {0.5, 0.5, 0.0, 0.0};
  CHECK(prediction_variance<double>(two) == doctest::Approx(0.0625).epsilon(1e-14));
}

TEST_CASE("prediction variance is maximised by one-hot vectors") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + trial % 9;
    const double bound = static_cast<double>(k - 1) / static_cast<double>(k * k);
    const auto p = random_distribution(rng, k);
    const double v = prediction_variance<double>(p);
    CHECK(v >= 0.0);
    CHECK(v <= bound + 1e-15);
  }
}

TEST_CASE("float tensors use the same kernels") {
  const std::vector<float> z = {1.f, 2.f, 3.f};
  const auto s = softmax<float>(z);
  CHECK(s[2] == doctest::Approx(0.66524f).epsilon(1e-5));
  BasicTape<float> tape;
  Var x = tape.input(TensorF({3}, {1.f, 2.f, 3.f}));
  tape.backward(tape.sum(tape.mul(x, x)));
  CHECK(tape.grad(x)[2] == doctest::Approx(6.f));
}

TEST_CASE("tensor invariants") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.all_finite());
  t[4] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ArgumentError);
  CHECK_THROWS_AS(t.reshaped({4}), ArgumentError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});

  const Tensor src({3, 2}, {1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> idx = {2, 0};
  CHECK(gather_rows(src, std::span<const std::size_t>(idx)) == Tensor({2, 2}, {5, 6, 1, 2}));
}

TEST_CASE("backward examples") {
  Tape tape;
  Var w = tape.input(Tensor::scalar(3.0));
  tape.backward(tape.mul(w, w));
  CHECK(tape.grad(w).item() == 6.0);

  Tape constant_tape;
  Var x = constant_tape.input(Tensor({2}, {1.0, 2.0}));
  Var c = constant_tape.constant(Tensor::scalar(4.0));
  constant_tape.backward(c);
  CHECK(constant_tape.grad(x) == Tensor({2}, {0.0, 0.0}));

  Tape p_tape;
  Var p = p_tape.parameter(Tensor({2}, {1.0, -2.0}), 0);
  const Gradients g = p_tape.backward(p_tape.scale(p_tape.sum(p), 0.0));
  REQUIRE(g.parameters.size() == 1);
  CHECK(g.parameters[0] == Tensor({2}, {0.0, 0.0}));

  Tape vec_tape;
  Var v = vec_tape.input(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(vec_tape.backward(v), UsageError);
}

TEST_CASE("parameter gradients keep parameter shapes") {
  std::mt19937_64 rng(1);
  Tape tape;
  Var x = tape.constant(random_tensor({4, 3}, rng));
  Var w = tape.parameter(random_tensor({3, 5}, rng), 0);
  Var b = tape.parameter(random_tensor({5}, rng), 1);
  const Gradients g = tape.backward(tape.sum(tape.relu(tape.affine(x, w, b))));
  REQUIRE(g.parameters.size() == 2);
  CHECK(g.parameters[0].shape() == Shape{3, 5});
  CHECK(g.parameters[1].shape() == Shape{5});
}

TEST_CASE("every op matches central finite differences") {
  std::mt19937_64 rng(2024);
  const std::vector<std::size_t> labels = {2, 0, 1};
  const std::vector<std::size_t> rows = {1, 1, 0, 2};
  const Conv2dGeometry geo{2, 5, 4, 3, 3, 2, 1};

  struct Case {
    const char* name;
    std::function<std::vector<Tensor>()> make;
    bt::testing::GraphFn fn;
  };
  const std::vector<Case> cases = {
      {"affine", [&] { return std::vector<Tensor>{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.affine(v[0], v[1], v[2]), 1); }},
      {"matmul", [&] { return std::vector<Tensor>{random_tensor({2, 3}, rng), random_tensor({3, 4}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.matmul(v[0], v[1]), 2); }},
      {"conv2d",
       [&] {
         return std::vector<Tensor>{random_tensor({2, 2 * 5 * 4}, rng), random_tensor({3, 2, 3, 3}, rng),
                                    random_tensor({3}, rng)};
       },
       [geo](Tape& t, const std::vector<Var>& v) { return project(t, t.conv2d(v[0], v[1], v[2], geo), 3); }},
      {"relu", [&] { return std::vector<Tensor>{random_away_from_zero({3, 4}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.relu(v[0]), 4); }},
      {"add", [&] { return std::vector<Tensor>{random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.add(v[0], v[1]), 5); }},
      {"sub", [&] { return std::vector<Tensor>{random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.sub(v[0], v[1]), 6); }},
      {"mul", [&] { return std::vector<Tensor>{random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.mul(v[0], v[1]), 7); }},
      {"scale", [&] { return std::vector<Tensor>{random_tensor({4}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.scale(v[0], -1.7), 8); }},
      {"log_floor", [&] { return std::vector<Tensor>{random_tensor({3, 3}, rng, 0.1, 2.0)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.log_floor(v[0], 1e-12), 9); }},
      {"log_softmax", [&] { return std::vector<Tensor>{random_tensor({3, 4}, rng, -3, 3)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.log_softmax(v[0]), 10); }},
      {"softmax", [&] { return std::vector<Tensor>{random_tensor({3, 4}, rng, -3, 3)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.softmax(v[0]), 11); }},
      {"row_sum", [&] { return std::vector<Tensor>{random_tensor({3, 4}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.row_sum(v[0]), 12); }},
      {"pick", [&] { return std::vector<Tensor>{random_tensor({3, 3}, rng)}; },
       [labels](Tape& t, const std::vector<Var>& v) { return project(t, t.pick(v[0], labels), 13); }},
      {"sum", [&] { return std::vector<Tensor>{random_tensor({2, 5}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return t.mul(t.sum(v[0]), t.sum(v[0])); }},
      {"mean", [&] { return std::vector<Tensor>{random_tensor({2, 5}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return t.mul(t.mean(v[0]), t.mean(v[0])); }},
      {"gather_rows", [&] { return std::vector<Tensor>{random_tensor({3, 2}, rng)}; },
       [rows](Tape& t, const std::vector<Var>& v) { return project(t, t.gather_rows(v[0], rows), 14); }},
      {"concat_rows", [&] { return std::vector<Tensor>{random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.concat_rows(v), 15); }},
      {"reshape", [&] { return std::vector<Tensor>{random_tensor({2, 6}, rng)}; },
       [](Tape& t, const std::vector<Var>& v) { return project(t, t.reshape(v[0], {3, 4}), 16); }},
  };

  for (const auto& c : cases) {
    for (int instance = 0; instance < 8; ++instance) {
      const auto result = check_gradients(c.fn, c.make());
      INFO(c.name << " instance " << instance);
      CHECK(result.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("small MLP loss gradients match finite differences") {
  std::mt19937_64 rng(77);
  const std::vector<std::size_t> labels = {1, 0, 2, 1};
  for (int instance = 0; instance < 10; ++instance) {
    std::vector<Tensor> inputs = {random_tensor({4, 3}, rng), random_tensor({3, 6}, rng), random_tensor({6}, rng),
                                  random_tensor({6, 3}, rng), random_tensor({3}, rng)};
    auto fn = [&](Tape& t, const std::vector<Var>& v) {
      Var h = t.relu(t.affine(v[0], v[1], v[2]));
      Var z = t.affine(h, v[3], v[4]);
      return t.scale(t.mean(t.pick(t.log_softmax(z), labels)), -1.0);
    };
    CHECK(check_gradients(fn, inputs).max_relative_error < 1e-4);
  }
}
