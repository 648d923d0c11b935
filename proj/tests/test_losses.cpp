#include <doctest.h>

#include <cmath>
#include <random>

#include "bullettrain/autodiff.hpp"
#include "bullettrain/errors.hpp"
#include "bullettrain/losses.hpp"
#include "bullettrain/model.hpp"
#include "support/gradcheck.hpp"

using namespace bt;
using bt::testing::check_gradients;
using bt::testing::random_tensor;

namespace {

double naive_ce(std::span<const double> z, Label y) {
  double total = 0.0;
  for (double v : z) total += std::exp(v);
  return -(z[y] - std::log(total));
}

std::vector<double> naive_probs(std::span<const double> z) {
  double total = 0.0;
  for (double v : z) total += std::exp(v);
  std::vector<double> p;
  for (double v : z) p.push_back(std::exp(v) / total);
  return p;
}

double naive_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

double naive_jsd_row(std::span<const double> a, std::span<const double> b, std::span<const double> c) {
  const auto pa = naive_probs(a), pb = naive_probs(b), pc = naive_probs(c);
  std::vector<double> m(pa.size());
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = (pa[k] + pb[k] + pc[k]) / 3.0;
  return (naive_kl(pa, m) + naive_kl(pb, m) + naive_kl(pc, m)) / 3.0;
}

}  // namespace

TEST_CASE("at loss examples") {
  const Tensor perfect({2, 3}, {40, 0, 0, 0, 0, 40});
  CHECK(at_loss(perfect, Labels{0, 2}) < 1e-15);
  const Tensor uniform({3, 10}, 0.0);
  CHECK(at_loss(uniform, Labels{1, 4, 9}) == doctest::Approx(std::log(10.0)).epsilon(1e-14));

  std::mt19937_64 rng(1);
  const Tensor z = random_tensor({5, 4}, rng, -2, 2);
  const Labels y = {0, 3, 1, 1, 2};
  double total = 0.0;
  for (std::size_t i = 0; i < 5; ++i) total += naive_ce(z.row(i), y[i]);
  CHECK(std::abs(at_loss(z, y) - total / 5.0) < 1e-12);
}

TEST_CASE("trades loss examples") {
  std::mt19937_64 rng(2);
  const Tensor clean = random_tensor({4, 3}, rng, -2, 2);
  const Labels y = {2, 0, 1, 1};
  CHECK(trades_loss(clean, clean, y, 6.0) == at_loss(clean, y));

  const Tensor other = random_tensor({4, 3}, rng, -2, 2);
  CHECK(std::abs(trades_loss(clean, other, y, 1e-12) - at_loss(clean, y)) < 1e-10);

  const Tensor c({1, 2}, {2, 0}), a({1, 2}, {0, 2});
  const double ce = naive_ce(c.row(0), 0);
  const double kl = naive_kl(naive_probs(c.row(0)), naive_probs(a.row(0)));
  CHECK(std::abs(ce - 0.126928) < 1e-6);
  CHECK(std::abs(kl - 2.0 * std::tanh(1.0)) < 1e-12);
  CHECK(std::abs(kl - 1.52327) < 1e-4);
  CHECK(std::abs(trades_loss(c, a, Labels{0}, 6.0) - (ce + 6.0 * kl)) < 1e-12);
  CHECK(std::abs(trades_loss(c, a, Labels{0}, 6.0) - 9.2666) < 1e-3);
}

TEST_CASE("trades loss never drops below natural cross entropy") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor clean = random_tensor({3, 4}, rng, -4, 4);
    const Tensor adv = random_tensor({3, 4}, rng, -4, 4);
    const Labels y = {static_cast<Label>(trial % 4), 1, 3};
    CHECK(trades_loss(clean, adv, y, 6.0) >= at_loss(clean, y) - 1e-12);
  }
}

TEST_CASE("jsd loss examples") {
  std::mt19937_64 rng(4);
  const Tensor z = random_tensor({3, 5}, rng, -2, 2);
  CHECK(std::abs(jsd_loss(z, z, z)) < 1e-15);

  const Tensor a({1, 3}, {60, 0, 0}), b({1, 3}, {0, 60, 0}), c({1, 3}, {0, 0, 60});
  CHECK(std::abs(jsd_loss(a, b, c) - std::log(3.0)) < 1e-9);

  for (int trial = 0; trial < 100; ++trial) {
    const Tensor p = random_tensor({2, 3}, rng, -5, 5);
    const Tensor q = random_tensor({2, 3}, rng, -5, 5);
    const Tensor r = random_tensor({2, 3}, rng, -5, 5);
    const double v = jsd_loss(p, q, r);
    CHECK(v >= 0.0);
    CHECK(v <= std::log(3.0) + 1e-12);
    for (double perm : {jsd_loss(q, p, r), jsd_loss(r, q, p), jsd_loss(p, r, q), jsd_loss(q, r, p)}) {
      CHECK(std::abs(perm - v) < 1e-14);
    }
    const double oracle = (naive_jsd_row(p.row(0), q.row(0), r.row(0)) + naive_jsd_row(p.row(1), q.row(1), r.row(1))) / 2;
    CHECK(std::abs(v - oracle) < 1e-12);
  }
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(5);
  const Labels y = {1, 0, 2};
  for (int instance = 0; instance < 10; ++instance) {
    auto at = [&](Tape& t, const std::vector<Var>& v) { return at_loss(t, v[0], y); };
    auto trades = [&](Tape& t, const std::vector<Var>& v) { return trades_loss(t, v[0], v[1], y, 6.0); };
    auto jsd = [&](Tape& t, const std::vector<Var>& v) { return jsd_loss(t, v[0], v[1], v[2]); };
    CHECK(check_gradients(at, {random_tensor({3, 3}, rng, -2, 2)}).max_relative_error < 1e-4);
    CHECK(check_gradients(trades, {random_tensor({3, 3}, rng, -2, 2), random_tensor({3, 3}, rng, -2, 2)})
              .max_relative_error < 1e-4);
    CHECK(check_gradients(jsd, {random_tensor({3, 3}, rng, -2, 2), random_tensor({3, 3}, rng, -2, 2),
                                random_tensor({3, 3}, rng, -2, 2)})
              .max_relative_error < 1e-4);
  }
}

namespace {

struct Batch {
  Classifier model{Architecture::parse("mlp:4-8-3"), 21};
  Tensor x, first, second;
  Labels y;
  std::vector<std::size_t> perturbed;
};

// Perturbs the listed rows of x; every other row keeps x' == x'' == x.
Batch make_batch(std::size_t m, const std::vector<std::size_t>& perturbed, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch b;
  b.x = random_tensor({m, 4}, rng, 0, 1);
  b.first = b.x;
  b.second = b.x;
  std::uniform_real_distribution<double> d(-0.3, 0.3);
  for (std::size_t r : perturbed) {
    for (double& v : b.first.row(r)) v += d(rng);
    for (double& v : b.second.row(r)) v += d(rng);
  }
  b.y.resize(m);
  for (std::size_t i = 0; i < m; ++i) b.y[i] = (i * 5 + seed) % 3;
  b.perturbed = perturbed;
  return b;
}

double optimized_loss(const Batch& b, const LossConfig& cfg) {
  Tape tape;
  Var clean = b.model.forward(tape, tape.constant(b.x), true);
  std::vector<CorruptedRows> groups;
  if (!b.perturbed.empty()) {
    CorruptedRows g;
    g.logits = b.model.forward(tape, tape.constant(gather_rows(b.first, std::span<const std::size_t>(b.perturbed))), true);
    g.second_logits = b.model.forward(tape, tape.constant(gather_rows(b.second, std::span<const std::size_t>(b.perturbed))), true);
    g.indices = b.perturbed;
    groups.push_back(g);
  }
  return tape.value(combined_bullettrain_loss(tape, clean, groups, b.y, cfg)).item();
}

// Full forward of every row, no skipping.
double naive_loss(const Batch& b, const LossConfig& cfg) {
  const Tensor zc = b.model.forward(b.x), z1 = b.model.forward(b.first), z2 = b.model.forward(b.second);
  switch (cfg.kind) {
    case LossKind::kAT: return at_loss(z1, b.y);
    case LossKind::kTRADES: return trades_loss(zc, z1, b.y, cfg.beta);
    case LossKind::kJSD: return at_loss(zc, b.y) + cfg.jsd_weight * jsd_loss(zc, z1, z2);
  }
  return 0.0;
}

}  // namespace

TEST_CASE("skipping unperturbed rows matches the naive loss") {
  std::mt19937_64 rng(6);
  for (LossKind kind : {LossKind::kAT, LossKind::kTRADES, LossKind::kJSD}) {
    LossConfig cfg;
    cfg.kind = kind;
    cfg.classes = 3;
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t m = 20;
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < m; ++i)
        if (rng() % 20 < 7) rows.push_back(i);  // about 35% perturbed
      const Batch b = make_batch(m, rows, 100 + trial);
      CHECK(std::abs(optimized_loss(b, cfg) - naive_loss(b, cfg)) < 1e-10);
    }
  }
}

TEST_CASE("combined loss reduction cases") {
  LossConfig cfg;
  cfg.classes = 3;
  // No sample perturbed under TRADES: natural CE.
  const Batch none = make_batch(8, {}, 7);
  CHECK(optimized_loss(none, cfg) == at_loss(none.model.forward(none.x), none.y));

  // Every row perturbed through one group: the plain loss on the corrupted batch.
  std::vector<std::size_t> all(8);
  for (std::size_t i = 0; i < 8; ++i) all[i] = i;
  const Batch full = make_batch(8, all, 8);
  for (LossKind kind : {LossKind::kAT, LossKind::kTRADES}) {
    cfg.kind = kind;
    const Tensor zc = full.model.forward(full.x), z1 = full.model.forward(full.first);
    const double expected = kind == LossKind::kAT ? at_loss(z1, full.y) : trades_loss(zc, z1, full.y, cfg.beta);
    CHECK(optimized_loss(full, cfg) == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("reassembly is a bijection over random memberships") {
  std::mt19937_64 rng(9);
  LossConfig cfg;
  cfg.kind = LossKind::kAT;
  cfg.classes = 3;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + trial % 16;
    Tape tape;
    Tensor logits({m, 3});
    for (std::size_t i = 0; i < m; ++i) logits.at(i, i % 3) = static_cast<double>(i + 1);
    // Split a random permutation into three groups with shuffled rows.
    std::vector<std::size_t> perm(m);
    for (std::size_t i = 0; i < m; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t a = rng() % (m + 1), b = a + rng() % (m - a + 1);
    std::vector<CorruptedRows> groups;
    for (auto [lo, hi] : {std::pair{std::size_t{0}, a}, std::pair{a, b}, std::pair{b, m}}) {
      CorruptedRows g;
      g.indices.assign(perm.begin() + lo, perm.begin() + hi);
      g.logits = tape.constant(gather_rows(logits, std::span<const std::size_t>(g.indices)));
      groups.push_back(g);
    }
    Labels y(m);
    for (std::size_t i = 0; i < m; ++i) y[i] = (i + trial) % 3;
    Var clean = tape.constant(Tensor({m, 3}, 0.0));
    CHECK(tape.value(combined_bullettrain_loss(tape, clean, groups, y, cfg)).item() ==
          doctest::Approx(at_loss(logits, y)).epsilon(1e-14));
  }
}

TEST_CASE("reassembly violations are internal errors") {
  LossConfig cfg;
  cfg.kind = LossKind::kAT;
  cfg.classes = 2;
  Tape tape;
  Var clean = tape.constant(Tensor({3, 2}, 0.0));
  const Labels y = {0, 1, 0};
  CorruptedRows dup;
  dup.logits = tape.constant(Tensor({2, 2}, 0.0));
  dup.indices = {1, 1};
  CHECK_THROWS_AS(combined_bullettrain_loss(tape, clean, std::vector{dup}, y, cfg), InternalError);
  CorruptedRows out;
  out.logits = tape.constant(Tensor({1, 2}, 0.0));
  out.indices = {3};
  CHECK_THROWS_AS(combined_bullettrain_loss(tape, clean, std::vector{out}, y, cfg), InternalError);
  CorruptedRows mismatch;
  mismatch.logits = tape.constant(Tensor({2, 2}, 0.0));
  mismatch.indices = {0};
  CHECK_THROWS_AS(combined_bullettrain_loss(tape, clean, std::vector{mismatch}, y, cfg), InternalError);
  cfg.kind = LossKind::kJSD;
  CorruptedRows single;
  single.logits = tape.constant(Tensor({1, 2}, 0.0));
  single.indices = {0};
  CHECK_THROWS_AS(combined_bullettrain_loss(tape, clean, std::vector{single}, y, cfg), InternalError);
}

TEST_CASE("loss config parsing and validation") {
  CHECK(loss_kind_from_string("trades") == LossKind::kTRADES);
  CHECK(loss_kind_from_string("at") == LossKind::kAT);
  CHECK(loss_kind_from_string("jsd") == LossKind::kJSD);
  CHECK_THROWS_AS(loss_kind_from_string("mart"), ArgumentError);
  LossConfig cfg;
  cfg.beta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}
