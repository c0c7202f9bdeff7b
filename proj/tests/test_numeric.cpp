#include <cmath>
#include <vector>

#include "clinrisk/errors.hpp"
#include "clinrisk/ops.hpp"
#include "clinrisk/rng.hpp"
#include "clinrisk/tape.hpp"
#include "clinrisk/tensor.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace clinrisk;
namespace o = clinrisk::ops;
using testutil::check_gradients;
using testutil::random_tensor;

TEST_CASE("rng is deterministic and mix derives distinct streams") {
  SeededRng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(SeededRng(42).next_u64() != c.next_u64());
  CHECK(SeededRng::mix(7, 0) != SeededRng::mix(7, 1));
  SeededRng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    CHECK(u.uniform_int(10) < 10);
  }
}

TEST_CASE("tensor invariants") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.dim(-1) == 3);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
  Tensor s = t;  // shallow copy shares identity
  CHECK(s.id() == t.id());
  CHECK(t.clone().id() != t.id());
}

TEST_CASE("matmul: identity and hand-computed cases") {
  Tape tape(false);
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor r = o::matmul(tape, eye, m);
  for (int i = 0; i < 4; ++i) CHECK(r.data()[i] == doctest::Approx(m.data()[i]));

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  CHECK(o::matmul(tape, a, b).item() == doctest::Approx(11.0));

  CHECK_THROWS_AS(o::matmul(tape, a, a), DimensionError);
}

TEST_CASE("matmul matches a naive triple-loop oracle") {
  SeededRng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tape tape(false);
  Tensor r = o::matmul(tape, a, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += a.data()[i * 4 + k] * b.data()[k * 2 + j];
      CHECK(std::abs(r.data()[i * 2 + j] - acc) < 1e-12);
    }
}

TEST_CASE("softmax: symmetry, overflow stability, exp-normalize oracle") {
  Tape tape(false);
  Tensor flat = o::softmax_lastdim(tape, Tensor::from({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) CHECK(flat.data()[i] == doctest::Approx(1.0 / 3));

  Tensor hot = o::softmax_lastdim(tape, Tensor::from({2}, {1000, 0}));
  CHECK(std::abs(hot.data()[0] - 1.0) < 1e-12);
  CHECK(std::abs(hot.data()[1] - 0.0) < 1e-12);

  Tensor x = Tensor::from({3}, {1, 2, 3});
  Tensor y = o::softmax_lastdim(tape, x);
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(y.data()[i] - std::exp(1.0 + i) / z) < 1e-12);
}

TEST_CASE("softmax rows sum to one for random finite inputs") {
  SeededRng rng(5);
  Tape tape(false);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, 20.0);
    Tensor y = o::softmax_lastdim(tape, x);
    for (int r = 0; r < 4; ++r) {
      double s = 0;
      for (int c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("layer_norm: constant slices, two-point case, moment oracle") {
  Tape tape(false);
  Tensor gain = Tensor::full({4}, 1);
  Tensor bias = Tensor::zeros({4});
  Tensor c = o::layer_norm(tape, Tensor::full({2, 4}, 3.5), gain, bias, real(1e-5));
  for (int i = 0; i < 8; ++i) CHECK(c.data()[i] == doctest::Approx(0.0));

  Tensor two = o::layer_norm(tape, Tensor::from({2}, {1, 3}), Tensor::full({2}, 1),
                             Tensor::zeros({2}), real(1e-12));
  CHECK(two.data()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(two.data()[1] == doctest::Approx(1.0).epsilon(1e-6));

  SeededRng rng(3);
  Tensor x = random_tensor({8}, rng, 2.0);
  Tensor y = o::layer_norm(tape, x, Tensor::full({8}, 1), Tensor::zeros({8}), real(1e-10));
  double mean = 0, var = 0;
  for (int i = 0; i < 8; ++i) mean += y.data()[i];
  mean /= 8;
  for (int i = 0; i < 8; ++i) var += (y.data()[i] - mean) * (y.data()[i] - mean);
  var /= 8;
  CHECK(std::abs(mean) < 1e-10);
  CHECK(std::abs(var - 1.0) < 1e-6);
}

TEST_CASE("backward: ones for sum, quadratic, fan-out accumulation") {
  {
    Tape tape;
    Tensor x = Tensor::from({2, 3}, {1, -2, 3, 4, -5, 6}, true);
    Tensor loss = o::sum(tape, x);
    tape.backward(loss);
    for (int i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(1.0));
  }
  {
    Tape tape;
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor loss = o::sum(tape, o::mul(tape, x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
  }
  {
    // y = f(x) + g(x): gradient equals the sum of each path alone.
    SeededRng rng(9);
    Tensor w = random_tensor({3}, rng);
    auto run = [&](bool with_scale, bool with_mul) {
      Tape tape;
      Tensor x = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
      std::vector<Tensor> terms;
      if (with_scale) terms.push_back(o::scale(tape, x, real(3)));
      if (with_mul) terms.push_back(o::mul(tape, x, w));
      Tensor acc = terms[0];
      for (std::size_t i = 1; i < terms.size(); ++i) acc = o::add(tape, acc, terms[i]);
      Tensor loss = o::sum(tape, acc);
      tape.backward(loss);
      return x.grad();
    };
    auto both = run(true, true);
    auto only_scale = run(true, false);
    auto only_mul = run(false, true);
    for (int i = 0; i < 3; ++i)
      CHECK(both[i] == doctest::Approx(only_scale[i] + only_mul[i]));
  }
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = o::mul(tape, x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("finite differences agree with tape gradients for every op") {
  SeededRng rng(17);
  Tensor a = random_tensor({3, 4}, rng, 0.7, true);
  Tensor b = random_tensor({4, 5}, rng, 0.7, true);
  Tensor bt = random_tensor({5, 4}, rng, 0.7, true);
  Tensor c = random_tensor({3, 4}, rng, 0.7, true);
  Tensor row = random_tensor({4}, rng, 0.7, true);
  Tensor gain = random_tensor({4}, rng, 0.3, true);
  Tensor bias = random_tensor({4}, rng, 0.3, true);

  check_gradients(
      [&](Tape& t) { return o::sum(t, o::matmul(t, a, b)); }, {a, b});
  check_gradients(
      [&](Tape& t) { return o::sum(t, o::matmul_nt(t, a, bt)); }, {a, bt});
  check_gradients(
      [&](Tape& t) { return o::sum(t, o::mul(t, o::add(t, a, c), c)); }, {a, c});
  check_gradients(
      [&](Tape& t) { return o::sum(t, o::sub(t, a, o::scale(t, c, real(2.5)))); }, {a, c});
  check_gradients(
      [&](Tape& t) { return o::sum(t, o::add_rowvec(t, a, row)); }, {a, row});
  check_gradients(
      [&](Tape& t) {
        return o::sum(t, o::mul(t, o::softmax_lastdim(t, a), c));
      },
      {a});
  check_gradients(
      [&](Tape& t) {
        return o::sum(t, o::mul(t, o::layer_norm(t, a, gain, bias, real(1e-5)), c));
      },
      {a, gain, bias});
  check_gradients(
      [&](Tape& t) { return o::sum(t, o::mul(t, o::gelu(t, a), c)); }, {a});
  check_gradients(
      [&](Tape& t) { return o::sum(t, o::mul(t, o::sigmoid(t, a), c)); }, {a});
  check_gradients(
      [&](Tape& t) { return o::sum(t, o::mul(t, o::tanh_act(t, a), c)); }, {a});

  Tensor vec1 = random_tensor({6}, rng, 0.8, true);
  Tensor vec2 = random_tensor({6}, rng, 0.8, true);
  check_gradients([&](Tape& t) { return o::dot(t, vec1, vec2); }, {vec1, vec2});
  check_gradients(
      [&](Tape& t) {
        return o::dot(t, o::select_row(t, a, 1), row);
      },
      {a, row});
  check_gradients(
      [&](Tape& t) {
        return o::dot(t, o::mean_stack(t, {vec1, vec2, vec1}), vec2);
      },
      {vec1, vec2});

  Tensor table = random_tensor({7, 4}, rng, 0.5, true);
  Tensor probe = random_tensor({4, 4}, rng, 0.7);
  std::vector<std::int32_t> ids{0, 3, 3, 6};
  check_gradients(
      [&](Tape& t) {
        return o::sum(t, o::mul(t, o::embedding_lookup(t, table, ids), probe));
      },
      {table});

  Tensor logits = random_tensor({5, 6}, rng, 1.2, true);
  std::vector<std::int32_t> targets{1, 0, 5, 2, 4};
  std::vector<std::uint8_t> select{1, 0, 1, 1, 0};
  check_gradients(
      [&](Tape& t) { return o::cross_entropy_masked(t, logits, targets, select); },
      {logits});

  Tensor logit = random_tensor({1}, rng, 1.0, true);
  check_gradients([&](Tape& t) { return o::bce_with_logit(t, logit, real(1)); }, {logit});
  check_gradients([&](Tape& t) { return o::bce_with_logit(t, logit, real(0)); }, {logit});
}

TEST_CASE("cross entropy against a direct log-softmax oracle") {
  SeededRng rng(23);
  Tensor logits = random_tensor({4, 5}, rng, 2.0);
  std::vector<std::int32_t> targets{2, 0, 4, 1};
  std::vector<std::uint8_t> select{1, 1, 0, 1};
  Tape tape(false);
  const double got = o::cross_entropy_masked(tape, logits, targets, select).item();
  double want = 0;
  int count = 0;
  for (int i = 0; i < 4; ++i) {
    if (!select[i]) continue;
    double z = 0;
    for (int c = 0; c < 5; ++c) z += std::exp(logits.data()[i * 5 + c]);
    want += std::log(z) - logits.data()[i * 5 + targets[i]];
    ++count;
  }
  want /= count;
  CHECK(std::abs(got - want) < 1e-12);
}

TEST_CASE("ops are deterministic for a fixed seed") {
  auto run = [] {
    SeededRng rng(123);
    Tensor a = random_tensor({6, 6}, rng, 1.0, true);
    Tensor b = random_tensor({6, 6}, rng, 1.0, true);
    Tape tape;
    Tensor loss = o::sum(tape, o::gelu(tape, o::matmul(tape, a, b)));
    tape.backward(loss);
    return std::make_pair(loss.item(), a.grad());
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("dropout keeps expectation and zeroes entries") {
  Tape tape(true, 99);
  Tensor x = Tensor::full({10000}, 1, true);
  Tensor y = o::dropout(tape, x, real(0.25));
  double mean = 0;
  int zeros = 0;
  for (std::int64_t i = 0; i < y.size(); ++i) {
    mean += y.data()[i];
    if (y.data()[i] == real(0)) ++zeros;
  }
  mean /= static_cast<double>(y.size());
  CHECK(mean == doctest::Approx(1.0).epsilon(0.03));
  CHECK(zeros > 2000);
  CHECK(zeros < 3000);
  // p = 0 is the identity, not a copy
  Tensor z = o::dropout(tape, x, real(0));
  CHECK(z.id() == x.id());
}
