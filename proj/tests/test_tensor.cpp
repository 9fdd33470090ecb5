#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "colf/checkpoint.hpp"
#include "colf/tensor.hpp"
#include "test_util.hpp"

using namespace colf;
using colf::testing::check_gradients;
using colf::testing::max_rel_err;
using colf::testing::random_tensor;
using colf::testing::rel_err;

TEST_CASE("softmax of uniform logits is uniform") {
  auto x = constant({1, 3}, {0, 0, 0});
  auto y = softmax_last(x);
  for (double v : y->data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and stay nonnegative") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({4, 9}, rng, false, -40.0, 40.0);
    auto y = softmax_last(x);
    for (int r = 0; r < 4; ++r) {
      double s = 0.0;
      for (int c = 0; c < 9; ++c) {
        CHECK(y->data[r * 9 + c] >= 0.0);
        s += y->data[r * 9 + c];
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("exp identity and guards") {
  auto y = exp_(constant({1}, {0.0}));
  CHECK(y->data[0] == 1.0);
  auto huge = exp_(constant({1}, {1e6}));
  CHECK(std::isfinite(huge->data[0]));
  auto lg = log_(constant({1}, {0.0}));
  CHECK(std::isfinite(lg->data[0]));  // clamped at the documented floor
}

TEST_CASE("matmul shape algebra and errors") {
  Rng rng(1);
  auto a = random_tensor({2, 3}, rng, false);
  auto b = random_tensor({3, 4}, rng, false);
  CHECK(matmul(a, b)->shape == Shape{2, 4});
  auto bad = random_tensor({2, 4}, rng, false);
  CHECK_THROWS_WITH_AS(matmul(a, bad), doctest::Contains("matmul"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(add(a, bad), doctest::Contains("(2,3)"), std::invalid_argument);
}

TEST_CASE("backward of x*x at 3 gives 6") {
  auto x = constant({1}, {3.0});
  x->requires_grad = true;
  Tape tape;
  auto loss = mul(x, x);
  tape.backward(loss);
  CHECK(x->grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("non-scalar loss rejected") {
  Rng rng(3);
  auto x = random_tensor({2, 2}, rng);
  Tape tape;
  auto y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("two-layer MLP gradient matches central differences") {
  Rng rng(42);
  auto w1 = random_tensor({5, 8}, rng);
  auto w2 = random_tensor({8, 1}, rng);
  auto x = constant({3, 5}, std::vector<double>(15, 0.3));
  auto build = [&] { return sum_all(matmul(elu(matmul(x, w1)), w2)); };
  CHECK(check_gradients(w1, build) < 1e-4);
  CHECK(check_gradients(w2, build) < 1e-4);
}

TEST_CASE("softmax cross-entropy gradient vanishes at certainty") {
  // True class already holds essentially all probability mass.
  auto logits = constant({1, 3}, {60.0, 0.0, 0.0});
  logits->requires_grad = true;
  Tape tape;
  auto nll = neg(sum_all(mul(log_(softmax_last(logits)), constant({1, 3}, {1, 0, 0}))));
  tape.backward(nll);
  for (double g : logits->grad) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("reverse-mode matches finite differences across public ops") {
  // Property over >= 20 seeds: every differentiable op agrees with the
  // independent central-difference oracle on random inputs in [-1,1].
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto m = random_tensor({4, 5}, rng);
    auto bias = random_tensor({4}, rng);
    auto bias2 = random_tensor({5}, rng);
    auto batch_a = random_tensor({2, 3, 4}, rng);
    auto batch_b = random_tensor({2, 4, 3}, rng);

    CHECK(check_gradients(a, [&] { return sum_all(mul(add(a, b), sub(a, b))); }) < 1e-4);
    CHECK(check_gradients(m, [&] { return sum_all(matmul(a, m)); }) < 1e-4);
    CHECK(check_gradients(m, [&] { return sum_all(linear(a, m, bias2)); }) < 1e-4);
    CHECK(check_gradients(bias2, [&] { return sum_all(linear(a, m, bias2)); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(exp_(mul_scalar(a, 0.5))); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(log_(add_scalar(a, 2.0))); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(elu(a)); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(relu(add_scalar(a, 0.1))); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(sigmoid(a)); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(softplus(a)); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(mul(softmax_last(a), b)); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(add_bias(a, bias)); }) < 1e-4);
    CHECK(check_gradients(bias, [&] { return sum_all(add_bias(a, bias)); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(mul(sum_axis(a, 0), sum_axis(b, 0))); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(mul(concat_last(a, b), concat_last(b, a))); }) < 1e-4);
    CHECK(check_gradients(batch_a, [&] { return sum_all(bmm(batch_a, batch_b)); }) < 1e-4);
    CHECK(check_gradients(batch_b, [&] { return sum_all(bmm(batch_a, batch_b)); }) < 1e-4);
    CHECK(check_gradients(batch_a, [&] {
            auto other = reshape(batch_b, {2, 3, 4});
            return sum_all(bmm_nt(batch_a, other));
          }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(gather_rows(a, {2, 0, -1, 1, 0})); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(mul(scatter_rows(a, {1, 4, 0}, 6),
                                                      scatter_rows(b, {1, 4, 0}, 6))); }) < 1e-4);
    CHECK(check_gradients(a, [&] { return sum_all(abs_(a)); }) < 1e-4);
  }
}

TEST_CASE("masked softmax ignores masked entries exactly") {
  Rng rng(5);
  auto x = random_tensor({2, 3, 4}, rng, false, -3, 3);
  auto mask = constant({2, 4}, {1, 1, 0, 1, 0, 1, 1, 0});
  auto y = masked_softmax_last(x, mask);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t q = 0; q < 3; ++q) {
      double s = 0;
      for (int64_t k = 0; k < 4; ++k) {
        const double v = y->data[(b * 3 + q) * 4 + k];
        if (mask->data[b * 4 + k] == 0.0) CHECK(v == 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  auto xg = random_tensor({2, 3, 4}, rng);
  CHECK(check_gradients(xg, [&] { return sum_all(mul(masked_softmax_last(xg, mask),
                                                     constant(xg->shape, std::vector<double>(24, 0.5)))); }) <
        1e-4);
}

TEST_CASE("bilinear_gather gradients and zero-index rows") {
  Rng rng(9);
  auto grid = random_tensor({4, 5, 3}, rng);
  std::vector<int64_t> idx = {0, 1, 5, 6, -1, 3, 8, 9};
  std::vector<double> w = {0.25, 0.25, 0.25, 0.25, 0.0, 0.5, 0.3, 0.2};
  CHECK(check_gradients(grid, [&] {
          return sum_all(mul(bilinear_gather(grid, idx, w),
                             constant({2, 3}, {1, 2, 3, 4, 5, 6})));
        }) < 1e-4);
}

TEST_CASE("conv2d matches finite differences") {
  Rng rng(11);
  auto x = random_tensor({5, 6, 2}, rng);
  auto w = random_tensor({2 * 9, 3}, rng);
  auto b = random_tensor({3}, rng);
  for (int stride : {1, 2}) {
    auto build = [&] { return sum_all(conv2d(x, w, b, 3, 3, stride, 1)); };
    CHECK(check_gradients(x, build) < 1e-4);
    CHECK(check_gradients(w, build) < 1e-4);
    CHECK(check_gradients(b, build) < 1e-4);
  }
}

TEST_CASE("backward is deterministic bit for bit") {
  Rng rng(123);
  auto w = random_tensor({6, 6}, rng);
  auto x = random_tensor({4, 6}, rng, false);
  std::vector<double> first, second;
  for (auto* out : {&first, &second}) {
    w->grad.clear();
    Tape tape;
    auto loss = sum_all(softmax_last(matmul(x, w)));
    tape.backward(loss);
    *out = w->grad;
  }
  CHECK(first == second);
}

TEST_CASE("gradients accumulate only along reachable paths") {
  Rng rng(3);
  auto used = random_tensor({2, 2}, rng);
  auto unused = random_tensor({2, 2}, rng);
  Tape tape;
  auto loss = sum_all(mul(used, used));
  auto dead = mul(unused, unused);  // recorded but not reachable from loss
  (void)dead;
  tape.backward(loss);
  CHECK(!used->grad.empty());
  CHECK(unused->grad.empty());
}

TEST_CASE("finite difference oracle on analytic functions") {
  auto square = [](const std::vector<double>& v) { return v[0] * v[0]; };
  auto g = finite_difference_grad(square, {3.0}, 1e-5);
  CHECK(std::abs(g[0] - 6.0) < 1e-6);
  auto expf = [](const std::vector<double>& v) { return std::exp(v[0]); };
  g = finite_difference_grad(expf, {0.0}, 1e-5);
  CHECK(std::abs(g[0] - 1.0) < 1e-8);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  Rng rng(4);
  ParamStore store;
  auto p = store.create("p", {3, 3}, 3, rng);
  const auto before = p->data;
  Adam opt;
  opt.bind(store);
  for (int i = 0; i < 5; ++i) {
    store.zero_grads();
    opt.step(store);
  }
  CHECK(p->data == before);
}

TEST_CASE("adam first step moves by about -lr * sign(g)") {
  // Hand evaluation of the update at t=1: m-hat = g, v-hat = g^2, so the
  // step is lr * g / (|g| + eps) regardless of the gradient magnitude.
  Rng rng(4);
  ParamStore store;
  auto p = store.create("p", {2}, 2, rng);
  const auto before = p->data;
  Adam opt;
  opt.lr = 1e-3;
  opt.bind(store);
  p->ensure_grad();
  p->grad = {0.7, -0.2};
  opt.step(store);
  CHECK(rel_err(p->data[0], before[0] - 1e-3) < 1e-6);
  CHECK(rel_err(p->data[1], before[1] + 1e-3) < 1e-6);
}

TEST_CASE("adam with zero learning rate is a no-op") {
  Rng rng(4);
  ParamStore store;
  auto p = store.create("p", {4}, 4, rng);
  const auto before = p->data;
  Adam opt;
  opt.lr = 0.0;
  opt.bind(store);
  p->ensure_grad();
  p->grad = {1, 2, 3, 4};
  opt.step(store);
  CHECK(p->data == before);
}

TEST_CASE("parameter init is uniform within the fan-in bound and seeded") {
  Rng rng1(10), rng2(10);
  ParamStore s1, s2;
  auto a = s1.create("w", {100, 4}, 100, rng1);
  auto b = s2.create("w", {100, 4}, 100, rng2);
  CHECK(a->data == b->data);
  const double bound = std::sqrt(1.0 / 100.0);
  for (double v : a->data) CHECK(std::abs(v) <= bound);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  CheckpointMap m;
  Rng rng(77);
  std::vector<double> payload(60);
  for (auto& v : payload) v = rng.uniform(-1e6, 1e6);
  m["field.coarse.w"] = {{3, 4, 5}, payload};
  m["encoder.b"] = {{60}, payload};
  const std::string path = "/tmp/colf_test_ckpt.bin";
  write_checkpoint(path, m);
  auto r = read_checkpoint(path);
  REQUIRE(r.size() == 2);
  CHECK(r["field.coarse.w"].shape == Shape{3, 4, 5});
  CHECK(r["field.coarse.w"].data == payload);
  CHECK(r["encoder.b"].data == payload);

  // Write twice: identical bytes.
  const std::string path2 = "/tmp/colf_test_ckpt2.bin";
  write_checkpoint(path2, m);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
}

TEST_CASE("checkpoint rejects foreign and truncated files") {
  const std::string path = "/tmp/colf_bad_ckpt.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  CHECK_THROWS_WITH_AS(read_checkpoint(path), doctest::Contains("COLF"), std::runtime_error);
  CheckpointMap m;
  m["w"] = {{4}, {1, 2, 3, 4}};
  write_checkpoint(path, m);
  // Chop the payload.
  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  }
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 8));
  }
  CHECK_THROWS_WITH_AS(read_checkpoint(path), doctest::Contains("truncated"), std::runtime_error);
}
