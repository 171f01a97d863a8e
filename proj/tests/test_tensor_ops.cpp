#include <doctest.h>

#include <cmath>

#include "pflab/common.hpp"
#include "pflab/ops.hpp"
#include "pflab/tape.hpp"
#include "testutil.hpp"

using namespace pflab;
namespace tu = pflab::testutil;

TEST_CASE("softmax spec examples") {
  Tape t;
  Tensor uniform = ops::softmax(t, Tensor::from_data({4}, {0, 0, 0, 0}));
  for (int i = 0; i < 4; ++i) CHECK(uniform.at(i) == doctest::Approx(0.25));

  Tensor large = ops::softmax(t, Tensor::from_data({2}, {1000.0, 0.0}));
  CHECK(large.all_finite());
  CHECK(large.at(0) == doctest::Approx(1.0));
  CHECK(large.at(1) == doctest::Approx(0.0));

  Tensor thirds =
      ops::softmax(t, Tensor::from_data({2}, {std::log(1.0), std::log(3.0)}));
  CHECK(thirds.at(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(thirds.at(1) == doctest::Approx(0.75).epsilon(1e-12));

  CHECK_THROWS_AS(
      ops::softmax(t, Tensor::from_data(
                          {2}, {std::numeric_limits<double>::infinity(), 0.0})),
      Error);
}

TEST_CASE("softmax sums to one under extreme logits") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    double mag = std::pow(10.0, rng.uniform(0.0, 6.0));
    Tape t;
    Tensor logits = tu::rand_tensor({6}, rng, -mag, mag);
    Tensor p = ops::softmax(t, logits);
    double sum = 0.0;
    for (double v : p.data()) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    // Entries stay strictly positive until exp underflows (~-745 exponent),
    // far beyond any logit spread a trained policy produces.
    double mx = *std::max_element(logits.data().begin(), logits.data().end());
    for (int64_t i = 0; i < logits.size(); ++i)
      if (logits.at(i) - mx > -700.0) CHECK(p.at(i) > 0.0);
  }
}

TEST_CASE("cross_entropy_onehot spec examples") {
  Tape t;
  Tensor uniform = Tensor::from_data({4}, {0.3, 0.3, 0.3, 0.3});
  for (int a = 0; a < 4; ++a)
    CHECK(ops::cross_entropy_onehot(t, uniform, a).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor saturated = Tensor::from_data({4}, {0, 0, 1e4, 0});
  CHECK(ops::cross_entropy_onehot(t, saturated, 2).item() ==
        doctest::Approx(0.0));

  Tensor two = Tensor::from_data({2}, {2.0, 0.0});
  CHECK(ops::cross_entropy_onehot(t, two, 1).item() ==
        doctest::Approx(std::log(1.0 + std::exp(2.0))).epsilon(1e-12));

  CHECK_THROWS_AS(ops::cross_entropy_onehot(t, two, 2), Error);
  CHECK_THROWS_AS(ops::cross_entropy_onehot(t, two, -1), Error);
}

TEST_CASE("backward basics: linear, quadratic, accumulation, diamond") {
  {
    Tape t;
    Rng rng(3);
    Tensor x = tu::rand_tensor({3, 2}, rng, -1, 1, true);
    Tensor loss = ops::sum_all(t, x);
    t.backward(loss);
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
  }
  {
    Tape t;
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor loss = ops::dot_flat(t, x, x);
    t.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));

    // Repeated call without reset accumulates.
    t.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    CHECK(x.grad()[1] == doctest::Approx(8.0));
  }
  {
    // y = x*x + x; every node visited once, fan-in accumulated.
    Tape t;
    Tensor x = Tensor::from_data({2}, {3.0, -1.5}, true);
    Tensor y = ops::add(t, ops::mul(t, x, x), x);
    t.backward(ops::sum_all(t, y));
    CHECK(x.grad()[0] == doctest::Approx(2 * 3.0 + 1));
    CHECK(x.grad()[1] == doctest::Approx(2 * -1.5 + 1));
  }
  {
    Tape t;
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y = ops::mul(t, x, x);
    CHECK_THROWS_AS(t.backward(y), Error);  // non-scalar loss
    Tensor stranger = Tensor::scalar(1.0);
    CHECK_THROWS_AS(t.backward(stranger), Error);  // not on tape
  }
}

namespace {

// FD-checks d(sum of f(inputs...))/d(input) for every requires_grad input.
void gradcheck(const std::function<Tensor(Tape&)>& build,
               std::vector<Tensor> inputs) {
  auto value = [&]() {
    Tape t;
    return build(t).item();
  };
  Tape t;
  Tensor loss = build(t);
  GradMap gm = t.backward(loss);
  tu::GradCheck gc;
  for (Tensor& in : inputs) {
    auto it = gm.find(in.storage());
    REQUIRE(it != gm.end());
    std::vector<double> g(it->second.data().begin(), it->second.data().end());
    tu::fd_check_tensor(value, in, g, gc);
  }
  CHECK(gc.ok);
  CHECK(gc.entries > 0);
}

}  // namespace

TEST_CASE("gradcheck: elementwise primitives") {
  Rng rng(11);
  Tensor a = tu::rand_tensor({3, 4}, rng, 0.2, 1.5, true);
  Tensor b = tu::rand_tensor({3, 4}, rng, 0.3, 1.7, true);

  gradcheck([&](Tape& t) { return ops::sum_all(t, ops::add(t, a, b)); }, {a, b});
  gradcheck([&](Tape& t) { return ops::sum_all(t, ops::sub(t, a, b)); }, {a, b});
  gradcheck([&](Tape& t) { return ops::sum_all(t, ops::mul(t, a, b)); }, {a, b});
  gradcheck([&](Tape& t) { return ops::sum_all(t, ops::div(t, a, b)); }, {a, b});
  gradcheck([&](Tape& t) { return ops::sum_all(t, ops::exp(t, a)); }, {a});
  gradcheck([&](Tape& t) { return ops::sum_all(t, ops::log(t, a)); }, {a});
  gradcheck([&](Tape& t) { return ops::sum_all(t, ops::tanh(t, a)); }, {a});
  gradcheck([&](Tape& t) { return ops::sum_all(t, ops::sqrt(t, a)); }, {a});
  gradcheck(
      [&](Tape& t) { return ops::sum_all(t, ops::mul_const(t, a, -2.5)); },
      {a});
  gradcheck(
      [&](Tape& t) { return ops::sum_all(t, ops::add_const(t, a, 0.7)); },
      {a});
  gradcheck([&](Tape& t) { return ops::sum_all(t, ops::min2(t, a, b)); },
            {a, b});
  gradcheck(
      [&](Tape& t) {
        return ops::sum_all(t, ops::clamp_const(t, a, 0.4, 1.2));
      },
      {a});
}

TEST_CASE("gradcheck: matmul in all three transpose forms") {
  Rng rng(13);
  Tensor a = tu::rand_tensor({3, 4}, rng, -1, 1, true);
  Tensor b = tu::rand_tensor({4, 2}, rng, -1, 1, true);
  gradcheck(
      [&](Tape& t) { return ops::sum_all(t, ops::matmul(t, a, b)); }, {a, b});

  Tensor bt = tu::rand_tensor({2, 4}, rng, -1, 1, true);
  gradcheck(
      [&](Tape& t) {
        return ops::sum_all(t, ops::matmul(t, a, bt, false, true));
      },
      {a, bt});

  Tensor at = tu::rand_tensor({4, 3}, rng, -1, 1, true);
  gradcheck(
      [&](Tape& t) {
        return ops::sum_all(t, ops::matmul(t, at, b, true, false));
      },
      {at, b});

  Tape t;
  CHECK_THROWS_AS(ops::matmul(t, a, b, true, true), Error);
  CHECK_THROWS_AS(ops::matmul(t, a, bt), Error);  // inner mismatch
}

TEST_CASE("gradcheck: gather/scatter, reductions, broadcasts, reshape") {
  Rng rng(17);
  Tensor x = tu::rand_tensor({4, 3}, rng, -2, 2, true);
  std::vector<int> idx = {2, 0, 1, 2};
  gradcheck(
      [&](Tape& t) { return ops::sum_all(t, ops::gather_rows(t, x, idx)); },
      {x});

  Tensor v = tu::rand_tensor({4}, rng, -2, 2, true);
  gradcheck(
      [&](Tape& t) {
        // Weighted so scatter positions matter.
        Tensor s = ops::scatter_rows(t, v, idx, 3);
        Rng wrng(99);
        Tensor w = tu::rand_tensor({4, 3}, wrng, 0.5, 1.5);
        return ops::sum_all(t, ops::mul(t, s, w));
      },
      {v});

  gradcheck(
      [&](Tape& t) {
        Tensor col = ops::sum_axis0(t, x);  // [3]
        Tensor row = ops::sum_axis1(t, x);  // [4]
        Tensor c = ops::broadcast_row(t, col, 4);
        Tensor r = ops::broadcast_col(t, row, 3);
        return ops::sum_all(t, ops::mul(t, c, r));
      },
      {x});

  gradcheck(
      [&](Tape& t) {
        Tensor flat = ops::reshape(t, x, {12});
        Tensor sq = ops::mul(t, flat, flat);
        return ops::sum_all(t, sq);
      },
      {x});

  gradcheck(
      [&](Tape& t) {
        Tensor s = ops::sum_all(t, x);
        Tensor e = ops::expand(t, s, {2, 2});
        return ops::sum_all(t, ops::mul(t, e, e));
      },
      {x});
}

TEST_CASE("gradcheck: softmax composites") {
  Rng rng(19);
  Tensor logits = tu::rand_tensor({3, 5}, rng, -2, 2, true);
  gradcheck(
      [&](Tape& t) {
        Tensor lp = ops::log_softmax_rows(t, logits);
        Tensor p = ops::softmax_rows(t, logits);
        return ops::sum_all(t, ops::mul(t, p, lp));  // negative entropy
      },
      {logits});

  Tensor one = tu::rand_tensor({4}, rng, -3, 3, true);
  gradcheck([&](Tape& t) { return ops::cross_entropy_onehot(t, one, 2); },
            {one});
}

TEST_CASE("double backward: gradient of a gradient-dot matches FD") {
  // F(x) = sum_k c_k * (dL/dw)_k + |dL/dw|^2 with L = sum(tanh(x W)) b.
  // Differentiating F w.r.t. x exercises the same machinery the alignment
  // attack uses.
  Rng rng(23);
  Tensor x = tu::rand_tensor({2, 3}, rng, -0.8, 0.8, true);
  Tensor w = tu::rand_tensor({3, 4}, rng, -0.8, 0.8, true);
  Tensor bvec = tu::rand_tensor({4, 1}, rng, -0.5, 0.5);
  Tensor c = tu::rand_tensor({3, 4}, rng, -1, 1);

  auto value = [&]() {
    Tape t;
    Tensor h = ops::tanh(t, ops::matmul(t, x, w));
    Tensor loss = ops::sum_all(t, ops::matmul(t, h, bvec));
    GradMap gm = t.backward(loss);
    const Tensor& gw = gm.at(w.storage());
    Tape t2;  // plain arithmetic on the extracted gradient
    (void)t2;
    double acc = 0.0;
    auto gd = gw.data();
    auto cd = c.data();
    for (size_t i = 0; i < gd.size(); ++i) acc += cd[i] * gd[i] + gd[i] * gd[i];
    return acc;
  };

  Tape t;
  Tensor h = ops::tanh(t, ops::matmul(t, x, w));
  Tensor loss = ops::sum_all(t, ops::matmul(t, h, bvec));
  GradMap gm = t.backward(loss);
  const Tensor& gw = gm.at(w.storage());
  Tensor f = ops::add(t, ops::dot_flat(t, gw, c), ops::dot_flat(t, gw, gw));
  GradMap gm2 = t.backward(f);

  tu::GradCheck gc;
  {
    std::vector<double> gx(gm2.at(x.storage()).data().begin(),
                           gm2.at(x.storage()).data().end());
    tu::fd_check_tensor(value, x, gx, gc);
  }
  {
    // dF/dw is a Hessian-style quantity; check it too.
    std::vector<double> gww(gm2.at(w.storage()).data().begin(),
                            gm2.at(w.storage()).data().end());
    tu::fd_check_tensor(value, w, gww, gc);
  }
  CHECK(gc.ok);
  CHECK(gc.entries == 12 + 6);
}
