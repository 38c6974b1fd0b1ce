// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fedmd/adam.hpp"
#include "fedmd/dataset.hpp"
#include "fedmd/error.hpp"
#include "fedmd/gradcheck.hpp"
#include "fedmd/loss.hpp"
#include "fedmd/network.hpp"
#include "fedmd/train.hpp"
#include "support.hpp"

using namespace fedmd;

namespace {

Network small_net(std::uint64_t seed, std::vector<std::size_t> hidden = {8, 5}, std::size_t in = 4,
                  std::size_t classes = 3) {
  Rng rng(seed);
  Network net = Network::mlp(in, hidden, classes, rng);
  // Non-zero biases so the bias path is exercised.
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    for (float& b : net.bias(l)) b = static_cast<float>(u(rng));
  }
  return net;
}

}  // namespace

TEST_CASE("tensor shapes") {
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
  Tensor empty = Tensor::zeros(0, 5);
  CHECK(empty.rows() == 0);
  CHECK(empty.cols() == 5);
  CHECK(empty.size() == 0);

  Tensor stack({2, 2, 3}, std::vector<float>(12, 1.0f));
  CHECK(stack.rows() == 2);
  CHECK(stack.cols() == 6);
  CHECK(stack.flattened().shape() == std::vector<std::size_t>{2, 6});

  Tensor m = Tensor::matrix(3, 2, {0, 1, 2, 3, 4, 5});
  std::vector<std::size_t> idx{2, 0, 2};
  Tensor g = m.gather_rows(idx);
  CHECK(g == Tensor::matrix(3, 2, {4, 5, 0, 1, 4, 5}));
  std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(m.gather_rows(bad), IndexError);

  m.at(1, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(m.all_finite());
}

TEST_CASE("network construction") {
  const std::vector<Network::LayerSpec> broken{{4, 3, Activation::relu}, {2, 2, Activation::identity}};
  CHECK_THROWS_AS(Network(broken, "broken"), ShapeError);
  const std::vector<Network::LayerSpec> relu_last{{4, 3, Activation::relu}};
  CHECK_THROWS_AS(Network(relu_last, "relu-last"), ShapeError);

  Rng a(7), b(7);
  const std::vector<std::size_t> hidden{16, 8};
  Network n1 = Network::mlp(10, hidden, 4, a);
  Network n2 = Network::mlp(10, hidden, 4, b);
  CHECK(n1 == n2);
  CHECK(n1.param_count() == 10 * 16 + 16 + 16 * 8 + 8 + 8 * 4 + 4);
  CHECK(n1.input_dim() == 10);
  CHECK(n1.output_dim() == 4);
  CHECK(n1.arch_id() == "mlp-16-8");

  for (std::size_t l = 0; l < n1.layers().size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(n1.layers()[l].in_dim));
    for (float w : n1.weights(l)) CHECK(std::abs(w) <= bound);
    for (float x : n1.bias(l)) CHECK(x == 0.0f);
  }
}

TEST_CASE("forward matches a float64 row-by-row evaluation") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Network net = small_net(100 + trial, {1 + static_cast<std::size_t>(trial % 7), 6}, 5, 4);
    Tensor x = test::random_matrix(9, 5, rng, 2.0);
    Tensor y = forward(net, x);
    auto ref = test::naive_forward(net, x);
    for (std::size_t r = 0; r < 9; ++r) {
      for (std::size_t c = 0; c < 4; ++c) CHECK(y.at(r, c) == doctest::Approx(ref[r][c]).epsilon(1e-5));
    }
  }
}

TEST_CASE("batched forward rows equal single-row forward bit for bit") {
  std::mt19937_64 rng(12);
  Network net = small_net(5, {32, 16}, 6, 5);
  Tensor x = test::random_matrix(17, 6, rng);
  Tensor batched = forward(net, x);
  for (std::size_t r = 0; r < 17; ++r) {
    std::vector<std::size_t> one{r};
    Tensor single = forward(net, x.gather_rows(one));
    for (std::size_t c = 0; c < 5; ++c) CHECK(single.at(0, c) == batched.at(r, c));
  }
}

TEST_CASE("forward rejects a wrong feature count naming both dims") {
  Network net = small_net(1);
  try {
    forward(net, Tensor::zeros(2, 7));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('7') != std::string::npos);
    CHECK(msg.find('4') != std::string::npos);
  }
}

TEST_CASE("predict breaks ties toward the lowest class") {
  const std::vector<Network::LayerSpec> spec{{2, 3, Activation::identity}};
  Network net(spec, "zero");
  auto p = predict(net, Tensor::zeros(3, 2));
  CHECK(p == std::vector<int>{0, 0, 0});
}

TEST_CASE("softmax is stable and normalized") {
  Tensor logits = Tensor::matrix(2, 3, {1000.0f, -1000.0f, 0.0f, 3.0f, 3.0f, 3.0f});
  Tensor p = softmax(logits);
  CHECK(p.all_finite());
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (float v : p.row(r)) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(p.at(0, 0) == doctest::Approx(1.0));
  CHECK(p.at(1, 2) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("cross-entropy against a float64 log-sum-exp oracle") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> label(0, 5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = test::random_matrix(8, 6, rng, 10.0);
    std::vector<int> y(8);
    for (int& v : y) v = label(rng);
    LossResult r = cross_entropy(logits, y);
    CHECK(r.loss == doctest::Approx(test::naive_cross_entropy(logits, y)).epsilon(1e-6));
    Tensor p = softmax(logits);
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t c = 0; c < 6; ++c) {
        const double expect = (p.at(i, c) - (static_cast<int>(c) == y[i] ? 1.0 : 0.0)) / 8.0;
        CHECK(r.grad.at(i, c) == doctest::Approx(expect).epsilon(1e-5));
      }
    }
  }
  LossResult uniform = cross_entropy(Tensor::zeros(4, 10), std::vector<int>{0, 3, 9, 1});
  CHECK(uniform.loss == doctest::Approx(std::log(10.0)).epsilon(1e-9));

  CHECK_THROWS_AS(cross_entropy(Tensor::zeros(2, 3), std::vector<int>{0, 3}), IndexError);
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros(2, 3), std::vector<int>{0}), ShapeError);
}

TEST_CASE("distillation loss and subgradient") {
  Tensor logits = Tensor::matrix(2, 2, {1.0f, -2.0f, 0.5f, 4.0f});
  Tensor targets = Tensor::matrix(2, 2, {0.0f, -2.0f, 1.5f, 1.0f});
  LossResult mae = distill_loss(logits, targets);
  CHECK(mae.loss == doctest::Approx((1.0 + 0.0 + 1.0 + 3.0) / 4.0));
  CHECK(mae.grad == Tensor::matrix(2, 2, {0.25f, 0.0f, -0.25f, 0.25f}));

  LossResult mse = distill_loss(logits, targets, DistillLoss::mse);
  CHECK(mse.loss == doctest::Approx((1.0 + 0.0 + 1.0 + 9.0) / 4.0));
  CHECK(mse.grad.at(1, 1) == doctest::Approx(2.0 * 3.0 / 4.0));

  CHECK(distill_loss(logits, logits).loss == 0.0);
  CHECK_THROWS_AS(distill_loss(logits, Tensor::zeros(2, 3)), ShapeError);
}

TEST_CASE("relative error floor") {
  CHECK(gradient_relative_error(1.0, 1.001) == doctest::Approx(0.001 / 1.001));
  CHECK(gradient_relative_error(1e-9, -1e-9) == doctest::Approx(2e-6));
  CHECK(gradient_relative_error(0.0, 0.0) == 0.0);
}

TEST_CASE("float64 oracle agrees with forward") {
  std::mt19937_64 rng(8);
  Network net = small_net(9);
  Tensor x = test::random_matrix(5, 4, rng);
  std::vector<int> y{0, 1, 2, 1, 0};
  std::vector<double> p(net.params().begin(), net.params().end());
  CHECK(cross_entropy_f64(net, p, x, y).value ==
        doctest::Approx(cross_entropy(forward(net, x), y).loss).epsilon(1e-5));
}

TEST_CASE("backprop matches finite differences on random networks") {
  GradcheckResult r = run_gradcheck(60, 2024);
  CHECK(r.networks == 60);
  CHECK(r.coordinates > 1000);
  CHECK(r.max_error_cross_entropy < 1e-3);
  CHECK(r.max_error_distill < 1e-3);
}

TEST_CASE("adam follows the float64 oracle") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int problem = 0; problem < 20; ++problem) {
    // f(p) = sum a_i (p_i - t_i)^2
    const std::size_t n = 3;
    std::vector<double> a(n), t(n), oracle(n);
    std::vector<float> params(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = 0.1 + std::abs(u(rng));
      t[i] = u(rng);
      params[i] = static_cast<float>(u(rng));
      oracle[i] = params[i];
    }
    AdamState state(n, AdamConfig{});
    test::OracleAdam ref;
    for (int step = 0; step < 100; ++step) {
      std::vector<float> g(n);
      std::vector<double> go(n);
      for (std::size_t i = 0; i < n; ++i) {
        g[i] = static_cast<float>(2.0 * a[i] * (params[i] - t[i]));
        go[i] = 2.0 * a[i] * (oracle[i] - t[i]);
      }
      adam_step(params, g, state);
      ref.step(oracle, go);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(params[i] - oracle[i]) < 1e-6);
    }
    CHECK(state.step == 100);
  }
  std::vector<float> p(2);
  std::vector<float> g(3);
  AdamState s(2, AdamConfig{});
  CHECK_THROWS_AS(adam_step(p, g, s), ShapeError);
}

TEST_CASE("supervised training fits separable blobs") {
  Dataset data = synth_blobs(3, 40, 4, 0.5, 5);
  Network net = small_net(2, {16}, 4, 3);
  AdamState opt(net.param_count(), AdamConfig{0.01});
  Rng rng(1);
  TrainReport r = train_supervised(net, data, 30, 16, opt, rng);
  CHECK(r.epochs_completed == 30);
  CHECK(r.epoch_losses.size() == 30);
  CHECK(r.initial_loss.has_value());
  CHECK(r.final_loss() < r.epoch_losses.front());
  CHECK(accuracy(net, data) > 0.95);
}

TEST_CASE("distillation moves logits toward the targets") {
  std::mt19937_64 g(4);
  Tensor x = test::random_matrix(64, 4, g);
  Network teacher = small_net(30, {8}, 4, 3);
  Tensor targets = forward(teacher, x);
  Network student = small_net(31, {12}, 4, 3);
  AdamState opt(student.param_count(), AdamConfig{0.01});
  Rng rng(2);
  const double before = distill_loss(forward(student, x), targets).loss;
  train_distill(student, x, targets, 40, 16, opt, rng, DistillLoss::mae);
  CHECK(distill_loss(forward(student, x), targets).loss < 0.5 * before);
}

TEST_CASE("training failures") {
  Network net = small_net(1);
  AdamState opt(net.param_count(), AdamConfig{});
  Rng rng(1);
  Dataset empty;
  empty.features = Tensor::zeros(0, 4);
  empty.num_classes = 3;
  CHECK_THROWS_AS(train_supervised(net, empty, 1, 4, opt, rng), ConfigError);
  CHECK_THROWS_AS(accuracy(net, empty), ConfigError);

  Dataset poisoned = synth_blobs(3, 4, 4, 1.0, 3);
  poisoned.features.at(5, 2) = std::numeric_limits<float>::infinity();
  try {
    train_supervised(net, poisoned, 3, 4, opt, rng);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("early stopping waits exactly `patience` stale epochs") {
  Dataset data = synth_blobs(3, 10, 4, 1.0, 9);
  Network net = small_net(3);
  AdamState opt(net.param_count(), AdamConfig{1e-12});
  Rng rng(1);
  EarlyStopping stop;
  TrainReport r = train_until_converged(net, data, data, stop, 8, opt, rng);
  CHECK(r.epochs_completed == 1 + stop.patience);

  Network net2 = small_net(3);
  AdamState opt2(net2.param_count(), AdamConfig{0.01});
  EarlyStopping capped{5, 0.001, 3};
  CHECK(train_until_converged(net2, data, data, capped, 8, opt2, rng).epochs_completed <= 3);
}
