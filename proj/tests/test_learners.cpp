#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <random>

#include "gridfl/learners.hpp"
#include "oracles.hpp"

using namespace gridfl;
using namespace gridfl::nn;

namespace {

Batch random_batch(const LstmConfig& cfg, int rows, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Batch b;
  b.inputs.resize(rows, cfg.input_window);
  b.labels.resize(rows, cfg.horizon);
  for (int i = 0; i < rows; ++i) {
    for (int t = 0; t < cfg.input_window; ++t) b.inputs(i, t) = dist(rng);
    for (int j = 0; j < cfg.horizon; ++j) b.labels(i, j) = dist(rng);
  }
  return b;
}

}  // namespace

TEST_CASE("zero parameters forward to zero output") {
  LstmConfig cfg{8, 3, 4, 4};
  ModelParams p;
  p.layout = lstm_layout(cfg);
  p.values.assign(static_cast<size_t>(p.layout.total), 0.0);
  std::vector<double> x(8, 1.7);
  for (double v : lstm_forward(p, cfg, x)) CHECK(v == 0.0);
}

TEST_CASE("forward pass matches a hand-rolled cell on constant input") {
  LstmConfig cfg{3, 2, 3, 3};
  ModelParams p = init_params(lstm_layout(cfg), 12345);
  const double c = 0.8;
  std::vector<double> x(3, c);

  oracles::HandCellState st;
  st.h.assign(3, 0.0);
  st.c.assign(3, 0.0);
  for (int t = 0; t < cfg.input_window; ++t) st = oracles::hand_lstm_step(p, 3, c, st);

  // Head: relu(W1 h + b1) then W2 a + b2, scalar loops.
  auto w1 = segment_view(p, "fc1.W");
  auto b1 = segment_view(p, "fc1.b");
  auto w2 = segment_view(p, "fc2.W");
  auto b2 = segment_view(p, "fc2.b");
  std::vector<double> a1(3, 0.0);
  for (int r = 0; r < 3; ++r) {
    double z = b1(r, 0);
    for (int k = 0; k < 3; ++k) z += w1(r, k) * st.h[static_cast<size_t>(k)];
    a1[static_cast<size_t>(r)] = z > 0 ? z : 0.0;
  }
  auto got = lstm_forward(p, cfg, x);
  for (int r = 0; r < 2; ++r) {
    double z = b2(r, 0);
    for (int k = 0; k < 3; ++k) z += w2(r, k) * a1[static_cast<size_t>(k)];
    CHECK(got[static_cast<size_t>(r)] == doctest::Approx(z).epsilon(1e-12));
  }
}

TEST_CASE("output reacts to input perturbations") {
  LstmConfig cfg{6, 2, 5, 4};
  ModelParams p = init_params(lstm_layout(cfg), 777);
  std::vector<double> x{0.1, -0.3, 0.8, 0.2, -0.6, 0.4};
  auto base = lstm_forward(p, cfg, x);
  x[2] += 0.5;
  auto bumped = lstm_forward(p, cfg, x);
  double diff = 0;
  for (size_t i = 0; i < base.size(); ++i) diff += std::abs(base[i] - bumped[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("forward rejects shape mismatches") {
  LstmConfig cfg{6, 2, 5, 4};
  ModelParams p = init_params(lstm_layout(cfg), 1);
  std::vector<double> wrong(5, 0.0);
  CHECK_THROWS_AS(lstm_forward(p, cfg, wrong), std::invalid_argument);
  LstmConfig other{6, 2, 4, 4};
  ModelParams q = init_params(lstm_layout(other), 1);
  std::vector<double> x(6, 0.0);
  CHECK_THROWS_AS(lstm_forward(q, cfg, x), std::invalid_argument);
}

TEST_CASE("zero model with zero labels has zero loss and gradient") {
  LstmConfig cfg{4, 2, 3, 3};
  ModelParams p;
  p.layout = lstm_layout(cfg);
  p.values.assign(static_cast<size_t>(p.layout.total), 0.0);
  Batch b;
  b.inputs = Eigen::MatrixXd::Random(5, 4);
  b.labels = Eigen::MatrixXd::Zero(5, 2);
  auto [loss, grad] = lstm_gradient(p, cfg, b);
  CHECK(loss == 0.0);
  for (double g : grad.values) CHECK(g == 0.0);
}

TEST_CASE("analytic LSTM gradient matches central finite differences") {
  LstmConfig cfg{5, 3, 4, 4};
  ModelParams p = init_params(lstm_layout(cfg), 2024);
  Batch b = random_batch(cfg, 6, 99);

  auto [loss, grad] = lstm_gradient(p, cfg, b);
  CHECK(std::isfinite(loss));

  auto f = [&](const std::vector<double>& v) {
    ModelParams q;
    q.layout = p.layout;
    q.values = v;
    double acc = 0;
    for (Eigen::Index s = 0; s < b.inputs.rows(); ++s) {
      std::vector<double> x(b.inputs.row(s).data(), b.inputs.row(s).data() + b.inputs.cols());
      for (int t = 0; t < cfg.input_window; ++t) x[static_cast<size_t>(t)] = b.inputs(s, t);
      auto pred = lstm_forward(q, cfg, x);
      for (int j = 0; j < cfg.horizon; ++j) {
        double d = pred[static_cast<size_t>(j)] - b.labels(s, j);
        acc += d * d;
      }
    }
    return acc / static_cast<double>(b.inputs.rows() * cfg.horizon);
  };

  auto fd = oracles::finite_difference_gradient(f, p.values, 1e-5);
  double worst = 0;
  for (size_t i = 0; i < fd.size(); ++i) {
    // The floor keeps finite-difference noise on near-zero coordinates out
    // of the ratio; real errors on meaningful coordinates still trip it.
    double denom = std::max({std::abs(fd[i]), std::abs(grad.values[i]), 1e-6});
    worst = std::max(worst, std::abs(fd[i] - grad.values[i]) / denom);
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("duplicating every sample leaves loss and gradient unchanged") {
  LstmConfig cfg{4, 2, 3, 3};
  ModelParams p = init_params(lstm_layout(cfg), 5);
  Batch b = random_batch(cfg, 4, 6);
  Batch doubled;
  doubled.inputs.resize(8, 4);
  doubled.labels.resize(8, 2);
  doubled.inputs << b.inputs, b.inputs;
  doubled.labels << b.labels, b.labels;

  auto one = lstm_gradient(p, cfg, b);
  auto two = lstm_gradient(p, cfg, doubled);
  CHECK(one.loss == doctest::Approx(two.loss).epsilon(1e-12));
  for (size_t i = 0; i < one.grad.values.size(); ++i)
    CHECK(one.grad.values[i] == doctest::Approx(two.grad.values[i]).epsilon(1e-9));
}

TEST_CASE("empty batch is rejected") {
  LstmConfig cfg{4, 2, 3, 3};
  ModelParams p = init_params(lstm_layout(cfg), 5);
  Batch b;
  b.inputs.resize(0, 4);
  b.labels.resize(0, 2);
  CHECK_THROWS_AS(lstm_gradient(p, cfg, b), std::invalid_argument);
}

TEST_CASE("gradient evaluation is bitwise deterministic") {
  LstmConfig cfg{6, 3, 5, 4};
  ModelParams p = init_params(lstm_layout(cfg), 10);
  Batch b = random_batch(cfg, 7, 11);
  auto r1 = lstm_gradient(p, cfg, b);
  auto r2 = lstm_gradient(p, cfg, b);
  CHECK(r1.loss == r2.loss);
  CHECK(r1.grad.values == r2.grad.values);
}

TEST_CASE("mse examples") {
  std::vector<double> a{1.0, 2.0, 3.0};
  CHECK(mse_loss(a, a) == 0.0);
  std::vector<double> p{1.0, 1.0}, l{0.0, 0.0};
  CHECK(mse_loss(p, l) == 1.0);
  std::vector<double> q{1.0, 2.0};
  CHECK_THROWS_AS(mse_loss(a, q), std::invalid_argument);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-5, 5);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(9), y(9);
    for (size_t i = 0; i < 9; ++i) {
      x[i] = d(rng);
      y[i] = d(rng);
    }
    double acc = 0;
    for (size_t i = 0; i < 9; ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    CHECK(mse_loss(x, y) == doctest::Approx(acc / 9.0).epsilon(1e-12));
    CHECK(mse_loss(x, y) >= 0.0);
  }
}

TEST_CASE("gd_step arithmetic") {
  ModelParams p;
  p.layout = linear_layout(2);
  p.values = {1.0, 1.0};
  Gradient g;
  g.layout = p.layout;
  g.values = {2.0, 2.0};

  SUBCASE("zero rate leaves parameters untouched") {
    CHECK(gd_step(p, g, 0.0).values == p.values);
  }
  SUBCASE("quarter step") {
    auto next = gd_step(p, g, 0.25);
    CHECK(next.values[0] == 0.5);
    CHECK(next.values[1] == 0.5);
  }
  SUBCASE("two steps equal one step with summed gradients") {
    Gradient g2;
    g2.layout = p.layout;
    g2.values = {-0.5, 3.0};
    auto twice = gd_step(gd_step(p, g, 0.1), g2, 0.1);
    Gradient sum;
    sum.layout = p.layout;
    sum.values = {g.values[0] + g2.values[0], g.values[1] + g2.values[1]};
    auto once = gd_step(p, sum, 0.1);
    for (size_t i = 0; i < 2; ++i)
      CHECK(twice.values[i] == doctest::Approx(once.values[i]).epsilon(1e-14));
  }
  SUBCASE("layout mismatch is rejected") {
    Gradient wrong;
    wrong.layout = linear_layout(3);
    wrong.values = {0, 0, 0};
    CHECK_THROWS_AS(gd_step(p, wrong, 0.1), std::invalid_argument);
  }
}

TEST_CASE("linear forward") {
  std::vector<double> zero{0.0, 0.0};
  std::vector<double> x{3.0, 4.0};
  CHECK(linear_forward(zero, x) == 0.0);
  std::vector<double> theta{1.0, 2.0};
  CHECK(linear_forward(theta, x) == 11.0);
  std::vector<double> shorter{1.0};
  CHECK_THROWS_AS(linear_forward(theta, shorter), std::invalid_argument);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> d(-2, 2);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> a(6), b(6);
    double acc = 0;
    for (size_t i = 0; i < 6; ++i) {
      a[i] = d(rng);
      b[i] = d(rng);
      acc += a[i] * b[i];
    }
    CHECK(linear_forward(a, b) == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("linear gradient matches finite differences") {
  ModelParams p = init_params(linear_layout(4), 21);
  Batch b;
  b.inputs = Eigen::MatrixXd::Random(12, 4);
  b.labels = Eigen::MatrixXd::Random(12, 1);
  auto [loss, grad] = linear_gradient(p, b);
  auto f = [&](const std::vector<double>& v) {
    ModelParams q;
    q.layout = p.layout;
    q.values = v;
    return linear_gradient(q, b).loss;
  };
  auto fd = oracles::finite_difference_gradient(f, p.values, 1e-6);
  for (size_t i = 0; i < fd.size(); ++i)
    CHECK(grad.values[i] == doctest::Approx(fd[i]).epsilon(1e-5));
  CHECK(loss >= 0.0);
}

TEST_CASE("parameter flattening is a bijection") {
  LstmConfig cfg{4, 3, 3, 5};
  ModelParams p = init_params(lstm_layout(cfg), 404);

  // Rebuild the flat vector from the segment views and compare.
  ModelParams q;
  q.layout = p.layout;
  q.values.assign(p.values.size(), 0.0);
  for (const auto& seg : p.layout.segments)
    segment_view(q, seg.name) = segment_view(p, seg.name);
  CHECK(q.values == p.values);

  int total = 0;
  for (const auto& seg : p.layout.segments) {
    CHECK(seg.offset == total);
    total += seg.size();
  }
  CHECK(total == p.layout.total);
}

TEST_CASE("init_params is reproducible per seed") {
  auto layout = lstm_layout({4, 2, 3, 3});
  auto a = init_params(layout, 9);
  auto b = init_params(layout, 9);
  auto c = init_params(layout, 10);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  for (double v : a.values) {
    CHECK(v >= -0.1);
    CHECK(v <= 0.1);
  }
}

TEST_CASE("checkpoint round-trips exactly") {
  LstmConfig cfg{5, 2, 4, 3};
  ModelParams p = init_params(lstm_layout(cfg), 31);
  std::string path = "checkpoint_test.json";
  save_checkpoint(path, p);
  auto q = load_checkpoint(path);
  CHECK(q.layout == p.layout);
  CHECK(q.values == p.values);
  std::remove(path.c_str());
}

TEST_CASE("train_epoch: full batch equals one gradient step") {
  LstmConfig model{5, 2, 3, 3};
  ModelParams p = init_params(lstm_layout(model), 77);
  Batch b;
  b.inputs = Eigen::MatrixXd::Random(9, 5);
  b.labels = Eigen::MatrixXd::Random(9, 2);
  TrainConfig tc;
  tc.learning_rate = 0.2;
  auto out = train_epoch(p, model, tc, b);
  auto lg = lstm_gradient(p, model, b);
  auto stepped = gd_step(p, lg.grad, 0.2);
  CHECK(out.loss == lg.loss);
  CHECK(out.params.values == stepped.values);
}

TEST_CASE("train_epoch: mini-batch mode is seed-deterministic and seed-sensitive") {
  LstmConfig model{5, 2, 3, 3};
  ModelParams p = init_params(lstm_layout(model), 78);
  Batch b;
  b.inputs = Eigen::MatrixXd::Random(10, 5);
  b.labels = Eigen::MatrixXd::Random(10, 2);
  TrainConfig tc;
  tc.learning_rate = 0.1;
  tc.full_batch = false;
  tc.batch_size = 3;
  tc.shuffle_seed = 5;
  auto r1 = train_epoch(p, model, tc, b, 0);
  auto r2 = train_epoch(p, model, tc, b, 0);
  CHECK(r1.params.values == r2.params.values);
  auto r3 = train_epoch(p, model, tc, b, 1);  // next epoch reshuffles
  CHECK(r1.params.values != r3.params.values);
  tc.shuffle_seed = 6;
  auto r4 = train_epoch(p, model, tc, b, 0);
  CHECK(r1.params.values != r4.params.values);
  // Loss reports the starting parameters, like the full-batch path.
  CHECK(r1.loss == lstm_gradient(p, model, b).loss);
}
