#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>
#include <vector>

#include "mshield/nn.hpp"

using namespace mshield;

namespace {

// Scalar loss L = sum of 0.5 * y_i^2 over all outputs; dL/dy = y.
double quadratic_loss(const Matrix& y) { return 0.5 * y.array().square().sum(); }

double loss_at(const Mlp& net, const Matrix& x) {
  return quadratic_loss(forward(net, x));
}

}  // namespace

TEST_CASE("gelu values") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == Catch::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(gelu(-1.0) == Catch::Approx(-0.15865525393145705).epsilon(1e-10));
}

TEST_CASE("forward of a zero-weight net returns the bias") {
  Rng rng(1);
  Mlp net = Mlp::make({3, 4, 2}, rng);
  for (auto& w : net.weights) w.setZero();
  net.biases[1] << 0.7, -0.3;
  Vector x(3);
  x << 1.0, 2.0, 3.0;
  const Vector y = forward1(net, x);
  CHECK(y(0) == Catch::Approx(0.7));
  CHECK(y(1) == Catch::Approx(-0.3));
}

TEST_CASE("forward rejects shape mismatch") {
  Rng rng(1);
  Mlp net = Mlp::make({3, 4, 2}, rng);
  Matrix bad(1, 5);
  bad.setZero();
  CHECK_THROWS_AS(forward(net, bad), ShapeMismatchError);
}

TEST_CASE("linear chain rule base case") {
  // 1-1 linear net, loss = output: weight grad = input, bias grad = 1.
  Rng rng(2);
  Mlp net = Mlp::make({1, 1}, rng);
  Matrix x(1, 1);
  x(0, 0) = 2.5;
  ForwardCache cache;
  forward(net, x, &cache);
  Matrix dy(1, 1);
  dy(0, 0) = 1.0;
  const auto g = backward(net, cache, dy);
  CHECK(g.weights[0](0, 0) == Catch::Approx(2.5));
  CHECK(g.biases[0](0) == Catch::Approx(1.0));
}

TEST_CASE("zero output gradient gives zero parameter gradients") {
  Rng rng(3);
  Mlp net = Mlp::make({4, 8, 2}, rng);
  Matrix x(5, 4);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  ForwardCache cache;
  forward(net, x, &cache);
  const auto g = backward(net, cache, Matrix::Zero(5, 2));
  for (const auto& w : g.weights) CHECK(w.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& b : g.biases) CHECK(b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradients match central finite differences on random nets") {
  Rng rng(12345);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int in = 2 + static_cast<int>(rng.uniform_index(4));
    const int h1 = 4 + static_cast<int>(rng.uniform_index(12));
    const int h2 = 4 + static_cast<int>(rng.uniform_index(12));
    const int out = 1 + static_cast<int>(rng.uniform_index(3));
    Mlp net = Mlp::make({in, h1, h2, out}, rng);
    for (auto& b : net.biases)
      for (int i = 0; i < b.size(); ++i) b(i) = rng.uniform(-0.3, 0.3);
    Matrix x(3, in);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.5, 1.5);

    ForwardCache cache;
    const Matrix y = forward(net, x, &cache);
    const auto g = backward(net, cache, y);  // dL/dy = y for the quadratic loss

    const double fd_step = 1e-5;
    for (int l = 0; l < net.layer_count(); ++l) {
      for (int k = 0; k < net.weights[l].size();
           k += 1 + static_cast<int>(rng.uniform_index(7))) {
        double* p = net.weights[l].data() + k;
        const double saved = *p;
        *p = saved + fd_step;
        const double up = loss_at(net, x);
        *p = saved - fd_step;
        const double down = loss_at(net, x);
        *p = saved;
        const double fd = (up - down) / (2.0 * fd_step);
        const double an = g.weights[l].data()[k];
        const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-6});
        worst_rel = std::max(worst_rel, rel);
      }
      for (int k = 0; k < net.biases[l].size(); ++k) {
        double* p = &net.biases[l](k);
        const double saved = *p;
        *p = saved + fd_step;
        const double up = loss_at(net, x);
        *p = saved - fd_step;
        const double down = loss_at(net, x);
        *p = saved;
        const double fd = (up - down) / (2.0 * fd_step);
        const double an = g.biases[l](k);
        const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-6});
        worst_rel = std::max(worst_rel, rel);
      }
    }
  }
  CHECK(worst_rel < 1e-4);
}

TEST_CASE("input gradients match finite differences") {
  Rng rng(77);
  Mlp net = Mlp::make({4, 16, 16, 2}, rng);
  Matrix x(2, 4);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  ForwardCache cache;
  const Matrix y = forward(net, x, &cache);
  Matrix dx;
  backward(net, cache, y, &dx);
  const double fd_step = 1e-6;
  for (int i = 0; i < x.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data()[i] += fd_step;
    xm.data()[i] -= fd_step;
    const double fd = (loss_at(net, xp) - loss_at(net, xm)) / (2.0 * fd_step);
    CHECK(dx.data()[i] == Catch::Approx(fd).epsilon(1e-5).margin(1e-8));
  }
}

TEST_CASE("cosine learning rate endpoints") {
  AdamParams hp;
  hp.lr_base = 5e-5;
  hp.lr_floor = 5e-6;
  hp.anneal_steps = 1000;
  CHECK(cosine_lr(hp, 0) == Catch::Approx(5e-5));
  CHECK(cosine_lr(hp, 1000) == Catch::Approx(5e-6));
  CHECK(cosine_lr(hp, 2000) == Catch::Approx(5e-6));
  CHECK(cosine_lr(hp, 500) == Catch::Approx(0.5 * (5e-5 + 5e-6)));
}

TEST_CASE("adam leaves parameters alone for zero gradients") {
  Rng rng(5);
  Mlp net = Mlp::make({2, 4, 1}, rng);
  const Mlp before = net;
  AdamParams hp;
  hp.anneal_steps = 10;
  AdamState state = AdamState::make(net, hp);
  const auto zeros = Gradients::zeros_like(net);
  for (int i = 0; i < 5; ++i) adam_step(state, net, zeros, i);
  for (int l = 0; l < net.layer_count(); ++l) {
    CHECK((net.weights[l] - before.weights[l]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("adam matches hand-rolled arithmetic on a scalar") {
  // Single 1x1 weight, constant gradient 1.0, fixed lr.
  Rng rng(6);
  Mlp net = Mlp::make({1, 1}, rng);
  net.weights[0](0, 0) = 0.5;
  AdamParams hp;
  hp.lr_base = hp.lr_floor = 1e-2;  // constant schedule
  hp.anneal_steps = 1;
  AdamState state = AdamState::make(net, hp);
  Gradients g = Gradients::zeros_like(net);
  g.weights[0](0, 0) = 1.0;

  double m = 0.0, v = 0.0, w = 0.5;
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * 1.0;
    v = 0.999 * v + 0.001 * 1.0;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    w -= 1e-2 * mhat / (std::sqrt(vhat) + 1e-8);
    adam_step(state, net, g, t);
    REQUIRE(net.weights[0](0, 0) == Catch::Approx(w).epsilon(1e-14));
  }
}

TEST_CASE("adam rejects shape mismatch") {
  Rng rng(8);
  Mlp net = Mlp::make({2, 3, 1}, rng);
  Mlp other = Mlp::make({2, 4, 1}, rng);
  AdamState state = AdamState::make(net, AdamParams{});
  auto g = Gradients::zeros_like(other);
  CHECK_THROWS_AS(adam_step(state, net, g, 0), ShapeMismatchError);
  CHECK_THROWS_AS(soft_update(other, net, 0.5), ShapeMismatchError);
}

TEST_CASE("soft_update endpoints and arithmetic") {
  Rng rng(9);
  Mlp online = Mlp::make({2, 3, 1}, rng);
  Mlp target = Mlp::make({2, 3, 1}, rng);

  Mlp t1 = target;
  soft_update(t1, online, 1.0);
  for (int l = 0; l < online.layer_count(); ++l) {
    CHECK((t1.weights[l] - online.weights[l]).cwiseAbs().maxCoeff() < 1e-15);
  }
  Mlp t0 = target;
  soft_update(t0, online, 0.0);
  for (int l = 0; l < online.layer_count(); ++l) {
    CHECK((t0.weights[l] - target.weights[l]).cwiseAbs().maxCoeff() == 0.0);
  }
  Mlp t = target;
  t.weights[0](0, 0) = 0.0;
  Mlp o = online;
  o.weights[0](0, 0) = 1.0;
  soft_update(t, o, 0.001);
  CHECK(t.weights[0](0, 0) == Catch::Approx(0.001));
}

TEST_CASE("soft_update converges geometrically to a frozen online net") {
  Rng rng(10);
  Mlp online = Mlp::make({2, 4, 1}, rng);
  Mlp target = Mlp::make({2, 4, 1}, rng);
  const double tau = 0.05;
  double prev_gap = 1e300;
  for (int i = 0; i < 200; ++i) {
    soft_update(target, online, tau);
    double gap = 0.0;
    for (int l = 0; l < online.layer_count(); ++l) {
      gap = std::max(gap, (target.weights[l] - online.weights[l]).cwiseAbs().maxCoeff());
    }
    REQUIRE(gap <= prev_gap * (1.0 - tau) + 1e-15);
    prev_gap = gap;
  }
  CHECK(prev_gap < 1e-4);
}

TEST_CASE("mlp checkpoint roundtrip is bit exact") {
  Rng rng(11);
  Mlp net = Mlp::make({5, 7, 3}, rng);
  AdamParams hp;
  hp.anneal_steps = 123;
  AdamState state = AdamState::make(net, hp);
  Gradients g = Gradients::zeros_like(net);
  for (auto& w : g.weights)
    for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);
  adam_step(state, net, g, 3);

  std::stringstream ss;
  write_mlp(ss, net);
  write_adam(ss, state);
  const Mlp net2 = read_mlp(ss);
  const AdamState state2 = read_adam(ss);

  REQUIRE(net2.widths == net.widths);
  for (int l = 0; l < net.layer_count(); ++l) {
    REQUIRE(std::memcmp(net.weights[l].data(), net2.weights[l].data(),
                        sizeof(double) * net.weights[l].size()) == 0);
    REQUIRE(std::memcmp(net.biases[l].data(), net2.biases[l].data(),
                        sizeof(double) * net.biases[l].size()) == 0);
    REQUIRE(std::memcmp(state.m_w[l].data(), state2.m_w[l].data(),
                        sizeof(double) * state.m_w[l].size()) == 0);
    REQUIRE(std::memcmp(state.v_w[l].data(), state2.v_w[l].data(),
                        sizeof(double) * state.v_w[l].size()) == 0);
  }
  REQUIRE(state2.step == state.step);
  REQUIRE(state2.hp.anneal_steps == state.hp.anneal_steps);
}

TEST_CASE("truncated checkpoint stream is rejected") {
  Rng rng(13);
  Mlp net = Mlp::make({3, 4, 2}, rng);
  std::stringstream ss;
  write_mlp(ss, net);
  std::string bytes = ss.str();
  bytes.resize(bytes.size() / 2);
  std::stringstream cut(bytes);
  CHECK_THROWS_AS(read_mlp(cut), ConfigError);
}

TEST_CASE("training updates are deterministic for a fixed seed") {
  auto run = []() {
    Rng rng(31415);
    Mlp net = Mlp::make({4, 8, 2}, rng);
    AdamParams hp;
    hp.lr_base = 1e-3;
    hp.lr_floor = 1e-4;
    hp.anneal_steps = 50;
    AdamState state = AdamState::make(net, hp);
    Matrix x(8, 4);
    for (int step = 0; step < 50; ++step) {
      for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
      ForwardCache cache;
      const Matrix y = forward(net, x, &cache);
      const auto g = backward(net, cache, y);
      adam_step(state, net, g, step);
    }
    return net;
  };
  const Mlp a = run();
  const Mlp b = run();
  for (int l = 0; l < a.layer_count(); ++l) {
    REQUIRE(std::memcmp(a.weights[l].data(), b.weights[l].data(),
                        sizeof(double) * a.weights[l].size()) == 0);
  }
  REQUIRE(a.all_finite());
}
