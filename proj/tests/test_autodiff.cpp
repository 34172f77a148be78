#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "equirl/autodiff.hpp"
#include "equirl/gradcheck.hpp"

using namespace equirl;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST_CASE("primitive forward values") {
  Tape t;
  SUBCASE("hadamard") {
    const Var y = ad::hadamard(t.constant(row({1, 2})), t.constant(row({3, 4})));
    CHECK(y.value() == row({3, 8}));
  }
  SUBCASE("sigmoid(0) = 0.5") { CHECK(ad::sigmoid(t.constant(row({0}))).value()(0, 0) == 0.5); }
  SUBCASE("log_softmax rows are normalized") {
    const Var y = ad::log_softmax(t.constant(row({1, 2, 3})));
    CHECK(y.value().array().exp().sum() == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("shape mismatch") {
    try {
      (void)ad::add(t.constant(row({1, 2})), t.constant(row({1, 2, 3})));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::shape);
    }
  }
}

TEST_CASE("backward") {
  SUBCASE("d/dx sum(tanh(x)) at 0 is all ones") {
    Parameter x("x", Matrix::Zero(2, 3));
    Tape t;
    t.backward(ad::sum(ad::tanh(t.leaf(x))));
    CHECK(x.grad == Matrix::Ones(2, 3));
  }
  SUBCASE("x*x at 3 has gradient 6") {
    Parameter x("x", Matrix::Constant(1, 1, 3.0));
    Tape t;
    const Var v = t.leaf(x);
    t.backward(ad::hadamard(v, v));
    CHECK(x.grad(0, 0) == 6.0);
  }
  SUBCASE("disconnected parameter keeps zero gradient") {
    Parameter x("x", Matrix::Constant(1, 1, 3.0));
    Parameter unused("unused", Matrix::Constant(2, 2, 1.0));
    Tape t;
    (void)t.leaf(unused);
    t.backward(ad::square(t.leaf(x)));
    CHECK(unused.grad.isZero(0.0));
  }
  SUBCASE("non-scalar loss is a rank error") {
    Parameter x("x", Matrix::Zero(2, 2));
    Tape t;
    try {
      t.backward(t.leaf(x));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::rank);
    }
  }
}

TEST_CASE("every primitive matches central finite differences") {
  for (const auto& c : check_primitives(11)) {
    CAPTURE(c.name);
    CHECK(c.result.max_relative_error < 1e-4);
  }
  CHECK(check_primitives(11).size() == 16);
}

TEST_CASE("random 3-layer network matches finite differences") {
  std::mt19937_64 rng(5);
  Parameter w1("w1", random_matrix(6, 4, rng)), w2("w2", random_matrix(5, 6, rng)), w3("w3", random_matrix(3, 5, rng));
  Parameter b1("b1", random_matrix(1, 6, rng));
  const Matrix x = random_matrix(7, 4, rng);
  const std::vector<int> labels{0, 1, 2, 1, 0, 2, 2};
  Parameter* ps[] = {&w1, &w2, &w3, &b1};
  const auto loss = [&](Tape& t) {
    Var h = ad::tanh(ad::add_row(ad::matmul_nt(t.constant(x), t.leaf(w1)), t.leaf(b1)));
    h = ad::sigmoid(ad::matmul_nt(h, t.leaf(w2)));
    const Var logits = ad::matmul_nt(h, t.leaf(w3));
    return ad::scale(ad::mean(ad::gather(ad::log_softmax(logits), labels)), -1.0);
  };
  CHECK(gradient_check(loss, ps).max_relative_error < 1e-4);
}

TEST_CASE("optimizers") {
  SUBCASE("one SGD step") {
    Parameter p("p", Matrix::Zero(1, 1));
    p.grad(0, 0) = 1.0;
    Optimizer opt({OptimizerConfig::Kind::sgd, 0.1});
    Parameter* ps[] = {&p};
    opt.step(ps);
    CHECK(p.value(0, 0) == doctest::Approx(-0.1));
  }
  SUBCASE("zero gradient is a fixed point of SGD") {
    Parameter p("p", Matrix::Constant(2, 2, 1.5));
    Optimizer opt({OptimizerConfig::Kind::sgd, 0.1});
    Parameter* ps[] = {&p};
    opt.step(ps);
    CHECK(p.value == Matrix::Constant(2, 2, 1.5));
  }
  SUBCASE("first Adam step is lr * g / (|g| + eps)") {
    Parameter p("p", Matrix::Zero(1, 2));
    p.grad << 0.5, -2.0;
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1;
    Optimizer opt(cfg);
    Parameter* ps[] = {&p};
    opt.step(ps);
    // m_hat = g, v_hat = g^2 after bias correction
    CHECK(p.value(0, 0) == doctest::Approx(-0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(p.value(0, 1) == doctest::Approx(0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("non-finite gradient names the parameter") {
    Parameter p("layer.coeffs", Matrix::Zero(1, 1));
    p.grad(0, 0) = std::nan("");
    Optimizer opt({});
    Parameter* ps[] = {&p};
    try {
      opt.step(ps);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::non_finite_gradient);
      CHECK(std::string(e.what()).find("layer.coeffs") != std::string::npos);
    }
  }
  SUBCASE("clip_grad_norm") {
    Parameter p("p", Matrix::Zero(1, 2));
    p.grad << 3.0, 4.0;
    Parameter* ps[] = {&p};
    CHECK(clip_grad_norm(ps, 0.5) == doctest::Approx(5.0));
    CHECK(p.grad.norm() == doctest::Approx(0.5));
  }
}

TEST_CASE("determinism: same seed gives bit-identical values and gradients") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Parameter w("w", random_matrix(4, 4, rng));
    const Matrix x = random_matrix(3, 4, rng);
    Tape t;
    const Var y = ad::sum(ad::tanh(ad::matmul_nt(t.constant(x), t.leaf(w))));
    t.backward(y);
    return std::make_pair(y.value()(0, 0), w.grad);
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(2);
  Parameter a("net.a", random_matrix(3, 2, rng)), b("net.b", random_matrix(1, 5, rng));
  const auto path = (std::filesystem::temp_directory_path() / "equirl_ckpt_test.txt").string();
  const Parameter* out[] = {&a, &b};
  save_checkpoint(path, out);
  Parameter a2("net.a", Matrix::Zero(3, 2)), b2("net.b", Matrix::Zero(1, 5));
  Parameter* in[] = {&b2, &a2};
  load_checkpoint(path, in);
  CHECK(a2.value == a.value);
  CHECK(b2.value == b.value);
  Parameter wrong("net.a", Matrix::Zero(2, 2));
  Parameter* bad[] = {&wrong, &b2};
  CHECK_THROWS_AS(load_checkpoint(path, bad), Error);
  std::filesystem::remove(path);
}
