#include "equirl/gradcheck.hpp"

#include <cmath>
#include <memory>
#include <random>

namespace equirl {

GradCheckResult gradient_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params, double eps,
                               double floor) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  GradCheckResult result;
  for (Parameter* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + eps;
      Tape up;
      const double f_up = loss(up).value()(0, 0);
      p->value.data()[i] = saved - eps;
      Tape down;
      const double f_down = loss(down).value()(0, 0);
      p->value.data()[i] = saved;
      const double numeric = (f_up - f_down) / (2 * eps);
      const double analytic = p->grad.data()[i];
      const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
      if (rel > result.max_relative_error || result.worst_index < 0) {
        if (rel >= result.max_relative_error) result = {rel, p->name, i, analytic, numeric};
      }
    }
  }
  return result;
}

std::vector<PrimitiveCheck> check_primitives(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto random = [&](int r, int c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  Parameter a("a", random(3, 4));
  Parameter b("b", random(3, 4));
  Parameter m("m", random(4, 2));
  Parameter bias("bias", random(1, 4));
  Parameter coeff("coeff", random(3, 1));
  auto basis = std::make_shared<const Matrix>(random(12, 3));
  auto map = std::make_shared<const std::vector<int>>(std::vector<int>{5, -1, 0, 11, 7, 7});
  const std::vector<int> picks{1, 3, 0};
  Parameter* ps[] = {&a, &b, &m, &bias, &coeff};

  const std::vector<std::pair<const char*, std::function<Var(Tape&)>>> cases = {
      {"matmul", [&](Tape& t) { return ad::sum(ad::square(ad::matmul(t.leaf(a), t.leaf(m)))); }},
      {"matmul_nt", [&](Tape& t) { return ad::sum(ad::square(ad::matmul_nt(t.leaf(a), t.leaf(b)))); }},
      {"add/sub", [&](Tape& t) { return ad::sum(ad::square(ad::sub(ad::add(t.leaf(a), t.leaf(b)), t.leaf(b)))); }},
      {"add_row", [&](Tape& t) { return ad::sum(ad::square(ad::add_row(t.leaf(a), t.leaf(bias)))); }},
      {"scale", [&](Tape& t) { return ad::sum(ad::square(ad::scale(t.leaf(a), -2.5))); }},
      {"hadamard", [&](Tape& t) { return ad::sum(ad::hadamard(t.leaf(a), t.leaf(b))); }},
      {"sigmoid", [&](Tape& t) { return ad::sum(ad::square(ad::sigmoid(t.leaf(a)))); }},
      {"tanh", [&](Tape& t) { return ad::sum(ad::square(ad::tanh(t.leaf(a)))); }},
      {"exp", [&](Tape& t) { return ad::sum(ad::exp(ad::scale(t.leaf(a), 0.5))); }},
      {"relu", [&](Tape& t) { return ad::sum(ad::square(ad::relu(t.leaf(a)))); }},
      {"log_softmax+gather", [&](Tape& t) { return ad::sum(ad::gather(ad::log_softmax(t.leaf(a)), picks)); }},
      {"concat/slice",
       [&](Tape& t) {
         const Var c = ad::concat_cols({t.leaf(a), t.leaf(b)});
         return ad::sum(ad::square(ad::slice_cols(c, 2, 4)));
       }},
      {"mean", [&](Tape& t) { return ad::mean(ad::square(t.leaf(a))); }},
      {"row_sum", [&](Tape& t) { return ad::sum(ad::square(ad::row_sum(t.leaf(a)))); }},
      {"remap", [&](Tape& t) { return ad::sum(ad::square(ad::remap(t.leaf(a), 2, 3, map))); }},
      {"combine", [&](Tape& t) { return ad::sum(ad::square(ad::combine(t.leaf(coeff), basis, 3, 4))); }},
  };
  std::vector<PrimitiveCheck> out;
  for (const auto& [name, fn] : cases) out.push_back({name, gradient_check(fn, ps)});
  return out;
}

}  // namespace equirl
