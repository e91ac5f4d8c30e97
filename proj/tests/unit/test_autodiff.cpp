#include <cmath>
#include <random>

#include "doctest.h"
#include "pqda/autodiff.hpp"
#include "pqda/errors.hpp"

using namespace pqda;
using ad::Instruction;
using ad::Program;

namespace {

Instruction param(std::size_t offset, std::size_t size) {
  Instruction i;
  i.op = "param";
  i.offset = offset;
  i.size = size;
  return i;
}

Instruction input(std::size_t which) {
  Instruction i;
  i.op = "input";
  i.size = which;
  return i;
}

Instruction unary(const char* op, int a, double coef = 0.0) {
  Instruction i;
  i.op = op;
  i.args = {a};
  i.coef = coef;
  return i;
}

Instruction binary(const char* op, int a, int b) {
  Instruction i;
  i.op = op;
  i.args = {a, b};
  return i;
}

Instruction affine(std::size_t w, std::size_t b, std::size_t rows, std::size_t cols, int x) {
  Instruction i;
  i.op = "affine";
  i.offset = w;
  i.bias_offset = b;
  i.rows = rows;
  i.cols = cols;
  i.args = {x};
  return i;
}

Instruction sum_of(std::vector<int> args) {
  Instruction i;
  i.op = "sum";
  i.args = std::move(args);
  return i;
}

std::vector<double> random_vector(std::size_t n, unsigned seed, double scale = 1.0) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(eng);
  return v;
}

// 3 -> 5 -> 5 network with tanh activations, scalar output = norm; p = 50.
Program two_layer_program() {
  Program p;
  p.push_back(input(0));                      // 0
  p.push_back(affine(0, 15, 5, 3, 0));        // 1
  p.push_back(unary("tanh", 1));              // 2
  p.push_back(affine(20, 45, 5, 5, 2));       // 3
  p.push_back(unary("tanh", 3));              // 4
  p.push_back(unary("norm", 4));              // 5
  return p;
}

// One GRU cell step (input 2, hidden 3) from a non-zero hidden state, scored
// by the norm of the new hidden state.
Program gru_cell_program(std::size_t& n_params) {
  const std::size_t I = 2, H = 3;
  const std::size_t w_ih = 0, w_hh = 3 * H * I, b_ih = w_hh + 3 * H * H, b_hh = b_ih + 3 * H;
  n_params = b_hh + 3 * H;
  Program p;
  p.push_back(input(0));  // 0: x
  p.push_back(input(1));  // 1: h
  auto gi = [&](std::size_t g) { return affine(w_ih + g * H * I, b_ih + g * H, H, I, 0); };
  auto gh = [&](std::size_t g) { return affine(w_hh + g * H * H, b_hh + g * H, H, H, 1); };
  p.push_back(gi(0));                    // 2
  p.push_back(gh(0));                    // 3
  p.push_back(binary("add", 2, 3));      // 4
  p.push_back(unary("sigmoid", 4));      // 5: r
  p.push_back(gi(1));                    // 6
  p.push_back(gh(1));                    // 7
  p.push_back(binary("add", 6, 7));      // 8
  p.push_back(unary("sigmoid", 8));      // 9: z
  p.push_back(gi(2));                    // 10
  p.push_back(gh(2));                    // 11
  p.push_back(binary("mul", 5, 11));     // 12
  p.push_back(binary("add", 10, 12));    // 13
  p.push_back(unary("tanh", 13));        // 14: n
  p.push_back(binary("sub", 1, 14));     // 15
  p.push_back(binary("mul", 9, 15));     // 16
  p.push_back(binary("add", 14, 16));    // 17: h'
  p.push_back(unary("norm", 17));        // 18
  return p;
}

} // namespace

TEST_CASE("norm of (3, 4) has value 5 and gradient (0.6, 0.8)") {
  const Program p{param(0, 2), unary("norm", 0)};
  const std::vector<double> theta{3.0, 4.0};
  const auto r = ad::forward_backward(p, theta, {});
  CHECK(r.value == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(r.grad[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r.grad[1] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("tanh at zero has unit slope") {
  const Program p{param(0, 1), unary("tanh", 0)};
  const std::vector<double> theta{0.0};
  const auto r = ad::forward_backward(p, theta, {});
  CHECK(r.value == 0.0);
  CHECK(r.grad[0] == doctest::Approx(1.0));
}

TEST_CASE("two-layer network gradient matches central differences") {
  const Program p = two_layer_program();
  const auto theta = random_vector(50, 7, 0.7);
  const std::vector<std::vector<double>> inputs{random_vector(3, 8)};
  CHECK(ad::grad_check(p, theta, inputs, 1e-5) < 1e-4);
}

TEST_CASE("grad_check on linear and quadratic programs") {
  SUBCASE("linear sum is exact") {
    Program p;
    std::vector<int> terms;
    for (int i = 0; i < 4; ++i) {
      p.push_back(param(static_cast<std::size_t>(i), 1));
      terms.push_back(i);
    }
    p.push_back(sum_of(terms));
    const auto theta = random_vector(4, 3, 1.0);
    CHECK(ad::grad_check(p, theta, {}, 1e-5) < 1e-10);
    const auto r = ad::forward_backward(p, theta, {});
    for (double g : r.grad) CHECK(g == 1.0);
  }
  SUBCASE("quadratic sum has gradient 2 theta") {
    Program p;
    std::vector<int> terms;
    for (int i = 0; i < 3; ++i) {
      p.push_back(param(static_cast<std::size_t>(i), 1));
      p.push_back(binary("mul", 2 * i, 2 * i));
      terms.push_back(2 * i + 1);
    }
    p.push_back(sum_of(terms));
    const std::vector<double> theta{1.0, 2.0, 3.0};
    CHECK(ad::grad_check(p, theta, {}, 1e-5) < 1e-8);
    const auto r = ad::forward_backward(p, theta, {});
    CHECK(r.value == doctest::Approx(14.0));
    CHECK(r.grad == std::vector<double>{2.0, 4.0, 6.0});
  }
}

TEST_CASE("GRU cell composition gradient matches central differences") {
  std::size_t n = 0;
  const Program p = gru_cell_program(n);
  const auto theta = random_vector(n, 11, 0.8);
  const std::vector<std::vector<double>> inputs{random_vector(2, 12), random_vector(3, 13, 0.5)};
  CHECK(ad::grad_check(p, theta, inputs, 1e-5) < 1e-4);
}

TEST_CASE("unsupported primitive is rejected by name") {
  const Program p{param(0, 1), unary("relu", 0)};
  const std::vector<double> theta{1.0};
  try {
    ad::forward_backward(p, theta, {});
    FAIL("expected rejection");
  } catch (const ad::UnsupportedPrimitive& e) {
    CHECK(e.primitive == "relu");
  }
}

TEST_CASE("non-finite intermediate is rejected with the node index") {
  const Program p{param(0, 1), binary("mul", 0, 0), binary("mul", 1, 1)};
  const std::vector<double> theta{1e200};
  try {
    ad::forward_backward(p, theta, {});
    FAIL("expected rejection");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("node 1") != std::string::npos);
  }
}

TEST_CASE("norm and unit power at the origin have zero gradient") {
  const Program p{param(0, 3), unary("pow_abs", 0, 1.0)};
  const std::vector<double> theta{0.0, 0.0, 0.0};
  const auto r = ad::forward_backward(p, theta, {});
  CHECK(r.value == 0.0);
  for (double g : r.grad) CHECK(g == 0.0);

  // Fractional exponent at zero stays finite thanks to the clamp.
  const Program q{param(0, 2), unary("norm", 0), unary("pow_abs", 1, 0.5)};
  const std::vector<double> zero2{0.0, 0.0};
  const auto s = ad::forward_backward(q, zero2, {});
  for (double g : s.grad) CHECK(std::isfinite(g));
}

TEST_CASE("gradient is linear over summed programs") {
  // f = |tanh(A x)|, g = |sigmoid(B x)| sharing parameters through offsets.
  Program f{input(0), affine(0, 6, 2, 3, 0), unary("tanh", 1), unary("norm", 2)};
  Program g{input(0), affine(2, ad::Tape::no_bias, 2, 3, 0), unary("sigmoid", 1), unary("norm", 2)};
  Program both = f;
  const int shift = static_cast<int>(f.size());
  for (auto ins : g) {
    for (auto& a : ins.args) a += shift;
    both.push_back(ins);
  }
  both.push_back(sum_of({shift - 1, static_cast<int>(both.size()) - 1}));

  const auto theta = random_vector(8, 21);
  const std::vector<std::vector<double>> inputs{random_vector(3, 22)};
  const auto rf = ad::forward_backward(f, theta, inputs);
  const auto rg = ad::forward_backward(g, theta, inputs);
  const auto rb = ad::forward_backward(both, theta, inputs);
  CHECK(rb.value == doctest::Approx(rf.value + rg.value).epsilon(1e-14));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    CHECK(rb.grad[i] == doctest::Approx(rf.grad[i] + rg.grad[i]).epsilon(1e-13));
  }
}

TEST_CASE("forward_backward is deterministic and visits each node once") {
  const Program p = two_layer_program();
  const auto theta = random_vector(50, 5);
  const std::vector<std::vector<double>> inputs{random_vector(3, 6)};
  const auto a = ad::forward_backward(p, theta, inputs);
  const auto b = ad::forward_backward(p, theta, inputs);
  CHECK(a.value == b.value);
  CHECK(a.grad == b.grad);

  ad::Tape tape;
  tape.bind(theta);
  ad::Var x = tape.input(inputs[0]);
  ad::Var h = tape.tanh(tape.affine(0, 15, 5, 3, x));
  ad::Var out = tape.norm(tape.tanh(tape.affine(20, 45, 5, 5, h)));
  std::vector<double> grad(theta.size());
  tape.backward(out, grad);
  CHECK(tape.last_sweep_visits() == tape.node_count());
  CHECK(grad == a.grad);
}

TEST_CASE("operands must precede the instruction that uses them") {
  const Program p{param(0, 1), binary("add", 0, 2), param(0, 1)};
  const std::vector<double> theta{1.0};
  CHECK_THROWS_AS(ad::forward_backward(p, theta, {}), std::invalid_argument);
}
