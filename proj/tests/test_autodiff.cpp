#include <doctest.h>

#include <cmath>
#include <random>

#include "metawpf/autodiff.hpp"

using namespace metawpf;
using ad::Shape;
using ad::Tape;
using ad::Var;

namespace {

ParameterVector random_point(std::initializer_list<std::pair<std::size_t, std::size_t>> shapes,
                             std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  ParameterVector p;
  int i = 0;
  for (auto [r, c] : shapes) p.add_segment("p" + std::to_string(i++), r, c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : p.values()) v = d(rng);
  return p;
}

constexpr double kTol = 1e-7;

}  // namespace

TEST_CASE("elementwise ops match central differences") {
  const auto p = random_point({{3, 4}, {3, 4}}, 1);
  const std::vector<std::pair<const char*, ad::ScalarFunction>> cases = {
      {"add", [](Tape&, std::span<const Var> v) { return ad::sum(ad::tanh(v[0] + v[1])); }},
      {"sub", [](Tape&, std::span<const Var> v) { return ad::sum(ad::sigmoid(v[0] - v[1])); }},
      {"mul", [](Tape&, std::span<const Var> v) { return ad::sum(v[0] * v[1] * v[0]); }},
      {"scale", [](Tape&, std::span<const Var> v) { return ad::sum(ad::tanh(2.5 * v[0])); }},
      {"shift", [](Tape&, std::span<const Var> v) { return ad::sum(ad::shift(v[0], 0.3) * v[1]); }},
      {"relu", [](Tape&, std::span<const Var> v) { return ad::sum(ad::relu(v[0]) * v[1]); }},
      {"sum_rows", [](Tape&, std::span<const Var> v) {
         return ad::sum(ad::tanh(ad::sum_rows(v[0] * v[1])));
       }},
      {"broadcast_rows", [](Tape&, std::span<const Var> v) {
         return ad::sum(ad::broadcast_rows(ad::sum_rows(v[0]), 3) * v[1]);
       }},
      {"broadcast", [](Tape&, std::span<const Var> v) {
         return ad::sum(ad::broadcast(ad::sum(v[0]), Shape{3, 4}) * ad::sigmoid(v[1]));
       }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(ad::grad_check(f, p, 1e-6) < kTol);
  }
}

TEST_CASE("matmul gradients for every transpose combination") {
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      CAPTURE(ta);
      CAPTURE(tb);
      // op(A) is 3x5, op(B) is 5x2.
      const auto p = random_point({{ta ? 5u : 3u, ta ? 3u : 5u}, {tb ? 2u : 5u, tb ? 5u : 2u}}, 2);
      const ad::ScalarFunction f = [=](Tape&, std::span<const Var> v) {
        return ad::sum(ad::tanh(ad::matmul(v[0], v[1], ta, tb)));
      };
      CHECK(ad::grad_check(f, p, 1e-6) < kTol);
    }
  }
}

TEST_CASE("closed-form derivatives of the nonlinearities") {
  Tape tape;
  const Var x = tape.leaf({-1.3, 0.0, 0.7}, Shape{1, 3}, true);
  const Var xs[1] = {x};
  const auto gs = tape.grad(ad::sum(ad::sigmoid(x)), xs).grads[0].to_vector();
  const auto gt = tape.grad(ad::sum(ad::tanh(x)), xs).grads[0].to_vector();
  const double in[3] = {-1.3, 0.0, 0.7};
  for (int i = 0; i < 3; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-in[i]));
    CHECK(gs[i] == doctest::Approx(s * (1 - s)).epsilon(1e-15));
    CHECK(gt[i] == doctest::Approx(1 - std::tanh(in[i]) * std::tanh(in[i])).epsilon(1e-15));
  }
}

TEST_CASE("relu has zero derivative at zero, step has none anywhere") {
  Tape tape;
  const Var x = tape.leaf({-1.0, 0.0, 2.0}, Shape{1, 3}, true);
  const Var xs[1] = {x};
  CHECK(tape.grad(ad::sum(ad::relu(x)), xs).grads[0].to_vector() == std::vector<double>{0, 0, 1});
  const Var s = ad::step(x);
  CHECK(s.to_vector() == std::vector<double>{0, 0, 1});
  CHECK_FALSE(s.requires_grad());
  const auto r = tape.grad(ad::sum(s * x), xs);
  CHECK(r.grads[0].to_vector() == std::vector<double>{0, 0, 1});
}

TEST_CASE("shape mismatches name the operation") {
  Tape tape;
  const Var a = tape.constant({1, 2, 3, 4, 5, 6}, Shape{2, 3});
  const Var b = tape.constant({1, 2, 3, 4}, Shape{2, 2});
  try {
    ad::add(a, b);
    FAIL("expected ShapeError");
  } catch (const ad::ShapeError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
    CHECK(std::string(e.what()).find("2x3") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::matmul(a, b), ad::ShapeError);
  CHECK_NOTHROW(ad::matmul(a, b, true, false));
}

TEST_CASE("gradient of a non-scalar output is rejected") {
  Tape tape;
  const Var a = tape.leaf({1, 2}, Shape{1, 2}, true);
  const Var xs[1] = {a};
  CHECK_THROWS(tape.grad(a * a, xs));
  CHECK_THROWS(a.value());
}

TEST_CASE("unused inputs are reported as detached with zero gradient") {
  Tape tape;
  const Var a = tape.leaf({1, 2}, Shape{1, 2}, true);
  const Var b = tape.leaf({3}, Shape{1, 1}, true);
  const Var xs[2] = {a, b};
  const auto r = tape.grad(ad::sum(a * a), xs);
  CHECK(r.detached);
  CHECK(r.grads[1].value() == 0.0);
  CHECK(r.grads[0].to_vector() == std::vector<double>{2, 4});
}

TEST_CASE("create_graph gives differentiable gradients (Hessian-vector products)") {
  // f(x) = sum(x^3) -> grad 3x^2, H v = 6 x v.
  Tape tape;
  const std::vector<double> x0{0.5, -1.2, 2.0};
  const std::vector<double> v0{1.0, 0.25, -0.5};
  const Var x = tape.leaf(x0, Shape{1, 3}, true);
  const Var v = tape.constant(v0, Shape{1, 3});
  const Var xs[1] = {x};
  const auto g = tape.grad(ad::sum(x * x * x), xs, true);
  REQUIRE(g.grads[0].requires_grad());
  const auto hv = tape.grad(ad::sum(g.grads[0] * v), xs).grads[0].to_vector();
  for (int i = 0; i < 3; ++i) CHECK(hv[i] == doctest::Approx(6 * x0[i] * v0[i]));
}

TEST_CASE("Hessian-vector products of a small network match differences of gradients") {
  const auto p = random_point({{4, 3}, {2, 4}}, 9);
  const auto value_and_grad = [](const ParameterVector& at) {
    Tape t;
    auto v = ad::bind(t, at, true);
    const Var x = t.constant({0.3, -0.7, 1.1, 0.2, 0.9, -0.4}, Shape{2, 3});
    const Var h = ad::tanh(ad::matmul(x, v[0], false, true));
    const Var out = ad::sum(ad::sigmoid(ad::matmul(h, v[1], false, true)));
    return ad::gradient(out, v, at);
  };
  ParameterVector dir = p.like();
  std::mt19937_64 rng(4);
  for (auto& d : dir.values()) d = std::uniform_real_distribution<double>(-1, 1)(rng);

  Tape t;
  auto v = ad::bind(t, p, true);
  const Var x = t.constant({0.3, -0.7, 1.1, 0.2, 0.9, -0.4}, Shape{2, 3});
  const Var h = ad::tanh(ad::matmul(x, v[0], false, true));
  const Var out = ad::sum(ad::sigmoid(ad::matmul(h, v[1], false, true)));
  const auto g = t.grad(out, v, true).grads;
  Var gv = t.scalar(0.0);
  for (std::size_t s = 0; s < g.size(); ++s) {
    const auto seg = dir.segment(s);
    const Var d = t.constant({seg.begin(), seg.end()}, g[s].shape());
    gv = gv + ad::sum(g[s] * d);
  }
  const auto hv = ad::gradient(gv, v, p);

  const double eps = 1e-5;
  auto plus = p, minus = p;
  axpy(eps, dir, plus);
  axpy(-eps, dir, minus);
  const auto gp = value_and_grad(plus), gm = value_and_grad(minus);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(hv[i] == doctest::Approx((gp[i] - gm[i]) / (2 * eps)).epsilon(1e-6));
  }
}

TEST_CASE("replay recomputes the recorded values exactly") {
  Tape tape;
  const Var a = tape.leaf({0.1, 0.2, 0.3, 0.4}, Shape{2, 2}, true);
  const Var b = tape.constant({1.5, -2.0, 0.5, 1.0}, Shape{2, 2});
  ad::sum(ad::relu(ad::matmul(a, b, true, false)) + ad::tanh(a));
  const auto again = tape.replay();
  CHECK(std::equal(again.begin(), again.end(), tape.recorded().begin(), tape.recorded().end()));
  CHECK(tape.all_finite());
}

TEST_CASE("grad_check flags NaN evaluations") {
  const auto p = random_point({{1, 2}}, 3);
  const ad::ScalarFunction f = [](Tape& t, std::span<const Var> v) {
    return ad::sum(v[0] * t.constant({std::nan(""), 1.0}, Shape{1, 2}));
  };
  CHECK_THROWS_AS(ad::grad_check(f, p, 1e-6), std::domain_error);
}

TEST_CASE("gather round-trips bound segments") {
  const auto p = random_point({{2, 3}, {1, 5}}, 8);
  Tape t;
  const auto v = ad::bind(t, p, false);
  CHECK(ad::gather(v, p) == p);
  CHECK(ad::evaluate([](Tape&, std::span<const Var> s) { return ad::sum(s[1]); }, p) ==
        doctest::Approx(p[6] + p[7] + p[8] + p[9] + p[10]));
}
