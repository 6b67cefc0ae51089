#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <random>

#include "scenescore/diff.hpp"

using namespace scenescore;
using namespace scenescore::diff;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& e : v) e = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Contracts any rank-1/2 node against fixed random weights to a scalar root.
NodeRef reduce(Tape& t, NodeRef x, const Shape& shape, std::mt19937_64& rng) {
  NodeRef y = t.mul(x, t.constant(random_tensor(shape, rng)));
  if (shape.size() == 2) y = t.sum_rows(y);
  return t.sum_rows(y);
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double e : v) s += e * e;
  return std::sqrt(s);
}

// ||analytic - central FD|| / max(||FD||, 1e-8) over every target.
double fd_relative_error(const Tape& tape, std::vector<Tensor> values,
                         const std::vector<NodeRef>& leaves) {
  auto bind_all = [&](Bindings& b) {
    for (std::size_t i = 0; i < leaves.size(); ++i) b.bind(leaves[i], values[i]);
  };
  Bindings b(tape);
  bind_all(b);
  const auto grads = gradient(tape, b, leaves);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    std::vector<double> fd(values[i].size()), diff(values[i].size());
    for (std::size_t k = 0; k < values[i].size(); ++k) {
      const double saved = values[i][k];
      values[i][k] = saved + h;
      const double up = evaluate(tape, b)[0];
      values[i][k] = saved - h;
      const double dn = evaluate(tape, b)[0];
      values[i][k] = saved;
      fd[k] = (up - dn) / (2 * h);
      diff[k] = grads[i][k] - fd[k];
    }
    worst = std::max(worst, norm(diff) / std::max(norm(fd), 1e-8));
  }
  return worst;
}

}  // namespace

TEST_CASE("evaluate: passthrough, leaky relu and add pooling") {
  {
    Tape t;
    auto x = t.leaf("x");
    Tensor v = Tensor::vector({3.0});
    Bindings b(t);
    b.bind(x, v);
    CHECK(evaluate(t, b) == Tensor::vector({3.0}));
  }
  {
    Tape t;
    auto x = t.leaf("x");
    t.leaky_relu(x, 0.01);
    Tensor v = Tensor::vector({-2.0});
    Bindings b(t);
    b.bind(x, v);
    CHECK(evaluate(t, b)[0] == doctest::Approx(-0.02).epsilon(1e-15));
  }
  {
    Tape t;
    auto x = t.leaf("x");
    t.sum_rows(x);
    Tensor v = Tensor::matrix({{1, 2}, {3, 4}});
    Bindings b(t);
    b.bind(x, v);
    CHECK(evaluate(t, b) == Tensor::vector({4.0, 6.0}));
  }
}

TEST_CASE("gradient: constant root and sum of squares") {
  {
    Tape t;
    auto x = t.leaf("x");
    auto c = t.constant(Tensor::scalar(5.0));
    t.add(c, t.scale(t.sum_rows(x), 0.0));
    Tensor v = Tensor::vector({1.0, 2.0});
    Bindings b(t);
    b.bind(x, v);
    std::vector<NodeRef> targets{x};
    CHECK(gradient(t, b, targets)[0] == Tensor::vector({0.0, 0.0}));
  }
  {
    Tape t;
    auto x = t.leaf("x");
    t.sum_rows(t.mul(x, x));
    Tensor v = Tensor::vector({1.0, 2.0});
    Bindings b(t);
    b.bind(x, v);
    std::vector<NodeRef> targets{x};
    CHECK(gradient(t, b, targets)[0] == Tensor::vector({2.0, 4.0}));
    CHECK(v == Tensor::vector({1.0, 2.0}));
  }
}

TEST_CASE("every primitive matches central finite differences") {
  std::mt19937_64 rng(11);
  using Builder = std::function<NodeRef(Tape&, std::vector<NodeRef>&, std::vector<Tensor>&)>;
  auto leaf = [&](Tape& t, std::vector<NodeRef>& ls, std::vector<Tensor>& vs, Shape s) {
    ls.push_back(t.leaf("l" + std::to_string(ls.size())));
    vs.push_back(random_tensor(s, rng));
    return ls.back();
  };
  struct Case {
    const char* name;
    Builder build;
    Shape out;
  };
  const std::vector<Case> cases = {
      {"matmul", [&](Tape& t, auto& ls, auto& vs) {
         auto a = leaf(t, ls, vs, {3, 4});
         auto b = leaf(t, ls, vs, {4, 2});
         return t.matmul(a, b);
       }, {3, 2}},
      {"matmul vector lhs", [&](Tape& t, auto& ls, auto& vs) {
         auto a = leaf(t, ls, vs, {4});
         auto b = leaf(t, ls, vs, {4, 3});
         return t.matmul(a, b);
       }, {3}},
      {"matmul vector rhs", [&](Tape& t, auto& ls, auto& vs) {
         auto a = leaf(t, ls, vs, {2, 4});
         auto b = leaf(t, ls, vs, {4});
         return t.matmul(a, b);
       }, {2}},
      {"bias_add", [&](Tape& t, auto& ls, auto& vs) {
         auto x = leaf(t, ls, vs, {3, 2});
         auto b = leaf(t, ls, vs, {2});
         return t.bias_add(x, b);
       }, {3, 2}},
      {"add", [&](Tape& t, auto& ls, auto& vs) {
         return t.add(leaf(t, ls, vs, {2, 3}), leaf(t, ls, vs, {2, 3}));
       }, {2, 3}},
      {"sub", [&](Tape& t, auto& ls, auto& vs) {
         return t.sub(leaf(t, ls, vs, {5}), leaf(t, ls, vs, {5}));
       }, {5}},
      {"mul", [&](Tape& t, auto& ls, auto& vs) {
         return t.mul(leaf(t, ls, vs, {2, 3}), leaf(t, ls, vs, {2, 3}));
       }, {2, 3}},
      {"scale", [&](Tape& t, auto& ls, auto& vs) { return t.scale(leaf(t, ls, vs, {4}), -1.7); },
       {4}},
      {"leaky_relu", [&](Tape& t, auto& ls, auto& vs) {
         return t.leaky_relu(leaf(t, ls, vs, {3, 3}), 0.01);
       }, {3, 3}},
      {"concat rows", [&](Tape& t, auto& ls, auto& vs) {
         return t.concat({leaf(t, ls, vs, {2, 1}), leaf(t, ls, vs, {2, 3})});
       }, {2, 4}},
      {"concat vectors", [&](Tape& t, auto& ls, auto& vs) {
         return t.concat({leaf(t, ls, vs, {2}), leaf(t, ls, vs, {3})});
       }, {5}},
      {"sum_rows", [&](Tape& t, auto& ls, auto& vs) { return t.sum_rows(leaf(t, ls, vs, {4, 3})); },
       {3}},
      {"sum_sets", [&](Tape& t, auto& ls, auto& vs) {
         return t.sum_sets(leaf(t, ls, vs, {4, 2}), {{1, 2, 3}, {0}, {}, {0, 3}});
       }, {4, 2}},
      {"log_sum_exp", [&](Tape& t, auto& ls, auto& vs) {
         return t.log_sum_exp(leaf(t, ls, vs, {2, 3}));
       }, {1}},
      {"neg", [&](Tape& t, auto& ls, auto& vs) { return t.neg(leaf(t, ls, vs, {3})); }, {3}},
      {"sin", [&](Tape& t, auto& ls, auto& vs) { return t.sin(leaf(t, ls, vs, {1})); }, {1}},
      {"cos", [&](Tape& t, auto& ls, auto& vs) { return t.cos(leaf(t, ls, vs, {1})); }, {1}},
  };
  for (const auto& c : cases) {
    for (int rep = 0; rep < 5; ++rep) {
      Tape t;
      std::vector<NodeRef> leaves;
      std::vector<Tensor> values;
      NodeRef out = c.build(t, leaves, values);
      reduce(t, out, c.out, rng);
      // Keep LeakyReLU inputs away from the kink.
      if (std::string(c.name) == "leaky_relu")
        for (double& e : values[0].data())
          if (std::abs(e) < 1e-3) e = 0.5;
      INFO(c.name);
      CHECK(fd_relative_error(t, values, leaves) < 1e-4);
    }
  }
}

TEST_CASE("random composite tapes match finite differences") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    Tape t;
    auto x = t.leaf("x");
    auto w = t.leaf("w");
    auto b = t.leaf("b");
    auto h = t.leaky_relu(t.bias_add(t.matmul(x, w), b), 0.2);
    auto s = t.sum_sets(h, {{0, 1}, {1, 2}, {0, 2}});
    auto z = t.concat({s, t.scale(h, 0.5)});
    auto y = t.log_sum_exp(t.sub(z, t.mul(z, z)));
    (void)y;
    std::vector<Tensor> values{random_tensor({3, 2}, rng), random_tensor({2, 4}, rng),
                               random_tensor({4}, rng)};
    CHECK(fd_relative_error(t, values, {x, w, b}) < 1e-4);
  }
}

TEST_CASE("errors and determinism") {
  SUBCASE("shape mismatch names the op index") {
    Tape t;
    auto a = t.leaf("a");
    auto b = t.leaf("b");
    t.add(a, b);
    Tensor va = Tensor::vector({1, 2}), vb = Tensor::vector({1, 2, 3});
    Bindings bind(t);
    bind.bind(a, va).bind(b, vb);
    try {
      evaluate(t, bind);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(e.op_index() == 2);
    }
  }
  SUBCASE("non-finite intermediate") {
    Tape t;
    auto a = t.leaf("a");
    t.mul(a, a);
    Tensor va = Tensor::vector({1e200});
    Bindings bind(t);
    bind.bind(a, va);
    CHECK_THROWS_AS(evaluate(t, bind), NumericError);
  }
  SUBCASE("unbound leaf") {
    Tape t;
    t.neg(t.leaf("a"));
    Bindings bind(t);
    CHECK_THROWS_AS(evaluate(t, bind), InvalidArgument);
  }
  SUBCASE("gradient target must be a leaf") {
    Tape t;
    auto a = t.leaf("a");
    auto n = t.sum_rows(a);
    Tensor va = Tensor::vector({1, 2});
    Bindings bind(t);
    bind.bind(a, va);
    std::vector<NodeRef> targets{n};
    CHECK_THROWS_AS(gradient(t, bind, targets), InvalidArgument);
  }
  SUBCASE("re-evaluation is bit identical") {
    std::mt19937_64 rng(3);
    Tape t;
    auto a = t.leaf("a");
    auto w = t.leaf("w");
    t.log_sum_exp(t.leaky_relu(t.matmul(a, w), 0.01));
    Tensor va = random_tensor({3, 5}, rng), vw = random_tensor({5, 2}, rng);
    Bindings bind(t);
    bind.bind(a, va).bind(w, vw);
    const Tensor first = evaluate(t, bind);
    const Tensor second = evaluate(t, bind);
    CHECK(std::memcmp(first.data().data(), second.data().data(), sizeof(double)) == 0);
    std::vector<NodeRef> targets{a, w};
    CHECK(gradient(t, bind, targets) == gradient(t, bind, targets));
  }
  SUBCASE("sum_sets does not depend on set order") {
    Tape t1, t2;
    auto a1 = t1.leaf("a");
    t1.sum_sets(a1, {{0, 1, 2}});
    auto a2 = t2.leaf("a");
    t2.sum_sets(a2, {{2, 0, 1}});
    Tensor v = Tensor::vector({0.1, 1e16, -1e16});
    Bindings b1(t1), b2(t2);
    b1.bind(a1, v);
    b2.bind(a2, v);
    CHECK(evaluate(t1, b1) == evaluate(t2, b2));
  }
}
