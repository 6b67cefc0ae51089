#include <doctest.h>

#include <cmath>
#include <random>

#include "scenescore/sampler.hpp"

using namespace scenescore;

namespace {

// E = |p - mu|^2 / (2 s^2) over (x, y); theta is free.
CostFn quadratic(double mx, double my, double s) {
  return [=](std::span<const Pose> p, std::span<PoseGradient> g) {
    double e = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double dx = p[i].x - mx, dy = p[i].y - my;
      e += (dx * dx + dy * dy) / (2 * s * s);
      g[i] = {dx / (s * s), dy / (s * s), 0.0};
    }
    return e;
  };
}

std::vector<SceneObject> objects(std::size_t n) {
  std::vector<SceneObject> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({"o" + std::to_string(i), "c", {3.0 * i, -2.0 * i, 0.1 * i}, {2, 3},
                   {0.1, 0.2, 0.3}, true, false, 1});
  return out;
}

EnergyConfig tiny() {
  EnergyConfig c;
  c.num_gnn_layers = 2;
  c.hidden = 6;
  c.semantic_dim = 3;
  return c;
}

}  // namespace

TEST_CASE("annealed schedule") {
  const auto c = LangevinConfig::annealed(200, 4);
  REQUIRE(c.steps() == 200);
  CHECK(c.step_sizes.front() == doctest::Approx(2e-2));
  CHECK(c.step_sizes.back() == doctest::Approx(2e-4));
  CHECK(c.noise_scales.front() == doctest::Approx(std::sqrt(2 * 2e-2)));
  CHECK(c.noise_scales.back() == doctest::Approx(0.1 * std::sqrt(2 * 2e-4)));
  for (std::size_t t = 1; t < c.steps(); ++t) CHECK(c.step_sizes[t] < c.step_sizes[t - 1]);
  CHECK_THROWS_AS(LangevinConfig::annealed(0), InvalidArgument);
  CHECK_THROWS_AS(LangevinConfig::constant(5, -1.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(LangevinConfig::constant(5, 1.0, -1.0), InvalidArgument);
}

TEST_CASE("quadratic energy: stationary mean and variance") {
  // Normalised coordinates z = x / R with R = 50 and no clipping. Per-step
  // contraction a = lambda R^2 / s^2 = 0.01, so the discrete-time stationary
  // variance 2 s^2 / (2 - a) is within 0.5% of s^2 when sigma = sqrt(2 lambda).
  const double mx = 12.0, my = -7.0, s = 5.0, R = 50.0, lambda = 1e-4;
  auto cfg = LangevinConfig::constant(1500, lambda, std::sqrt(2.0 * lambda), 99);
  cfg.clip_norm = 0.0;
  const auto energy = quadratic(mx, my, s);
  const std::vector<Pose> start(1);
  const FixedMask free(1, false);
  const std::size_t chains = 2000;
  double sx = 0, sy = 0, sxx = 0, syy = 0;
  for (std::size_t c = 0; c < chains; ++c) {
    const auto r = langevin_chain(energy, start, free, cfg, {}, R, c);
    sx += r.poses[0].x;
    sy += r.poses[0].y;
    sxx += r.poses[0].x * r.poses[0].x;
    syy += r.poses[0].y * r.poses[0].y;
  }
  const double n = static_cast<double>(chains);
  const double ex = sx / n, ey = sy / n;
  const double var = ((sxx - n * ex * ex) + (syy - n * ey * ey)) / (2 * (n - 1));
  CHECK(std::abs(ex - mx) < 0.05 * std::abs(mx));
  CHECK(std::abs(ey - my) < 0.05 * std::abs(my));
  CHECK(std::abs(var - s * s) < 0.05 * s * s);
}

TEST_CASE("noise-free descent never increases a quadratic energy") {
  auto cfg = LangevinConfig::constant(300, 1e-3, 0.0, 1);
  const auto energy = quadratic(4.0, 9.0, 6.0);
  const std::vector<Pose> start(3);
  const auto r = langevin_chain(energy, start, FixedMask(3, false), cfg, {}, 50.0, 0);
  for (std::size_t t = 1; t < r.energy_trace.size(); ++t)
    CHECK(r.energy_trace[t] <= r.energy_trace[t - 1]);
  CHECK(r.final_energy <= r.energy_trace.back());
}

TEST_CASE("zero model without noise returns the initialisation") {
  EnergyModel m(tiny(), Variant::Relative, 3, 40.0, 1);
  m.set_zero();
  const SceneGraph g = build_graph(objects(3));
  auto cfg = LangevinConfig::constant(25, 1e-2, 0.0, 77);
  const auto r = langevin_sample(m, g, cfg, {}, {}, 5);
  // Independent replay of the initialisation draw.
  std::mt19937_64 rng(chain_seed(77, 5));
  std::uniform_real_distribution<double> upos(-40.0, 40.0), uang(-kPi, kPi);
  for (std::size_t i = 0; i < 3; ++i) {
    const double x = upos(rng), y = upos(rng), th = wrap_angle(uang(rng));
    CHECK(r.poses[i] == Pose{x, y, th});
  }
  for (double e : r.energy_trace) CHECK(e == 0.0);
}

TEST_CASE("frozen poses are untouched and immovable nodes are frozen") {
  EnergyModel m(tiny(), Variant::Relative, 3, 40.0, 2);
  auto objs = objects(4);
  objs[2].movable = false;
  const SceneGraph g = build_graph(objs);
  const std::string frozen_ids[] = {"o0"};
  const FixedMask mask = mask_from_ids(g, frozen_ids);
  const auto r = langevin_sample(m, g, LangevinConfig::annealed(50, 3), mask);
  CHECK(r.poses[0] == objs[0].pose);
  CHECK(r.poses[2] == objs[2].pose);
  CHECK(r.poses[1] != objs[1].pose);
  CHECK(r.poses[3] != objs[3].pose);

  const std::string unknown[] = {"nope"};
  CHECK_THROWS_AS(mask_from_ids(g, unknown), NotFoundError);
  CHECK_THROWS_AS(langevin_sample(m, g, LangevinConfig::annealed(5), FixedMask(4, true)),
                  InvalidArgument);
  CHECK_THROWS_AS(langevin_sample(m, g, LangevinConfig::annealed(5), FixedMask(2, false)),
                  DimensionError);
}

TEST_CASE("determinism and independent chains") {
  EnergyModel m(tiny(), Variant::Relative, 3, 40.0, 3);
  const SceneGraph g = build_graph(objects(3));
  const auto cfg = LangevinConfig::annealed(40, 8);
  const auto a = langevin_sample(m, g, cfg, {}, {}, 0);
  const auto b = langevin_sample(m, g, cfg, {}, {}, 0);
  const auto c = langevin_sample(m, g, cfg, {}, {}, 1);
  CHECK(a.poses == b.poses);
  CHECK(a.energy_trace == b.energy_trace);
  CHECK(a.poses != c.poses);
  CHECK(chain_seed(8, 0) != chain_seed(8, 1));
  CHECK(chain_seed(8, 0) != chain_seed(9, 0));
}

TEST_CASE("non-finite gradient aborts with the step index") {
  int calls = 0;
  const CostFn bad = [&](std::span<const Pose> p, std::span<PoseGradient> g) {
    for (auto& gi : g) gi = {calls >= 3 ? NAN : 0.0, 0.0, 0.0};
    ++calls;
    return static_cast<double>(p.size());
  };
  const std::vector<Pose> start(1);
  try {
    langevin_chain(bad, start, FixedMask(1, false), LangevinConfig::constant(10, 1e-2, 0.0), {},
                   10.0, 0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 3") != std::string::npos);
  }
}

TEST_CASE("compose") {
  const std::vector<Pose> p{{1.0, 2.0, 0.3}, {-4.0, 0.5, -1.0}};
  std::vector<PoseGradient> g(2), h(2);
  const CostTerm q1{quadratic(1.0, -1.0, 2.0), 1.0};
  const CostTerm q2{quadratic(-3.0, 2.0, 0.5), 1.0};

  SUBCASE("single term with weight 1") {
    const CostTerm c = compose({q1});
    CHECK(c.fn(p, g) == q1.fn(p, h));
    CHECK(g == h);
  }
  SUBCASE("cancellation") {
    const CostTerm c = compose({q1, {q1.fn, -1.0}});
    CHECK(c.fn(p, g) == 0.0);
    for (const auto& gi : g) CHECK(gi == PoseGradient{0, 0, 0});
  }
  SUBCASE("two quadratics: analytic sum") {
    const CostTerm c = compose({{q1.fn, 2.0}, {q2.fn, 0.5}});
    const double v = c.fn(p, g);
    double expect = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const double ax = p[i].x - 1.0, ay = p[i].y + 1.0, bx = p[i].x + 3.0, by = p[i].y - 2.0;
      expect += 2.0 * (ax * ax + ay * ay) / 8.0 + 0.5 * (bx * bx + by * by) / 0.5;
      CHECK(g[i][0] == doctest::Approx(2.0 * ax / 4.0 + 0.5 * bx / 0.25));
      CHECK(g[i][1] == doctest::Approx(2.0 * ay / 4.0 + 0.5 * by / 0.25));
      CHECK(g[i][2] == 0.0);
    }
    CHECK(v == doctest::Approx(expect));
  }
}

TEST_CASE("extra cost terms steer the chain") {
  // Zero energy plus a quadratic pull: noise-free descent ends near the target.
  const CostFn zero = [](std::span<const Pose> p, std::span<PoseGradient> g) {
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = {0, 0, 0};
    return 0.0;
  };
  const CostTerm pull{quadratic(10.0, -10.0, 1.0), 1.0};
  const std::vector<Pose> start(1);
  auto cfg = LangevinConfig::constant(400, 5e-3, 0.0, 2);
  const auto r = langevin_chain(zero, start, FixedMask(1, false), cfg,
                                std::span<const CostTerm>(&pull, 1), 50.0, 0);
  CHECK(std::hypot(r.poses[0].x - 10.0, r.poses[0].y + 10.0) < 0.5);
  CHECK(r.final_energy == 0.0);
  CHECK(r.final_total >= r.final_energy);
}
