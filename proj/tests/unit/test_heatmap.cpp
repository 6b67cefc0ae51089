#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "scenescore/heatmap.hpp"
#include "scenescore/synthgen.hpp"

using namespace scenescore;

namespace {

EnergyConfig tiny() {
  EnergyConfig c;
  c.num_gnn_layers = 2;
  c.hidden = 5;
  c.semantic_dim = 3;
  return c;
}

Scene dining_scene() {
  auto spec = ScenarioSpec::defaults(ScenarioKind::Dining);
  spec.train_n = 1;
  spec.test_n = 1;
  return gen_dining(spec, 2).scenes.front();
}

}  // namespace

TEST_CASE("single-cell heatmap equals the energy at the current pose") {
  const Scene s = dining_scene();
  for (Variant v : {Variant::Relative, Variant::Absolute}) {
    const EnergyModel m(tiny(), v, kFeatureDim, 50.0, 8);
    const double e = energy(m, build_graph(s));
    for (const auto& o : s.objects) {
      if (!o.in_graph()) continue;
      const Heatmap h = energy_heatmap(m, s, o.id, 1);
      REQUIRE(h.energy.size() == 1);
      CHECK(std::abs(h.at(0, 0) - e) <= 1e-12);
      CHECK(h.xs[0] == o.pose.x);
      CHECK(h.ys[0] == o.pose.y);
    }
  }
}

TEST_CASE("heatmap grid layout and cell values") {
  const Scene s = dining_scene();
  const EnergyModel m(tiny(), Variant::Relative, kFeatureDim, 50.0, 3);
  const std::string id = s.objects[1].id;
  const Heatmap h = energy_heatmap(m, s, id, 5);
  REQUIRE(h.energy.size() == 25);
  CHECK(h.xs.front() == -50.0);
  CHECK(h.xs.back() == 50.0);
  CHECK(h.xs[2] == 0.0);
  // Independent evaluation of one cell.
  const SceneGraph g = build_graph(s);
  auto poses = g.poses();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.nodes()[i].id == id) poses[i] = {h.xs[3], h.ys[1], poses[i].theta};
  CHECK(h.at(1, 3) == energy(m, g.with_poses(poses)));
  const Pose best = h.argmin();
  double lo = h.energy[0];
  for (double e : h.energy) lo = std::min(lo, e);
  bool found = false;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c)
      if (h.at(r, c) == lo && !found) {
        found = true;
        CHECK(best.x == h.xs[c]);
        CHECK(best.y == h.ys[r]);
      }
}

TEST_CASE("zero model gives a flat heatmap") {
  const Scene s = dining_scene();
  EnergyModel m(tiny(), Variant::Relative, kFeatureDim, 50.0, 3);
  m.set_zero();
  const Heatmap h = energy_heatmap(m, s, s.objects[0].id, 4);
  for (double e : h.energy) CHECK(e == h.energy[0]);
  const std::string pgm = heatmap_pgm(h);
  CHECK(pgm == "P2\n4 4\n255\n255 255 255 255\n255 255 255 255\n255 255 255 255\n255 255 255 255\n");
}

TEST_CASE("heatmap pgm puts the largest y on top and the minimum in white") {
  Heatmap h;
  h.grid_n = 2;
  h.xs = {0, 1};
  h.ys = {0, 1};
  h.energy = {0.0, 1.0, 2.0, 4.0};  // rows y = 0 then y = 1
  CHECK(heatmap_pgm(h) == "P2\n2 2\n255\n128 0\n255 191\n");
}

TEST_CASE("heatmap errors and csv") {
  const Scene s = dining_scene();
  const EnergyModel m(tiny(), Variant::Relative, kFeatureDim, 50.0, 3);
  CHECK_THROWS_AS(energy_heatmap(m, s, "nope", 3), NotFoundError);
  CHECK_THROWS_AS(energy_heatmap(m, s, s.objects[0].id, 0), InvalidArgument);

  Heatmap h;
  h.grid_n = 2;
  h.xs = {-1, 1};
  h.ys = {-2, 2};
  h.energy = {0.5, 1.5, 2.5, 3.5};
  const auto path = std::filesystem::temp_directory_path() / "scenescore_unit" / "heat.csv";
  std::filesystem::create_directories(path.parent_path());
  write_heatmap_csv(path, h);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "x,y,energy\n-1,-2,0.5\n1,-2,1.5\n-1,2,2.5\n1,2,3.5\n");
}
