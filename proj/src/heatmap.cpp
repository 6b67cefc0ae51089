#include "scenescore/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "scenescore/evalharness.hpp"

namespace scenescore {

Pose Heatmap::argmin() const {
  if (energy.empty()) throw InvalidArgument("empty heatmap");
  const auto k = static_cast<std::size_t>(std::min_element(energy.begin(), energy.end()) - energy.begin());
  return {xs[k % grid_n], ys[k / grid_n], 0.0};
}

Heatmap energy_heatmap(const EnergyModel& model, const Scene& scene, const std::string& object_id,
                       std::size_t grid_n) {
  if (grid_n < 1) throw InvalidArgument("grid size must be >= 1");
  const SceneGraph graph = build_graph(scene);
  std::size_t node = graph.size();
  for (std::size_t i = 0; i < graph.size(); ++i)
    if (graph.nodes()[i].id == object_id) node = i;
  if (node == graph.size()) throw NotFoundError("object '" + object_id + "' is not a graph node");

  Heatmap h;
  h.object_id = object_id;
  h.grid_n = grid_n;
  const double r = model.workspace_half_extent();
  auto poses = graph.poses();
  if (grid_n == 1) {
    h.xs = {poses[node].x};
    h.ys = {poses[node].y};
  } else {
    for (std::size_t k = 0; k < grid_n; ++k) {
      const double v = -r + 2.0 * r * static_cast<double>(k) / static_cast<double>(grid_n - 1);
      h.xs.push_back(v);
      h.ys.push_back(v);
    }
  }
  const EnergyFunction f(model, graph);
  h.energy.reserve(grid_n * grid_n);
  for (std::size_t row = 0; row < grid_n; ++row)
    for (std::size_t col = 0; col < grid_n; ++col) {
      poses[node].x = h.xs[col];
      poses[node].y = h.ys[row];
      h.energy.push_back(f.value(poses));
    }
  return h;
}

void write_heatmap_csv(const std::filesystem::path& path, const Heatmap& h, const std::string& header_comment) {
  std::string s = (header_comment.empty() ? "" : "# " + header_comment + "\n") + "x,y,energy\n";
  for (std::size_t row = 0; row < h.grid_n; ++row)
    for (std::size_t col = 0; col < h.grid_n; ++col)
      s += format_double(h.xs[col]) + "," + format_double(h.ys[row]) + "," + format_double(h.at(row, col)) + "\n";
  write_text(path, s);
}

std::string heatmap_pgm(const Heatmap& h) {
  const auto [lo, hi] = std::minmax_element(h.energy.begin(), h.energy.end());
  const double span = *hi - *lo;
  std::string s = "P2\n" + std::to_string(h.grid_n) + " " + std::to_string(h.grid_n) + "\n255\n";
  for (std::size_t r = 0; r < h.grid_n; ++r) {
    const std::size_t row = h.grid_n - 1 - r;
    for (std::size_t col = 0; col < h.grid_n; ++col) {
      const int level =
          span > 0.0 ? static_cast<int>(std::lround(255.0 * (*hi - h.at(row, col)) / span)) : 255;
      s += std::to_string(level) + (col + 1 == h.grid_n ? "\n" : " ");
    }
  }
  return s;
}

void write_heatmap_pgm(const std::filesystem::path& path, const Heatmap& h) { write_text(path, heatmap_pgm(h)); }

}  // namespace scenescore
