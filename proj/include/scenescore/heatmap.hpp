#pragma once

// Energy over a grid of positions of one object, all other poses fixed.

#include <filesystem>
#include <string>
#include <vector>

#include "scenescore/energy.hpp"

namespace scenescore {

struct Heatmap {
  std::string object_id;
  std::size_t grid_n = 0;
  std::vector<double> xs;      // grid_n column positions, cm
  std::vector<double> ys;      // grid_n row positions, cm
  std::vector<double> energy;  // row-major: energy[row * grid_n + col] at (xs[col], ys[row])

  double at(std::size_t row, std::size_t col) const { return energy[row * grid_n + col]; }
  // Grid position of the lowest energy (first in row-major order on ties).
  Pose argmin() const;
};

// Grid over [-R, R]^2 (R the model's workspace half extent); grid_n = 1
// evaluates the object's current position only. The object keeps its
// current orientation.
Heatmap energy_heatmap(const EnergyModel& model, const Scene& scene, const std::string& object_id,
                       std::size_t grid_n);

// CSV "x,y,energy", one row per cell, after an optional "# ..." line.
void write_heatmap_csv(const std::filesystem::path& path, const Heatmap& h, const std::string& header_comment = "");
// Plain PGM (P2), lowest energy white, highest black; the top image row is
// the largest y.
std::string heatmap_pgm(const Heatmap& h);
void write_heatmap_pgm(const std::filesystem::path& path, const Heatmap& h);

}  // namespace scenescore
