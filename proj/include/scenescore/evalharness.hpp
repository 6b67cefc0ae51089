#pragma once

// Experiment drivers and metrics: placing a missing object, ordering novel
// objects, and sampling under collision constraints.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenescore/constraints.hpp"
#include "scenescore/energy.hpp"
#include "scenescore/sampler.hpp"
#include "scenescore/synthgen.hpp"

namespace scenescore {

// Minimum-cost assignment of every row to a distinct column (rows <= cols).
// Returns the column of each row.
std::vector<std::size_t> min_cost_assignment(const std::vector<std::vector<double>>& cost);

double translation_error(const Pose& a, const Pose& b);
// Angle difference in degrees, reduced modulo 360 / symmetry_order; empty for
// continuous symmetry (order 0). Result lies in [0, 180 / order].
std::optional<double> angle_error_deg(double a, double b, int symmetry_order);

struct PoseError {
  double t_cm = 0.0;
  std::optional<double> r_deg;
};

// Error against the closest mode (by translation); the angle is measured
// against that same mode.
PoseError error_to_modes(const Pose& predicted, std::span<const Pose> modes, int symmetry_order);

// Distance between two poses used by the nearest-neighbour baseline:
// Euclidean (x, y) plus half_extent times the chord between headings.
double nn_pose_distance(const Pose& a, const Pose& b, double half_extent);

// Pose of `missing_id` taken from the training scene whose objects best match
// the placed objects of `test_scene`.
Pose nearest_neighbor_predict(std::span<const Scene> train_scenes, const Scene& test_scene,
                              const std::string& missing_id, double half_extent);

struct MissingRecord {
  std::string scene_id;
  std::string object_id;
  std::string class_name;
  std::string method;
  Pose predicted;
  PoseError error;
};

struct ClassSummary {
  std::string method;
  std::string class_name;  // "mean" aggregates every class
  std::size_t count = 0;
  double t_mean = 0.0, t_sd = 0.0;
  std::optional<double> r_mean, r_sd;
};

struct MissingObjectResult {
  std::vector<MissingRecord> records;

  std::vector<ClassSummary> summary() const;
  // Mean translation error of one method over all of its records.
  double mean_translation(const std::string& method) const;
};

struct MissingConfig {
  std::vector<std::string> classes{"bowl", "fork", "knife"};
  std::size_t restarts = 16;
  LangevinConfig sampler = LangevinConfig::annealed(200);
  std::size_t random_samples = 64;  // Monte-Carlo draws per object for the random baseline
  std::uint64_t seed = 0;
};

// Langevin placement of every held-out object of every test scene, keeping
// the lowest-energy chain out of `restarts`.
MissingObjectResult eval_missing(const EnergyModel& model, const std::string& method,
                                 std::span<const Scene> test_scenes, const GroundTruth& gt,
                                 const MissingConfig& config);
// Nearest-Nbr and uniform random placement on the same objects.
MissingObjectResult eval_missing_baselines(std::span<const Scene> train_scenes,
                                           std::span<const Scene> test_scenes, const GroundTruth& gt,
                                           const MissingConfig& config);

struct OrderingRecord {
  std::string scene_id;
  std::vector<std::string> predicted_order;
  std::vector<std::string> true_order;
  bool correct = false;
  double position_error_cm = 0.0;
};

struct OrderingResult {
  std::vector<OrderingRecord> records;
  double fraction_correct() const;
  double mean_error() const;
  double sd_error() const;
};

// Object ids in the order they appear along the row axis: the local x axis
// of the circular-mean heading of the graph objects.
std::vector<std::string> row_order(const SceneGraph& graph, std::span<const Pose> poses);

// Mean distance between corresponding positions after the best rigid
// alignment (rotation and translation) of `predicted` onto `reference`.
double aligned_position_error(std::span<const Pose> predicted, std::span<const Pose> reference);

struct OrderingConfig {
  std::size_t restarts = 8;
  LangevinConfig sampler = LangevinConfig::annealed(200);
  std::uint64_t seed = 0;
};

OrderingResult eval_ordering(const EnergyModel& model, std::span<const Scene> test_scenes,
                             const GroundTruth& gt, const OrderingConfig& config);

struct CompositionConfig {
  std::size_t budget = 500;  // samples per method and clutter level
  double alignment_threshold_cm = 2.0;
  double symmetry_threshold_cm = 2.0;
  double collision_weight = kCollisionWeight;
  double collision_margin_cm = kCollisionMargin;
  LangevinConfig sampler = LangevinConfig::annealed(200);
  std::uint64_t seed = 0;
};

// Alignment in the television's frame: every centre within the alignment
// threshold in local y, speakers on opposite sides at local x distances that
// differ by at most the symmetry threshold.
bool tv_arrangement_aligned(const SceneGraph& graph, std::span<const Pose> poses,
                            const CompositionConfig& config);
bool tv_sample_correct(const Scene& scene, const SceneGraph& graph, std::span<const Pose> poses,
                       const CompositionConfig& config);

struct CompositionLevel {
  std::size_t clutter = 0;
  std::size_t budget = 0;
  std::size_t implicit_drawn = 0;
  std::size_t rejection_drawn = 0;
  std::size_t implicit_correct = 0;
  std::size_t rejection_correct = 0;
  // implicit / rejection; +inf when only the implicit method succeeds, nan
  // when neither does.
  double ratio() const;
};

struct CompositionResult {
  std::vector<CompositionLevel> levels;  // ascending clutter
};

std::size_t clutter_count(const Scene& scene);

CompositionResult eval_composition(const EnergyModel& model, std::span<const Scene> test_scenes,
                                   const CompositionConfig& config);

// Output files. A non-empty header comment becomes a leading "# ..." line.
void write_missing_csv(const std::filesystem::path& path, const MissingObjectResult& r,
                       const std::string& header_comment = "");
// One row per (method, class) with mean and sd of both errors.
void write_missing_table_csv(const std::filesystem::path& path, const MissingObjectResult& r,
                             const std::string& header_comment = "");
nlohmann::json missing_summary_json(const MissingObjectResult& r);
void write_ordering_csv(const std::filesystem::path& path, const OrderingResult& r,
                        const std::string& header_comment = "");
nlohmann::json ordering_summary_json(const OrderingResult& r);
void write_composition_csv(const std::filesystem::path& path, const CompositionResult& r,
                           const std::string& header_comment = "");
nlohmann::json composition_summary_json(const CompositionResult& r);

void write_text(const std::filesystem::path& path, const std::string& content);
std::string format_double(double v);

}  // namespace scenescore
