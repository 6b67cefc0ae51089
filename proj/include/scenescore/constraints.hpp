#pragma once

// Hinge collision costs over axis-aligned boxes enclosing each object's
// oriented w x h rectangle, and the rejection-sampling comparator.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "scenescore/sampler.hpp"
#include "scenescore/scene.hpp"

namespace scenescore {

struct Footprint {
  double x = 0.0, y = 0.0;    // centre, cm
  double ex = 0.0, ey = 0.0;  // half extents, cm
};

// ex = (w|cos| + h|sin|) / 2, ey = (w|sin| + h|cos|) / 2.
Footprint footprint(const Pose& pose, const Scale& scale);
// (d ex / d theta, d ey / d theta); at |cos| = 0 or |sin| = 0 the sign of
// the zero term is taken as positive.
std::array<double, 2> footprint_theta_derivative(const Pose& pose, const Scale& scale);

struct Hinge {
  double cost = 0.0;
  // Subgradient w.r.t. a.x, a.y, b.x, b.y, a.ex, a.ey, b.ex, b.ey.
  double dax = 0.0, day = 0.0, dbx = 0.0, dby = 0.0;
  double daex = 0.0, daey = 0.0, dbex = 0.0, dbey = 0.0;
};

// o_x = max(0, ex_a + ex_b + margin - |xa - xb|), o_y likewise;
// cost = min(o_x, o_y). Ties go to the x axis.
Hinge hinge_pair(const Footprint& a, const Footprint& b, double margin);

// Collision cost over the graph nodes of a scene plus its non-graph clutter.
// Node poses vary, obstacle poses are fixed.
class CollisionModel {
 public:
  CollisionModel(std::vector<Scale> node_scales, std::vector<Footprint> obstacles, double margin);
  // Nodes are the scene's graph objects in graph order; obstacles the rest.
  CollisionModel(const Scene& scene, double margin);

  double margin() const { return margin_; }
  std::size_t node_count() const { return scales_.size(); }
  const std::vector<Footprint>& obstacles() const { return obstacles_; }

  // Sum over all unordered pairs (node-node, node-obstacle, obstacle-obstacle).
  double cost(std::span<const Pose> node_poses) const;
  // Same, writing d cost / d (x, y, theta) for every node into `grad`.
  double cost(std::span<const Pose> node_poses, std::span<PoseGradient> grad) const;
  CostTerm term(double weight) const;

 private:
  std::vector<Scale> scales_;
  std::vector<Footprint> obstacles_;
  double margin_;
};

inline constexpr double kCollisionWeight = 5.0;
inline constexpr double kCollisionMargin = 0.5;  // cm

CostTerm scene_collision_cost(const Scene& scene, double margin = kCollisionMargin,
                              double weight = kCollisionWeight);

// True iff the margin-0 collision cost is exactly zero.
bool collision_free(const Scene& scene, std::span<const Pose> node_poses);
bool collision_free(const Scene& scene);

using PoseGenerator = std::function<std::vector<Pose>(std::uint64_t sample_index)>;
using PosePredicate = std::function<bool(std::span<const Pose>)>;

struct RejectionResult {
  std::vector<std::vector<Pose>> accepted;
  std::size_t drawn = 0;
  std::size_t count() const { return accepted.size(); }
};

// Draws exactly `budget` samples and keeps those passing `predicate`.
RejectionResult rejection_sample(const PoseGenerator& generator, std::size_t budget,
                                 const PosePredicate& predicate);

}  // namespace scenescore
