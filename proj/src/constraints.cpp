#include "scenescore/constraints.hpp"

#include <algorithm>
#include <cmath>

namespace scenescore {

namespace {

double sign_pos(double v) { return v >= 0.0 ? 1.0 : -1.0; }

}  // namespace

Footprint footprint(const Pose& pose, const Scale& scale) {
  const double c = std::abs(std::cos(pose.theta));
  const double s = std::abs(std::sin(pose.theta));
  return {pose.x, pose.y, 0.5 * (scale.width * c + scale.height * s),
          0.5 * (scale.width * s + scale.height * c)};
}

std::array<double, 2> footprint_theta_derivative(const Pose& pose, const Scale& scale) {
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  // d|cos|/dtheta = -sgn(cos) sin, d|sin|/dtheta = sgn(sin) cos
  const double dac = -sign_pos(c) * s;
  const double das = sign_pos(s) * c;
  return {0.5 * (scale.width * dac + scale.height * das), 0.5 * (scale.width * das + scale.height * dac)};
}

Hinge hinge_pair(const Footprint& a, const Footprint& b, double margin) {
  Hinge h;
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double ox = a.ex + b.ex + margin - std::abs(dx);
  const double oy = a.ey + b.ey + margin - std::abs(dy);
  if (ox <= 0.0 || oy <= 0.0) return h;
  if (ox <= oy) {
    h.cost = ox;
    h.dax = -sign_pos(dx);
    h.dbx = sign_pos(dx);
    h.daex = h.dbex = 1.0;
  } else {
    h.cost = oy;
    h.day = -sign_pos(dy);
    h.dby = sign_pos(dy);
    h.daey = h.dbey = 1.0;
  }
  return h;
}

CollisionModel::CollisionModel(std::vector<Scale> node_scales, std::vector<Footprint> obstacles,
                               double margin)
    : scales_(std::move(node_scales)), obstacles_(std::move(obstacles)), margin_(margin) {}

namespace {

std::vector<Scale> graph_scales(const Scene& scene) {
  std::vector<Scale> out;
  for (const auto& o : scene.objects)
    if (o.in_graph()) out.push_back(o.scale);
  return out;
}

std::vector<Footprint> clutter_footprints(const Scene& scene) {
  std::vector<Footprint> out;
  for (const auto& o : scene.objects)
    if (!o.in_graph()) out.push_back(footprint(o.pose, o.scale));
  return out;
}

}  // namespace

CollisionModel::CollisionModel(const Scene& scene, double margin)
    : CollisionModel(graph_scales(scene), clutter_footprints(scene), margin) {}

double CollisionModel::cost(std::span<const Pose> node_poses) const {
  std::vector<PoseGradient> g(node_poses.size());
  return cost(node_poses, g);
}

double CollisionModel::cost(std::span<const Pose> node_poses, std::span<PoseGradient> grad) const {
  const std::size_t n = scales_.size();
  if (node_poses.size() != n || grad.size() != n)
    throw DimensionError("collision cost expects " + std::to_string(n) + " poses");
  std::fill(grad.begin(), grad.end(), PoseGradient{0.0, 0.0, 0.0});

  std::vector<Footprint> fp(n);
  std::vector<std::array<double, 2>> dext(n);
  for (std::size_t i = 0; i < n; ++i) {
    fp[i] = footprint(node_poses[i], scales_[i]);
    dext[i] = footprint_theta_derivative(node_poses[i], scales_[i]);
  }
  auto add = [&](std::size_t i, double dx, double dy, double dex, double dey) {
    grad[i][0] += dx;
    grad[i][1] += dy;
    grad[i][2] += dex * dext[i][0] + dey * dext[i][1];
  };

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const Hinge h = hinge_pair(fp[i], fp[j], margin_);
      if (h.cost == 0.0) continue;
      total += h.cost;
      add(i, h.dax, h.day, h.daex, h.daey);
      add(j, h.dbx, h.dby, h.dbex, h.dbey);
    }
    for (const auto& ob : obstacles_) {
      const Hinge h = hinge_pair(fp[i], ob, margin_);
      if (h.cost == 0.0) continue;
      total += h.cost;
      add(i, h.dax, h.day, h.daex, h.daey);
    }
  }
  for (std::size_t a = 0; a < obstacles_.size(); ++a)
    for (std::size_t b = a + 1; b < obstacles_.size(); ++b)
      total += hinge_pair(obstacles_[a], obstacles_[b], margin_).cost;
  return total;
}

CostTerm CollisionModel::term(double weight) const {
  CollisionModel copy = *this;
  return {[copy](std::span<const Pose> p, std::span<PoseGradient> g) { return copy.cost(p, g); },
          weight};
}

CostTerm scene_collision_cost(const Scene& scene, double margin, double weight) {
  return CollisionModel(scene, margin).term(weight);
}

bool collision_free(const Scene& scene, std::span<const Pose> node_poses) {
  return CollisionModel(scene, 0.0).cost(node_poses) == 0.0;
}

bool collision_free(const Scene& scene) {
  return collision_free(scene, build_graph(scene).poses());
}

RejectionResult rejection_sample(const PoseGenerator& generator, std::size_t budget,
                                 const PosePredicate& predicate) {
  if (budget < 1) throw InvalidArgument("rejection sampling budget must be >= 1");
  RejectionResult r;
  for (std::size_t k = 0; k < budget; ++k) {
    auto sample = generator(k);
    ++r.drawn;
    if (predicate(sample)) r.accepted.push_back(std::move(sample));
  }
  return r;
}

}  // namespace scenescore
