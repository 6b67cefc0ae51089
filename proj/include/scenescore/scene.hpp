#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scenescore/errors.hpp"

namespace scenescore {

inline constexpr double kPi = 3.14159265358979323846;

// Wraps an angle into (-pi, pi]. Idempotent.
double wrap_angle(double theta);

// Planar pose in centimetres and radians. The unit heading (cos, sin) is
// always derived from theta.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  double cos_theta() const { return std::cos(theta); }
  double sin_theta() const { return std::sin(theta); }
  // (x, y, cos theta, sin theta)
  std::array<double, 4> network_vector() const { return {x, y, cos_theta(), sin_theta()}; }
  bool operator==(const Pose&) const = default;
};

// d/dx, d/dy, d/dtheta of a scalar with respect to one pose.
using PoseGradient = std::array<double, 3>;

// Transform from one pose to another, expressed in the source frame.
struct RelPose {
  double dx_local = 0.0;
  double dy_local = 0.0;
  double cos_dtheta = 1.0;
  double sin_dtheta = 0.0;
};

RelPose relative_pose(const Pose& from, const Pose& to);

// Applies a rigid transform (rotation about the origin, then translation).
Pose transform_pose(const Pose& p, double rotation, double tx, double ty);

struct Scale {
  double width = 1.0;   // cm, rectified orientation
  double height = 1.0;  // cm
  bool operator==(const Scale&) const = default;
};

struct SceneObject {
  std::string id;
  std::string class_name;
  Pose pose;
  Scale scale;
  std::vector<double> features;
  bool movable = true;
  bool clutter = false;
  int symmetry_order = 1;  // 0 encodes continuous symmetry

  // Immovable clutter takes part in constraints but not in the graph.
  bool in_graph() const { return movable || !clutter; }
  bool operator==(const SceneObject&) const = default;
};

enum class Split { Train, Test };

const char* to_string(Split s);

struct Scene {
  std::string scene_id;
  Split split = Split::Train;
  std::size_t feature_dim = 0;
  std::vector<SceneObject> objects;

  // Index of the object with the given id; throws NotFoundError.
  std::size_t index_of(const std::string& object_id) const;
  const SceneObject& object(const std::string& object_id) const {
    return objects[index_of(object_id)];
  }
  // Null when absent.
  const SceneObject* find(const std::string& object_id) const {
    for (const auto& o : objects)
      if (o.id == object_id) return &o;
    return nullptr;
  }
  bool operator==(const Scene&) const = default;
};

// Fully connected directed graph over the graph-eligible objects of a scene.
class SceneGraph {
 public:
  const std::vector<SceneObject>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  // Scene index of each node.
  const std::vector<std::size_t>& source_indices() const { return source_; }
  // Ordered pairs (j, i): message from node j to node i.
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }
  std::size_t feature_dim() const { return feature_dim_; }

  std::vector<Pose> poses() const;
  // Copy with node poses replaced.
  SceneGraph with_poses(std::span<const Pose> poses) const;

 private:
  friend SceneGraph build_graph(std::span<const SceneObject> objects);
  std::vector<SceneObject> nodes_;
  std::vector<std::size_t> source_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::size_t feature_dim_ = 0;
};

// Throws InvalidArgument when no graph-eligible object remains.
SceneGraph build_graph(std::span<const SceneObject> objects);
inline SceneGraph build_graph(const Scene& scene) { return build_graph(scene.objects); }

// JSON-lines dataset I/O. Each line is one scene.
std::string scene_to_json_line(const Scene& scene);
Scene scene_from_json_line(const std::string& line, std::size_t line_number = 0);

void save_dataset(const std::filesystem::path& path, std::span<const Scene> scenes);
// Every scene must agree with the feature_dim of the first line.
std::vector<Scene> load_dataset(const std::filesystem::path& path);

std::vector<Scene> filter_split(std::span<const Scene> scenes, Split split);

}  // namespace scenescore
