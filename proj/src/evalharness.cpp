#include "scenescore/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>

namespace scenescore {

using nlohmann::json;

std::vector<std::size_t> min_cost_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const std::size_t m = cost[0].size();
  for (const auto& row : cost)
    if (row.size() != m) throw DimensionError("assignment cost matrix is ragged");
  if (n > m) throw InvalidArgument("assignment needs rows <= columns");
  // Shortest augmenting paths with potentials; indices are 1-based, 0 is a
  // virtual column.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> out(n);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) out[p[j] - 1] = j - 1;
  return out;
}

double translation_error(const Pose& a, const Pose& b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::optional<double> angle_error_deg(double a, double b, int symmetry_order) {
  if (symmetry_order < 0) throw InvalidArgument("symmetry_order must be >= 0");
  if (symmetry_order == 0) return std::nullopt;
  const double period = 2.0 * kPi / symmetry_order;
  double d = std::fmod(std::abs(wrap_angle(a - b)), period);
  d = std::min(d, period - d);
  return d * 180.0 / kPi;
}

PoseError error_to_modes(const Pose& predicted, std::span<const Pose> modes, int symmetry_order) {
  if (modes.empty()) throw InvalidArgument("no ground-truth mode to compare against");
  std::size_t best = 0;
  for (std::size_t k = 1; k < modes.size(); ++k)
    if (translation_error(predicted, modes[k]) < translation_error(predicted, modes[best])) best = k;
  return {translation_error(predicted, modes[best]),
          angle_error_deg(predicted.theta, modes[best].theta, symmetry_order)};
}

double nn_pose_distance(const Pose& a, const Pose& b, double half_extent) {
  const double chord = std::hypot(a.cos_theta() - b.cos_theta(), a.sin_theta() - b.sin_theta());
  return translation_error(a, b) + half_extent * chord;
}

Pose nearest_neighbor_predict(std::span<const Scene> train_scenes, const Scene& test_scene,
                              const std::string& missing_id, double half_extent) {
  const std::string missing_class = test_scene.object(missing_id).class_name;
  std::map<std::string, std::vector<const SceneObject*>> placed;
  for (const auto& o : test_scene.objects)
    if (o.in_graph() && o.id != missing_id) placed[o.class_name].push_back(&o);

  double best_cost = std::numeric_limits<double>::infinity();
  std::optional<Pose> best;
  for (const auto& train : train_scenes) {
    std::map<std::string, std::vector<const SceneObject*>> avail;
    for (const auto& o : train.objects)
      if (o.in_graph()) avail[o.class_name].push_back(&o);
    if (avail[missing_class].empty()) continue;

    double total = 0.0;
    bool feasible = true;
    std::optional<Pose> prediction;
    for (const auto& [cls, tests] : placed) {
      const auto& cands = avail[cls];
      const std::size_t need = tests.size() + (cls == missing_class ? 1 : 0);
      if (cands.size() < need) {
        feasible = false;
        break;
      }
      std::vector<std::vector<double>> cost(tests.size(), std::vector<double>(cands.size()));
      for (std::size_t a = 0; a < tests.size(); ++a)
        for (std::size_t b = 0; b < cands.size(); ++b)
          cost[a][b] = nn_pose_distance(tests[a]->pose, cands[b]->pose, half_extent);
      const auto match = min_cost_assignment(cost);
      std::vector<bool> taken(cands.size(), false);
      for (std::size_t a = 0; a < tests.size(); ++a) {
        total += cost[a][match[a]];
        taken[match[a]] = true;
      }
      if (cls == missing_class)
        for (std::size_t b = 0; b < cands.size() && !prediction; ++b)
          if (!taken[b]) prediction = cands[b]->pose;
    }
    if (!feasible) continue;
    if (!prediction) prediction = avail[missing_class].front()->pose;
    if (total < best_cost) {
      best_cost = total;
      best = prediction;
    }
  }
  if (!best) throw NotFoundError("no training scene can supply class '" + missing_class + "'");
  return *best;
}

// ---------------------------------------------------------------------------
// Missing object

namespace {

struct Stats {
  double mean = 0.0, sd = 0.0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) s.sd += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(s.sd / static_cast<double>(v.size() - 1));
  }
  return s;
}

bool wanted(const std::vector<std::string>& classes, const std::string& c) {
  return std::find(classes.begin(), classes.end(), c) != classes.end();
}

}  // namespace

std::vector<ClassSummary> MissingObjectResult::summary() const {
  std::vector<std::string> methods, classes;
  for (const auto& r : records) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(classes.begin(), classes.end(), r.class_name) == classes.end())
      classes.push_back(r.class_name);
  }
  classes.push_back("mean");
  std::vector<ClassSummary> out;
  for (const auto& m : methods)
    for (const auto& c : classes) {
      std::vector<double> t, r;
      for (const auto& rec : records) {
        if (rec.method != m || (c != "mean" && rec.class_name != c)) continue;
        t.push_back(rec.error.t_cm);
        if (rec.error.r_deg) r.push_back(*rec.error.r_deg);
      }
      if (t.empty()) continue;
      ClassSummary s{m, c, t.size(), stats(t).mean, stats(t).sd, {}, {}};
      if (!r.empty()) {
        s.r_mean = stats(r).mean;
        s.r_sd = stats(r).sd;
      }
      out.push_back(s);
    }
  return out;
}

double MissingObjectResult::mean_translation(const std::string& method) const {
  std::vector<double> t;
  for (const auto& r : records)
    if (r.method == method) t.push_back(r.error.t_cm);
  if (t.empty()) throw NotFoundError("no records for method '" + method + "'");
  return stats(t).mean;
}

MissingObjectResult eval_missing(const EnergyModel& model, const std::string& method,
                                 std::span<const Scene> test_scenes, const GroundTruth& gt,
                                 const MissingConfig& config) {
  if (config.restarts < 1) throw InvalidArgument("restarts must be >= 1");
  MissingObjectResult result;
  for (std::size_t si = 0; si < test_scenes.size(); ++si) {
    const Scene& scene = test_scenes[si];
    const SceneGraph graph = build_graph(scene);
    const EnergyFunction f(model, graph);
    for (std::size_t oi = 0; oi < graph.size(); ++oi) {
      const SceneObject& obj = graph.nodes()[oi];
      if (!wanted(config.classes, obj.class_name)) continue;
      FixedMask mask(graph.size(), true);
      mask[oi] = false;
      LangevinConfig cfg = config.sampler;
      cfg.seed = chain_seed(config.seed, si * 4096 + oi);
      std::optional<ChainResult> best;
      for (std::size_t r = 0; r < config.restarts; ++r) {
        ChainResult c = langevin_sample(f, graph, cfg, mask, {}, r);
        if (!best || c.final_energy < best->final_energy) best = std::move(c);
      }
      const Pose pred = best->poses[oi];
      const auto modes = conditional_modes(gt, scene, obj.id);
      result.records.push_back(
          {scene.scene_id, obj.id, obj.class_name, method, pred, error_to_modes(pred, modes, obj.symmetry_order)});
    }
  }
  return result;
}

MissingObjectResult eval_missing_baselines(std::span<const Scene> train_scenes,
                                           std::span<const Scene> test_scenes, const GroundTruth& gt,
                                           const MissingConfig& config) {
  MissingObjectResult result;
  const double r = gt.spec.workspace_half_extent_cm;
  for (std::size_t si = 0; si < test_scenes.size(); ++si) {
    const Scene& scene = test_scenes[si];
    for (std::size_t oi = 0; oi < scene.objects.size(); ++oi) {
      const SceneObject& obj = scene.objects[oi];
      if (!obj.in_graph() || !wanted(config.classes, obj.class_name)) continue;
      const auto modes = conditional_modes(gt, scene, obj.id);

      const Pose nn = nearest_neighbor_predict(train_scenes, scene, obj.id, r);
      result.records.push_back(
          {scene.scene_id, obj.id, obj.class_name, "Nearest-Nbr", nn, error_to_modes(nn, modes, obj.symmetry_order)});

      std::mt19937_64 rng(chain_seed(config.seed ^ 0xABCDEFULL, si * 4096 + oi));
      std::uniform_real_distribution<double> upos(-r, r), uang(-kPi, kPi);
      PoseError mean{0.0, std::nullopt};
      double rsum = 0.0;
      Pose first;
      const std::size_t draws = std::max<std::size_t>(1, config.random_samples);
      for (std::size_t k = 0; k < draws; ++k) {
        const double x = upos(rng);
        const double y = upos(rng);
        const Pose p{x, y, wrap_angle(uang(rng))};
        if (k == 0) first = p;
        const PoseError e = error_to_modes(p, modes, obj.symmetry_order);
        mean.t_cm += e.t_cm / static_cast<double>(draws);
        if (e.r_deg) rsum += *e.r_deg / static_cast<double>(draws);
      }
      if (obj.symmetry_order != 0) mean.r_deg = rsum;
      result.records.push_back({scene.scene_id, obj.id, obj.class_name, "Random", first, mean});
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Ordering

double OrderingResult::fraction_correct() const {
  if (records.empty()) return 0.0;
  double c = 0.0;
  for (const auto& r : records) c += r.correct ? 1.0 : 0.0;
  return c / static_cast<double>(records.size());
}

double OrderingResult::mean_error() const {
  std::vector<double> v;
  for (const auto& r : records) v.push_back(r.position_error_cm);
  return stats(v).mean;
}

double OrderingResult::sd_error() const {
  std::vector<double> v;
  for (const auto& r : records) v.push_back(r.position_error_cm);
  return stats(v).sd;
}

std::vector<std::string> row_order(const SceneGraph& graph, std::span<const Pose> poses) {
  if (poses.size() != graph.size()) throw DimensionError("pose count does not match graph");
  double sc = 0.0, ss = 0.0;
  for (const auto& p : poses) {
    sc += p.cos_theta();
    ss += p.sin_theta();
  }
  const double heading = std::atan2(ss, sc);
  const double ux = std::cos(heading), uy = std::sin(heading);
  std::vector<std::size_t> idx(poses.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return poses[a].x * ux + poses[a].y * uy < poses[b].x * ux + poses[b].y * uy;
  });
  std::vector<std::string> ids;
  for (std::size_t i : idx) ids.push_back(graph.nodes()[i].id);
  return ids;
}

double aligned_position_error(std::span<const Pose> predicted, std::span<const Pose> reference) {
  const std::size_t n = predicted.size();
  if (n != reference.size() || n == 0) throw DimensionError("alignment needs equal, nonempty pose sets");
  double pcx = 0, pcy = 0, qcx = 0, qcy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    pcx += predicted[i].x / n;
    pcy += predicted[i].y / n;
    qcx += reference[i].x / n;
    qcy += reference[i].y / n;
  }
  double dot = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double px = predicted[i].x - pcx, py = predicted[i].y - pcy;
    const double qx = reference[i].x - qcx, qy = reference[i].y - qcy;
    dot += px * qx + py * qy;
    cross += px * qy - py * qx;
  }
  const double phi = std::atan2(cross, dot);
  const double c = std::cos(phi), s = std::sin(phi);
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double px = predicted[i].x - pcx, py = predicted[i].y - pcy;
    const double qx = reference[i].x - qcx, qy = reference[i].y - qcy;
    err += std::hypot(c * px - s * py - qx, s * px + c * py - qy);
  }
  return err / static_cast<double>(n);
}

OrderingResult eval_ordering(const EnergyModel& model, std::span<const Scene> test_scenes,
                             const GroundTruth& gt, const OrderingConfig& config) {
  if (config.restarts < 1) throw InvalidArgument("restarts must be >= 1");
  OrderingResult result;
  for (std::size_t si = 0; si < test_scenes.size(); ++si) {
    const Scene& scene = test_scenes[si];
    const SceneGraph graph = build_graph(scene);
    const EnergyFunction f(model, graph);
    LangevinConfig cfg = config.sampler;
    cfg.seed = chain_seed(config.seed, si);
    std::optional<ChainResult> best;
    for (std::size_t r = 0; r < config.restarts; ++r) {
      ChainResult c = langevin_sample(f, graph, cfg, {}, {}, r);
      if (!best || c.final_energy < best->final_energy) best = std::move(c);
    }
    OrderingRecord rec;
    rec.scene_id = scene.scene_id;
    rec.predicted_order = row_order(graph, best->poses);
    rec.true_order = gt.scene(scene.scene_id).order;
    rec.correct = rec.predicted_order == rec.true_order;
    const auto reference = graph.poses();
    rec.position_error_cm = aligned_position_error(best->poses, reference);
    result.records.push_back(std::move(rec));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Composition

namespace {

struct TvNodes {
  std::size_t tv;
  std::size_t speakers[2];
};

TvNodes tv_nodes(const SceneGraph& graph) {
  std::optional<std::size_t> tv;
  std::vector<std::size_t> sp;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    if (graph.nodes()[i].class_name == "tv") tv = i;
    if (graph.nodes()[i].class_name == "speaker") sp.push_back(i);
  }
  if (!tv || sp.size() != 2) throw InvalidArgument("scene needs one tv and two speakers");
  return {*tv, {sp[0], sp[1]}};
}

}  // namespace

bool tv_arrangement_aligned(const SceneGraph& graph, std::span<const Pose> poses,
                            const CompositionConfig& config) {
  const TvNodes n = tv_nodes(graph);
  const Pose& tv = poses[n.tv];
  const double c = std::cos(tv.theta), s = std::sin(tv.theta);
  double lx[2], ly[2];
  for (int k = 0; k < 2; ++k) {
    const double dx = poses[n.speakers[k]].x - tv.x, dy = poses[n.speakers[k]].y - tv.y;
    lx[k] = c * dx + s * dy;
    ly[k] = -s * dx + c * dy;
  }
  const double spread = std::max({0.0, ly[0], ly[1]}) - std::min({0.0, ly[0], ly[1]});
  if (!(spread <= config.alignment_threshold_cm)) return false;
  if (!(lx[0] * lx[1] < 0.0)) return false;
  return std::abs(std::abs(lx[0]) - std::abs(lx[1])) <= config.symmetry_threshold_cm;
}

bool tv_sample_correct(const Scene& scene, const SceneGraph& graph, std::span<const Pose> poses,
                       const CompositionConfig& config) {
  return tv_arrangement_aligned(graph, poses, config) && collision_free(scene, poses);
}

double CompositionLevel::ratio() const {
  if (rejection_correct > 0)
    return static_cast<double>(implicit_correct) / static_cast<double>(rejection_correct);
  return implicit_correct > 0 ? std::numeric_limits<double>::infinity()
                              : std::numeric_limits<double>::quiet_NaN();
}

std::size_t clutter_count(const Scene& scene) {
  std::size_t c = 0;
  for (const auto& o : scene.objects) c += o.in_graph() ? 0 : 1;
  return c;
}

CompositionResult eval_composition(const EnergyModel& model, std::span<const Scene> test_scenes,
                                   const CompositionConfig& config) {
  if (config.budget < 1) throw InvalidArgument("budget must be >= 1");
  std::map<std::size_t, std::vector<const Scene*>> by_level;
  for (const auto& s : test_scenes) by_level[clutter_count(s)].push_back(&s);
  if (by_level.empty()) throw InvalidArgument("no test scenes for the composition experiment");

  CompositionResult result;
  std::size_t level_index = 0;
  for (const auto& [clutter, scenes] : by_level) {
    CompositionLevel level;
    level.clutter = clutter;
    level.budget = config.budget;
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      // Round-robin share of the level budget.
      const std::size_t share = config.budget / scenes.size() + (k < config.budget % scenes.size() ? 1 : 0);
      if (share == 0) continue;
      const Scene& scene = *scenes[k];
      const SceneGraph graph = build_graph(scene);
      const EnergyFunction f(model, graph);
      const CostTerm collision = scene_collision_cost(scene, config.collision_margin_cm, config.collision_weight);
      const CostTerm extra[] = {collision};
      LangevinConfig implicit_cfg = config.sampler;
      implicit_cfg.seed = chain_seed(config.seed, level_index * 4096 + 2 * k);
      LangevinConfig plain_cfg = config.sampler;
      plain_cfg.seed = chain_seed(config.seed, level_index * 4096 + 2 * k + 1);

      for (std::size_t c = 0; c < share; ++c) {
        const ChainResult r = langevin_sample(f, graph, implicit_cfg, {}, extra, c);
        ++level.implicit_drawn;
        if (tv_sample_correct(scene, graph, r.poses, config)) ++level.implicit_correct;
      }
      const RejectionResult rej = rejection_sample(
          [&](std::uint64_t c) { return langevin_sample(f, graph, plain_cfg, {}, {}, c).poses; }, share,
          [&](std::span<const Pose> p) { return tv_sample_correct(scene, graph, p, config); });
      level.rejection_drawn += rej.drawn;
      level.rejection_correct += rej.count();
    }
    result.levels.push_back(level);
    ++level_index;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Output

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write '" + path.string() + "'");
  out << content;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string comment(const std::string& c) { return c.empty() ? "" : "# " + c + "\n"; }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json finite_or_string(double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); }

}  // namespace

void write_missing_csv(const std::filesystem::path& path, const MissingObjectResult& r,
                       const std::string& header_comment) {
  std::string s = comment(header_comment) + "scene_id,object_id,class,method,x,y,theta,t_cm,r_deg\n";
  for (const auto& rec : r.records)
    s += rec.scene_id + "," + rec.object_id + "," + rec.class_name + "," + rec.method + "," +
         format_double(rec.predicted.x) + "," + format_double(rec.predicted.y) + "," +
         format_double(rec.predicted.theta) + "," + format_double(rec.error.t_cm) + "," + opt(rec.error.r_deg) +
         "\n";
  write_text(path, s);
}

void write_missing_table_csv(const std::filesystem::path& path, const MissingObjectResult& r,
                             const std::string& header_comment) {
  std::string s = comment(header_comment) + "method,class,count,t_mean,t_sd,r_mean,r_sd\n";
  for (const auto& c : r.summary())
    s += c.method + "," + c.class_name + "," + std::to_string(c.count) + "," + format_double(c.t_mean) + "," +
         format_double(c.t_sd) + "," + opt(c.r_mean) + "," + opt(c.r_sd) + "\n";
  write_text(path, s);
}

json missing_summary_json(const MissingObjectResult& r) {
  json methods = json::object();
  for (const auto& s : r.summary())
    methods[s.method][s.class_name] = {{"count", s.count},       {"t_mean", s.t_mean},
                                       {"t_sd", s.t_sd},         {"r_mean", opt_json(s.r_mean)},
                                       {"r_sd", opt_json(s.r_sd)}};
  return {{"experiment", "missing-object"}, {"methods", methods}};
}

void write_ordering_csv(const std::filesystem::path& path, const OrderingResult& r,
                        const std::string& header_comment) {
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + v[i];
    return s;
  };
  std::string s = comment(header_comment) + "scene_id,predicted_order,true_order,correct,position_error_cm\n";
  for (const auto& rec : r.records)
    s += rec.scene_id + "," + join(rec.predicted_order) + "," + join(rec.true_order) + "," +
         (rec.correct ? "1" : "0") + "," + format_double(rec.position_error_cm) + "\n";
  write_text(path, s);
}

json ordering_summary_json(const OrderingResult& r) {
  return {{"experiment", "ordering"},
          {"scenes", r.records.size()},
          {"fraction_correct", r.fraction_correct()},
          {"position_error_mean_cm", r.mean_error()},
          {"position_error_sd_cm", r.sd_error()}};
}

void write_composition_csv(const std::filesystem::path& path, const CompositionResult& r,
                           const std::string& header_comment) {
  std::string s = comment(header_comment) + "clutter,budget,implicit_correct,rejection_correct,ratio\n";
  for (const auto& l : r.levels)
    s += std::to_string(l.clutter) + "," + std::to_string(l.budget) + "," + std::to_string(l.implicit_correct) +
         "," + std::to_string(l.rejection_correct) + "," + format_double(l.ratio()) + "\n";
  write_text(path, s);
}

json composition_summary_json(const CompositionResult& r) {
  json levels = json::array();
  for (const auto& l : r.levels)
    levels.push_back({{"clutter", l.clutter},
                      {"budget", l.budget},
                      {"implicit_drawn", l.implicit_drawn},
                      {"rejection_drawn", l.rejection_drawn},
                      {"implicit_correct", l.implicit_correct},
                      {"rejection_correct", l.rejection_correct},
                      {"ratio", finite_or_string(l.ratio())}});
  return {{"experiment", "composition"}, {"levels", levels}};
}

}  // namespace scenescore
