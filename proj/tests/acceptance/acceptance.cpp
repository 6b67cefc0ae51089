// Acceptance run: one PASS/FAIL line per criterion. Tolerances are fixed
// below; experiment settings come from the scenario presets.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scenescore/evalharness.hpp"
#include "scenescore/heatmap.hpp"
#include "scenescore/presets.hpp"
#include "scenescore/sampler.hpp"
#include "scenescore/synthgen.hpp"
#include "scenescore/training.hpp"

using namespace scenescore;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 30.0;
constexpr std::size_t kGradCases = 60;
constexpr double kLossTol = 1e-6;
constexpr double kLossExactTol = 1e-12;
constexpr double kShiftTol = 1e-10;
constexpr double kRigidTol = 1e-8;
constexpr double kAbsMinChange = 1e-6;
constexpr double kLangevinRel = 0.05;
constexpr double kLangevinSeconds = 60.0;
constexpr std::size_t kLangevinChains = 2000;
constexpr double kRandomFraction = 0.5;
constexpr double kDiningSeconds = 600.0;
constexpr double kOrderingSeen = 0.8;
constexpr double kOrderingUnseen = 0.6;
constexpr double kCompositionRatio = 2.0;
constexpr std::size_t kCompositionSeeds = 3;
constexpr double kHeatmapCellTol = 1e-12;
constexpr double kHeatmapModeCm = 5.0;
constexpr std::size_t kHeatmapGrid = 81;  // 1.25 cm cells over the dining workspace
constexpr std::size_t kLossWindow = 10;

constexpr std::uint64_t kDataSeed = 2024;
constexpr std::uint64_t kInitSeed = 2025;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const Outcome& o) {
  std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<SceneObject> random_objects(std::size_t n, std::size_t D, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-40.0, 40.0), ang(-kPi, kPi), feat(-1.0, 1.0),
      size(1.0, 25.0);
  std::vector<SceneObject> out;
  for (std::size_t i = 0; i < n; ++i) {
    SceneObject o;
    o.id = "o" + std::to_string(i);
    o.class_name = "c";
    o.pose = {pos(rng), pos(rng), ang(rng)};
    o.scale = {size(rng), size(rng)};
    for (std::size_t d = 0; d < D; ++d) o.features.push_back(feat(rng));
    out.push_back(o);
  }
  return out;
}

EnergyConfig small_config(std::mt19937_64& rng) {
  EnergyConfig c;
  c.num_gnn_layers = 1 + static_cast<int>(rng() % 3);
  c.hidden = 3 + rng() % 5;
  c.semantic_dim = 2 + rng() % 3;
  return c;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  const double h = 1e-5;
  double worst_pose = 0.0, worst_param = 0.0;
  for (std::size_t rep = 0; rep < kGradCases; ++rep) {
    const Variant var = rep % 2 ? Variant::Absolute : Variant::Relative;
    const std::size_t D = 2 + rng() % 4;
    EnergyModel m(small_config(rng), var, D, 40.0, rng());
    const SceneGraph g = build_graph(random_objects(2 + rng() % 4, D, rng));
    const EnergyFunction f(m, g);
    auto poses = g.poses();

    std::vector<PoseGradient> grad(g.size());
    f.value_and_pose_gradient(poses, grad);
    std::vector<double> analytic, numeric;
    for (std::size_t i = 0; i < poses.size(); ++i)
      for (int c = 0; c < 3; ++c) {
        auto p = poses;
        double* field = c == 0 ? &p[i].x : c == 1 ? &p[i].y : &p[i].theta;
        const double saved = *field;
        *field = saved + h;
        const double up = f.value(p);
        *field = saved - h;
        const double dn = f.value(p);
        analytic.push_back(grad[i][c]);
        numeric.push_back((up - dn) / (2 * h));
      }
    worst_pose = std::max(worst_pose, relative_error(analytic, numeric));

    auto pg = zero_gradients(m);
    f.accumulate_param_gradient(poses, pg, 1.0);
    analytic.clear();
    numeric.clear();
    for (std::size_t k = 0; k < m.parameters().size(); ++k) {
      auto& w = m.parameters()[k].value;
      for (std::size_t e = 0; e < w.size(); ++e) {
        const double saved = w[e];
        w[e] = saved + h;
        const double up = f.value(poses);
        w[e] = saved - h;
        const double dn = f.value(poses);
        w[e] = saved;
        analytic.push_back(pg[k][e]);
        numeric.push_back((up - dn) / (2 * h));
      }
    }
    worst_param = std::max(worst_param, relative_error(analytic, numeric));
  }
  const double secs = seconds_since(t0);
  return {worst_pose < kGradTol && worst_param < kGradTol && secs < kGradSeconds,
          fmt("%zu cases, worst relative error pose %.2e param %.2e (< %.0e), %.1f s (< %.0f s)",
              kGradCases, worst_pose, worst_param, kGradTol, secs, kGradSeconds)};
}

Outcome loss_arithmetic() {
  const std::vector<double> negs{1.0, 2.0};
  const double a = infonce_loss(0.0, negs);
  // -log(1 / (1 + e^-1 + e^-2)) written out directly.
  const double expected = std::log(1.0 + std::exp(-1.0) + std::exp(-2.0));
  const double b = infonce_loss(3.0, std::vector<double>{3.0});
  double shift = 0.0;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> e(1 + rng() % 8);
    for (double& x : e) x = u(rng);
    const double pos = u(rng), c = 10.0 * u(rng);
    auto moved = e;
    for (double& x : moved) x += c;
    shift = std::max(shift, std::abs(infonce_loss(pos, e) - infonce_loss(pos + c, moved)));
  }
  const bool pass = std::abs(a - 0.407606) < kLossTol && std::abs(a - expected) < kLossExactTol &&
                    std::abs(b - std::log(2.0)) < kLossExactTol && shift < kShiftTol;
  return {pass, fmt("L(0,[1,2]) = %.9f, L(e,[e]) - ln 2 = %.1e, max shift change %.1e", a,
                    b - std::log(2.0), shift)};
}

Outcome symmetry_suite() {
  std::mt19937_64 rng(202);
  bool perm_exact = true;
  double rigid = 0.0, abs_change = std::numeric_limits<double>::infinity();
  for (int rep = 0; rep < 20; ++rep) {
    const EnergyModel rel(small_config(rng), Variant::Relative, 4, 50.0, rng());
    const EnergyModel abs(small_config(rng), Variant::Absolute, 4, 50.0, rng());
    auto objs = random_objects(3 + rng() % 4, 4, rng);
    auto perm = objs;
    std::shuffle(perm.begin(), perm.end(), rng);
    perm_exact = perm_exact && energy(rel, build_graph(objs)) == energy(rel, build_graph(perm)) &&
                 energy(abs, build_graph(objs)) == energy(abs, build_graph(perm));
    std::uniform_real_distribution<double> u(-20.0, 20.0), a(-kPi, kPi);
    const double rot = a(rng), tx = u(rng), ty = u(rng);
    auto moved = objs;
    for (auto& o : moved) o.pose = transform_pose(o.pose, rot, tx, ty);
    rigid = std::max(rigid, std::abs(energy(rel, build_graph(objs)) - energy(rel, build_graph(moved))));
    abs_change = std::min(abs_change,
                          std::abs(energy(abs, build_graph(objs)) - energy(abs, build_graph(moved))));
  }
  return {perm_exact && rigid < kRigidTol && abs_change > kAbsMinChange,
          fmt("permutation exact: %s, relative rigid change %.1e (< %.0e), absolute min change %.2e "
              "(> %.0e)",
              perm_exact ? "yes" : "no", rigid, kRigidTol, abs_change, kAbsMinChange)};
}

Outcome langevin_check() {
  // E = |p - mu|^2 / (2 s^2): stationary law N(mu, s^2) per coordinate.
  const double mx = 12.0, my = -7.0, s = 5.0, R = 50.0, lambda = 1e-4;
  const CostFn quad = [=](std::span<const Pose> p, std::span<PoseGradient> g) {
    const double dx = p[0].x - mx, dy = p[0].y - my;
    g[0] = {dx / (s * s), dy / (s * s), 0.0};
    return (dx * dx + dy * dy) / (2 * s * s);
  };
  auto cfg = LangevinConfig::constant(1500, lambda, std::sqrt(2.0 * lambda), 4242);
  cfg.clip_norm = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Pose> start(1);
  const FixedMask free(1, false);
  double sx = 0, sy = 0, sxx = 0, syy = 0;
  for (std::size_t c = 0; c < kLangevinChains; ++c) {
    const auto r = langevin_chain(quad, start, free, cfg, {}, R, c);
    sx += r.poses[0].x;
    sy += r.poses[0].y;
    sxx += r.poses[0].x * r.poses[0].x;
    syy += r.poses[0].y * r.poses[0].y;
  }
  const double secs = seconds_since(t0);
  const double n = static_cast<double>(kLangevinChains);
  const double ex = sx / n, ey = sy / n;
  const double vx = (sxx - n * ex * ex) / (n - 1), vy = (syy - n * ey * ey) / (n - 1);
  const double worst = std::max({std::abs(ex - mx) / std::abs(mx), std::abs(ey - my) / std::abs(my),
                                 std::abs(vx - s * s) / (s * s), std::abs(vy - s * s) / (s * s)});
  return {worst < kLangevinRel && secs < kLangevinSeconds,
          fmt("mean (%.3f, %.3f) vs (%.0f, %.0f), var (%.3f, %.3f) vs %.0f, worst relative %.2f%% "
              "(< %.0f%%), %.1f s",
              ex, ey, mx, my, vx, vy, s * s, 100 * worst, 100 * kLangevinRel, secs)};
}

struct Trained {
  Checkpoint ck;
  double seconds = 0.0;
};

Trained fit(const Preset& p, Variant v, const Generated& gen) {
  const auto t0 = std::chrono::steady_clock::now();
  EnergyModel m(p.energy, v, gen.scenes.front().feature_dim, gen.truth.spec.workspace_half_extent_cm,
                kInitSeed);
  Trained t{train(m, gen.scenes, p.train), 0.0};
  t.seconds = seconds_since(t0);
  return t;
}

MissingConfig missing_config(const Preset& p) {
  MissingConfig mc;
  mc.restarts = p.eval.restarts;
  mc.random_samples = p.eval.random_samples;
  mc.seed = p.eval.seed;
  mc.sampler = p.sampler.make(p.eval.seed);
  return mc;
}

double window_mean(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

void dining(const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const Preset p = preset_for(ScenarioKind::Dining);
  const ScenarioSpec spec = ScenarioSpec::defaults(ScenarioKind::Dining);
  const Generated gen = generate(spec, kDataSeed);
  const auto train_scenes = filter_split(gen.scenes, Split::Train);
  const auto test_scenes = filter_split(gen.scenes, Split::Test);

  const Trained rel = fit(p, Variant::Relative, gen);
  const Trained abs = fit(p, Variant::Absolute, gen);
  const MissingConfig mc = missing_config(p);
  MissingObjectResult all = eval_missing(rel.ck.model, "SceneScore", test_scenes, gen.truth, mc);
  const auto abs_r = eval_missing(abs.ck.model, "SceneScore-Abs", test_scenes, gen.truth, mc);
  const auto base = eval_missing_baselines(train_scenes, test_scenes, gen.truth, mc);
  const double secs = seconds_since(t0);
  all.records.insert(all.records.end(), abs_r.records.begin(), abs_r.records.end());
  all.records.insert(all.records.end(), base.records.begin(), base.records.end());
  write_missing_csv(out / "dining_missing.csv", all);
  write_missing_table_csv(out / "dining_missing_table.csv", all);
  write_loss_trace(out / "dining_loss.csv", rel.ck.loss_history);

  const double ss = all.mean_translation("SceneScore");
  const double ab = all.mean_translation("SceneScore-Abs");
  const double nn = all.mean_translation("Nearest-Nbr");
  const double rnd = all.mean_translation("Random");
  std::printf("  dining mean translation error (cm): SceneScore %.2f, SceneScore-Abs %.2f, "
              "Nearest-Nbr %.2f, Random %.2f; training %.0f s + %.0f s\n",
              ss, ab, nn, rnd, rel.seconds, abs.seconds);
  report("missing-object: SceneScore beats Nearest-Nbr", {ss < nn, fmt("%.2f < %.2f", ss, nn)});
  report("missing-object: SceneScore under half of random",
         {ss < kRandomFraction * rnd, fmt("%.2f < %.2f", ss, kRandomFraction * rnd)});
  report("missing-object: SceneScore-Abs worse than SceneScore", {ab > ss, fmt("%.2f > %.2f", ab, ss)});
  report("missing-object: full run time", {secs < kDiningSeconds, fmt("%.0f s (< %.0f s)", secs, kDiningSeconds)});

  const auto& hist = rel.ck.loss_history;
  const std::size_t w = std::min(kLossWindow, hist.size() / 2);
  const double first = window_mean(hist, 0, w), last = window_mean(hist, hist.size() - w, hist.size());
  report("training: dining loss decreases",
         {last < first, fmt("mean of last %zu iterations %.4f < first %zu %.4f", w, last, w, first)});

  // Heatmap checks on the first test scene.
  const Scene& scene = test_scenes.front();
  double cell = 0.0;
  for (const auto& o : scene.objects) {
    const Heatmap h = energy_heatmap(rel.ck.model, scene, o.id, 1);
    cell = std::max(cell, std::abs(h.at(0, 0) - energy(rel.ck.model, build_graph(scene))));
  }
  report("heatmap: single cell equals energy", {cell <= kHeatmapCellTol, fmt("max difference %.1e", cell)});
  const std::string target = "fork_0";
  const Heatmap h = energy_heatmap(rel.ck.model, scene, target, kHeatmapGrid);
  write_heatmap_csv(out / "dining_heatmap.csv", h);
  write_heatmap_pgm(out / "dining_heatmap.pgm", h);
  const Pose best = h.argmin();
  const auto modes = conditional_modes(gen.truth, scene, target);
  const double d = error_to_modes(best, modes, 0).t_cm;
  report("heatmap: trained minimum near a ground-truth mode",
         {d < kHeatmapModeCm, fmt("%s/%s minimum at (%.2f, %.2f), %.2f cm from the closest mode (< %.0f)",
                                  scene.scene_id.c_str(), target.c_str(), best.x, best.y, d,
                                  kHeatmapModeCm)});
}

void ordering(const fs::path& out) {
  for (ScenarioKind kind :
       {ScenarioKind::OrderingClassSize, ScenarioKind::OrderingAllSize, ScenarioKind::OrderingUnseen}) {
    const Preset p = preset_for(kind);
    const Generated gen = generate(ScenarioSpec::defaults(kind), kDataSeed);
    const Trained t = fit(p, Variant::Relative, gen);
    OrderingConfig oc;
    oc.restarts = p.eval.ordering_restarts;
    oc.seed = p.eval.seed;
    oc.sampler = p.sampler.make(p.eval.seed);
    const auto test_scenes = filter_split(gen.scenes, Split::Test);
    const OrderingResult r = eval_ordering(t.ck.model, test_scenes, gen.truth, oc);
    write_ordering_csv(out / (std::string(to_string(kind)) + ".csv"), r);
    const double need = kind == ScenarioKind::OrderingUnseen ? kOrderingUnseen : kOrderingSeen;
    report(std::string("ordering: ") + to_string(kind),
           {r.fraction_correct() >= need,
            fmt("%.1f%% correct (>= %.0f%%) over %zu scenes, position error %.2f cm, training %.0f s",
                100 * r.fraction_correct(), 100 * need, r.records.size(), r.mean_error(), t.seconds)});
  }
}

void composition(const fs::path& out) {
  const Preset p = preset_for(ScenarioKind::Tv);
  const Generated gen = generate(ScenarioSpec::defaults(ScenarioKind::Tv), kDataSeed);
  const Trained t = fit(p, Variant::Relative, gen);
  const auto test_scenes = filter_split(gen.scenes, Split::Test);
  bool top_ok = true, monotone = true;
  std::string detail;
  for (std::size_t s = 0; s < kCompositionSeeds; ++s) {
    CompositionConfig cc;
    cc.budget = p.eval.budget;
    cc.alignment_threshold_cm = p.eval.alignment_threshold_cm;
    cc.symmetry_threshold_cm = p.eval.symmetry_threshold_cm;
    cc.seed = p.eval.seed + s;
    cc.sampler = p.sampler.make(cc.seed);
    const CompositionResult r = eval_composition(t.ck.model, test_scenes, cc);
    write_composition_csv(out / fmt("tv_composition_seed%zu.csv", s), r);
    detail += fmt("%sseed %zu:", s ? "; " : "", s);
    for (std::size_t l = 0; l < r.levels.size(); ++l) {
      const auto& lv = r.levels[l];
      detail += fmt(" %zu->%zu/%zu", lv.clutter, lv.implicit_correct, lv.rejection_correct);
      if (l > 0 && !(lv.ratio() >= r.levels[l - 1].ratio())) monotone = false;
    }
    const double top = r.levels.back().ratio();
    if (!(top >= kCompositionRatio)) top_ok = false;
  }
  report("composition: implicit at least 2x rejection at highest clutter",
         {top_ok, "implicit/rejection correct per clutter level, " + detail});
  report("composition: advantage non-decreasing in clutter", {monotone, detail});
}

Outcome determinism(const fs::path& out) {
  // Small pipeline run twice from scratch.
  auto run = [&](const fs::path& dir) {
    fs::create_directories(dir);
    auto spec = ScenarioSpec::defaults(ScenarioKind::Dining);
    spec.train_n = 6;
    spec.test_n = 2;
    const Generated gen = generate(spec, 77);
    save_dataset(dir / "dataset.jsonl", gen.scenes);
    write_text(dir / "ground_truth.json", to_json(gen.truth).dump(2) + "\n");
    Preset p = preset_for(ScenarioKind::Dining);
    p.energy.hidden = 8;
    p.train.iterations = 4;
    p.train.chain_steps = 10;
    const Trained t = fit(p, Variant::Relative, gen);
    t.ck.model.save(dir / "checkpoint.json", t.ck.metadata());
    write_loss_trace(dir / "loss.csv", t.ck.loss_history);
    MissingConfig mc = missing_config(p);
    mc.restarts = 2;
    mc.sampler = LangevinConfig::annealed(20, 3);
    const auto test_scenes = filter_split(gen.scenes, Split::Test);
    write_missing_csv(dir / "missing.csv", eval_missing(t.ck.model, "SceneScore", test_scenes, gen.truth, mc));
  };
  run(out / "det_a");
  run(out / "det_b");
  std::vector<std::string> differing;
  const char* files[] = {"dataset.jsonl", "ground_truth.json", "checkpoint.json", "loss.csv", "missing.csv"};
  for (const char* f : files) {
    const std::string a = slurp(out / "det_a" / f), b = slurp(out / "det_b" / f);
    if (a.empty() || a != b) differing.push_back(f);
  }
  std::string detail = differing.empty() ? "5 files byte-identical" : "differs:";
  for (const auto& f : differing) detail += " " + f;
  return {differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string out = "acceptance_artifacts";
  std::vector<std::string> only;
  app.add_option("--out", out, "artifact directory");
  app.add_option("--only", only, "groups to run: core, dining, ordering, composition, determinism");
  CLI11_PARSE(app, argc, argv);
  const fs::path dir(out);
  fs::create_directories(dir);
  auto wanted = [&](const std::string& g) {
    return only.empty() || std::find(only.begin(), only.end(), g) != only.end();
  };

  if (wanted("core")) {
    report("gradient check", gradient_check());
    report("loss arithmetic", loss_arithmetic());
    report("symmetry suite", symmetry_suite());
    report("langevin quadratic", langevin_check());
  }
  if (wanted("determinism")) report("determinism", determinism(dir));
  if (wanted("dining")) dining(dir);
  if (wanted("ordering")) ordering(dir);
  if (wanted("composition")) composition(dir);
  std::printf("%d failing\n", failures);
  return failures == 0 ? 0 : 1;
}
