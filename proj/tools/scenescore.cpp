// scenescore: generate scenes, train an energy model, sample arrangements,
// run the experiments and render cost fields.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <algorithm>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "scenescore/evalharness.hpp"
#include "scenescore/heatmap.hpp"
#include "scenescore/presets.hpp"
#include "scenescore/synthgen.hpp"
#include "scenescore/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scenescore;

namespace {

struct Flags {
  std::string scenario;
  std::optional<std::size_t> train_n, test_n;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string data, config, ckpt, variant;
  std::optional<std::size_t> steps, restarts, budget, iterations;
  std::vector<std::size_t> clutter;
  std::vector<std::string> fixed;
  std::string scene, object;
  std::size_t grid = 64;
};

json read_json(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FileError("cannot read '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError(0, p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json config_file(const Flags& f) {
  if (f.config.empty()) return json::object();
  json j = read_json(f.config);
  if (!j.is_object()) throw SchemaError(0, f.config + ": top level must be an object");
  return j;
}

json section(const json& cfg, const char* key) {
  const json s = cfg.value(key, json::object());
  if (!s.is_object()) throw SchemaError(0, std::string("config section '") + key + "' must be an object");
  return s;
}

// Overlays `over` onto `base`, key by key, recursing into objects.
json merged(json base, const json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      base[it.key()] = merged(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
  return base;
}

struct DataDir {
  fs::path dir;
  std::vector<Scene> scenes;
  GroundTruth truth;
};

// --data names a directory written by `gen` or a dataset file inside one.
DataDir load_data(const Flags& f) {
  if (f.data.empty()) throw InvalidArgument("--data is required");
  DataDir d;
  const fs::path p(f.data);
  d.dir = fs::is_directory(p) ? p : p.parent_path();
  const fs::path file = fs::is_directory(p) ? p / "dataset.jsonl" : p;
  d.scenes = load_dataset(file);
  d.truth = ground_truth_from_json(read_json(d.dir / "ground_truth.json"));
  return d;
}

const Scene& find_scene(const std::vector<Scene>& scenes, const std::string& id) {
  for (const auto& s : scenes)
    if (s.scene_id == id) return s;
  throw NotFoundError("scene '" + id + "' is not in the dataset");
}

std::vector<Scene> test_scenes(const DataDir& d, const std::string& only) {
  if (!only.empty()) return {find_scene(d.scenes, only)};
  return filter_split(d.scenes, Split::Test);
}

// Sampler from the preset, then the config "sampler" section, then --steps.
LangevinConfig sampler_config(const Preset& p, const json& cfg, const Flags& f, std::uint64_t seed, json& echo) {
  json s = merged(to_json(p.sampler), section(cfg, "sampler"));
  if (f.steps) s["steps"] = *f.steps;
  echo["sampler"] = s;
  SamplerSettings st;
  st.steps = s.at("steps").get<std::size_t>();
  st.step_start = s.at("step_start").get<double>();
  st.step_end = s.at("step_end").get<double>();
  st.temp_start = s.at("temp_start").get<double>();
  st.temp_end = s.at("temp_end").get<double>();
  st.clip_norm = s.at("clip_norm").get<double>();
  return st.make(seed);
}

std::string compact(const json& j) { return j.dump(); }

// ---------------------------------------------------------------------------

int cmd_gen(const Flags& f) {
  if (f.scenario.empty()) throw InvalidArgument("--scenario is required");
  const json cfg = config_file(f);
  json s = section(cfg, "scenario");
  s["scenario"] = f.scenario;
  if (f.train_n) s["train_n"] = *f.train_n;
  if (f.test_n) s["test_n"] = *f.test_n;
  if (!f.clutter.empty()) s["tv"]["clutter_counts"] = f.clutter;
  const ScenarioSpec spec = scenario_spec_from_json(s);
  const std::uint64_t seed = f.seed.value_or(cfg.value("seed", std::uint64_t{0}));
  const Generated g = generate(spec, seed);
  fs::create_directories(f.out);
  save_dataset(fs::path(f.out) / "dataset.jsonl", g.scenes);
  write_json(fs::path(f.out) / "scenario.json", {{"seed", seed}, {"spec", to_json(spec)}});
  write_json(fs::path(f.out) / "ground_truth.json", to_json(g.truth));
  std::printf("wrote %zu scenes to %s\n", g.scenes.size(), f.out.c_str());
  return 0;
}

int cmd_train(const Flags& f) {
  const DataDir d = load_data(f);
  const json cfg = config_file(f);
  const Preset p = preset_for(d.truth.spec.kind);
  json energy_j = merged(to_json(p.energy), section(cfg, "energy"));
  json train_j = merged(to_json(p.train), section(cfg, "train"));
  if (f.seed) train_j["seed"] = *f.seed;
  if (f.iterations) train_j["iterations"] = *f.iterations;
  if (f.steps) train_j["chain_steps"] = *f.steps;
  const std::string variant = !f.variant.empty() ? f.variant : cfg.value("variant", std::string("relative"));
  const EnergyConfig ec = energy_config_from_json(energy_j);
  const TrainConfig tc = train_config_from_json(train_j);
  const Variant v = variant_from_string(variant);
  const std::uint64_t init_seed = cfg.value("init_seed", tc.seed + 1);

  const json echo = {{"command", "train"},       {"data", f.data},  {"variant", to_string(v)},
                     {"energy", to_json(ec)},    {"train", to_json(tc)}, {"init_seed", init_seed}};
  if (d.scenes.empty()) throw InvalidArgument("empty training split");
  const EnergyModel model(ec, v, d.scenes.front().feature_dim, d.truth.spec.workspace_half_extent_cm, init_seed);
  const Checkpoint ck = train(model, d.scenes, tc, [&](std::size_t it, double loss) {
    if (it % 50 == 0 || it + 1 == tc.iterations) std::fprintf(stderr, "iteration %zu loss %.6f\n", it, loss);
  });
  fs::create_directories(f.out);
  json meta = ck.metadata();
  meta["run_config"] = echo;
  ck.model.save(fs::path(f.out) / "checkpoint.json", meta);
  write_loss_trace(fs::path(f.out) / "loss.csv", ck.loss_history, compact(echo));
  write_json(fs::path(f.out) / "train_config.json", echo);
  std::printf("trained %zu iterations, final loss %.6f\n", ck.iterations,
              ck.loss_history.empty() ? 0.0 : ck.loss_history.back());
  return 0;
}

int cmd_sample(const Flags& f) {
  if (f.ckpt.empty()) throw InvalidArgument("--ckpt is required");
  const DataDir d = load_data(f);
  const EnergyModel model = EnergyModel::load(f.ckpt);
  const json cfg = config_file(f);
  const Preset p = preset_for(d.truth.spec.kind);
  const std::uint64_t seed = f.seed.value_or(cfg.value("seed", std::uint64_t{0}));
  json echo = {{"command", "sample"}, {"data", f.data}, {"ckpt", f.ckpt}, {"seed", seed}, {"fixed", f.fixed}};
  const LangevinConfig lc = sampler_config(p, cfg, f, seed, echo);
  const std::size_t chains = f.restarts.value_or(section(cfg, "eval").value("restarts", std::size_t{1}));
  echo["chains"] = chains;

  std::string csv = "# " + compact(echo) + "\nscene_id,chain,object_id,x,y,theta,energy\n";
  for (const auto& scene : test_scenes(d, f.scene)) {
    const SceneGraph g = build_graph(scene);
    const FixedMask mask = mask_from_ids(g, f.fixed);
    const EnergyFunction fn(model, g);
    for (std::size_t c = 0; c < chains; ++c) {
      const ChainResult r = langevin_sample(fn, g, lc, mask, {}, c);
      for (std::size_t i = 0; i < g.size(); ++i)
        csv += scene.scene_id + "," + std::to_string(c) + "," + g.nodes()[i].id + "," + format_double(r.poses[i].x) +
               "," + format_double(r.poses[i].y) + "," + format_double(r.poses[i].theta) + "," +
               format_double(r.final_energy) + "\n";
    }
  }
  fs::create_directories(f.out);
  write_text(fs::path(f.out) / "samples.csv", csv);
  std::printf("wrote %s\n", (fs::path(f.out) / "samples.csv").c_str());
  return 0;
}

int cmd_eval(const Flags& f) {
  if (f.ckpt.empty()) throw InvalidArgument("--ckpt is required");
  const DataDir d = load_data(f);
  const EnergyModel model = EnergyModel::load(f.ckpt);
  const json cfg = config_file(f);
  const Preset p = preset_for(d.truth.spec.kind);
  const json ev = merged(to_json(p.eval), section(cfg, "eval"));
  const std::uint64_t seed = f.seed.value_or(ev.value("seed", std::uint64_t{0}));
  json echo = {{"command", "eval"}, {"data", f.data}, {"ckpt", f.ckpt}, {"seed", seed}};
  const LangevinConfig lc = sampler_config(p, cfg, f, seed, echo);
  const auto tests = test_scenes(d, f.scene);
  const fs::path out(f.out);
  fs::create_directories(out);
  json summary;

  switch (d.truth.spec.kind) {
    case ScenarioKind::Dining: {
      MissingConfig mc;
      mc.restarts = f.restarts.value_or(ev.at("restarts").get<std::size_t>());
      mc.random_samples = ev.at("random_samples").get<std::size_t>();
      mc.sampler = lc;
      mc.seed = seed;
      echo["restarts"] = mc.restarts;
      echo["random_samples"] = mc.random_samples;
      const std::string method = model.variant() == Variant::Relative ? "SceneScore" : "SceneScore-Abs";
      MissingObjectResult r = eval_missing(model, method, tests, d.truth, mc);
      const auto train_scenes = filter_split(d.scenes, Split::Train);
      const auto base = eval_missing_baselines(train_scenes, tests, d.truth, mc);
      r.records.insert(r.records.end(), base.records.begin(), base.records.end());
      write_missing_csv(out / "missing.csv", r, compact(echo));
      write_missing_table_csv(out / "missing_table.csv", r, compact(echo));
      summary = missing_summary_json(r);
      for (const auto& s : r.summary())
        if (s.class_name == "mean")
          std::printf("%-14s t = %.2f +- %.2f cm\n", s.method.c_str(), s.t_mean, s.t_sd);
      break;
    }
    case ScenarioKind::OrderingClassSize:
    case ScenarioKind::OrderingAllSize:
    case ScenarioKind::OrderingUnseen: {
      OrderingConfig oc;
      oc.restarts = f.restarts.value_or(ev.at("ordering_restarts").get<std::size_t>());
      oc.sampler = lc;
      oc.seed = seed;
      echo["restarts"] = oc.restarts;
      const OrderingResult r = eval_ordering(model, tests, d.truth, oc);
      write_ordering_csv(out / "ordering.csv", r, compact(echo));
      summary = ordering_summary_json(r);
      std::printf("correct order %.3f, position error %.2f +- %.2f cm\n", r.fraction_correct(), r.mean_error(),
                  r.sd_error());
      break;
    }
    case ScenarioKind::Tv: {
      CompositionConfig cc;
      cc.budget = f.budget.value_or(ev.at("budget").get<std::size_t>());
      cc.alignment_threshold_cm = ev.at("alignment_threshold_cm").get<double>();
      cc.symmetry_threshold_cm = ev.at("symmetry_threshold_cm").get<double>();
      cc.sampler = lc;
      cc.seed = seed;
      std::vector<Scene> chosen;
      for (const auto& s : tests)
        if (f.clutter.empty() || std::find(f.clutter.begin(), f.clutter.end(), clutter_count(s)) != f.clutter.end())
          chosen.push_back(s);
      echo["budget"] = cc.budget;
      echo["alignment_threshold_cm"] = cc.alignment_threshold_cm;
      echo["symmetry_threshold_cm"] = cc.symmetry_threshold_cm;
      echo["clutter"] = f.clutter;
      const CompositionResult r = eval_composition(model, chosen, cc);
      write_composition_csv(out / "composition.csv", r, compact(echo));
      summary = composition_summary_json(r);
      for (const auto& l : r.levels)
        std::printf("clutter %zu: implicit %zu, rejection %zu\n", l.clutter, l.implicit_correct, l.rejection_correct);
      break;
    }
  }
  summary["config"] = echo;
  write_json(out / "summary.json", summary);
  return 0;
}

int cmd_heatmap(const Flags& f) {
  if (f.ckpt.empty()) throw InvalidArgument("--ckpt is required");
  if (f.scene.empty() || f.object.empty()) throw InvalidArgument("--scene and --object are required");
  const DataDir d = load_data(f);
  const EnergyModel model = EnergyModel::load(f.ckpt);
  const Scene& scene = find_scene(d.scenes, f.scene);
  const Heatmap h = energy_heatmap(model, scene, f.object, f.grid);
  const json echo = {{"command", "heatmap"}, {"data", f.data}, {"ckpt", f.ckpt},
                     {"scene", f.scene},     {"object", f.object}, {"grid", f.grid}};
  fs::create_directories(f.out);
  write_heatmap_csv(fs::path(f.out) / "heatmap.csv", h, compact(echo));
  std::string pgm = heatmap_pgm(h);
  pgm.insert(pgm.find('\n') + 1, "# " + compact(echo) + "\n");
  write_text(fs::path(f.out) / "heatmap.pgm", pgm);
  const Pose m = h.argmin();
  std::printf("minimum at (%.2f, %.2f)\n", m.x, m.y);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned scene arrangement costs: generation, training, sampling and evaluation"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* c) {
    c->add_option("--seed", f.seed, "Random seed");
    c->add_option("--out", f.out, "Output directory");
    c->add_option("--config", f.config, "JSON config file; flags take precedence");
  };
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  common(gen);
  gen->add_option("--scenario", f.scenario, "dining | ordering-class-size | ordering-all-size | ordering-unseen | tv")
      ->required();
  gen->add_option("--train-n", f.train_n, "Training scenes");
  gen->add_option("--test-n", f.test_n, "Test scenes (per clutter level for tv)");
  gen->add_option("--clutter", f.clutter, "Clutter counts for tv test scenes");

  auto* tr = app.add_subcommand("train", "Train an energy model");
  common(tr);
  tr->add_option("--data", f.data, "Dataset directory or file")->required();
  tr->add_option("--variant", f.variant, "relative | absolute");
  tr->add_option("--iterations", f.iterations, "Training iterations");
  tr->add_option("--steps", f.steps, "Negative chain length");

  auto* sm = app.add_subcommand("sample", "Sample arrangements of test scenes");
  common(sm);
  sm->add_option("--data", f.data, "Dataset directory or file")->required();
  sm->add_option("--ckpt", f.ckpt, "Checkpoint")->required();
  sm->add_option("--scene", f.scene, "Only this scene");
  sm->add_option("--fixed", f.fixed, "Object ids held at their poses");
  sm->add_option("--steps", f.steps, "Langevin steps");
  sm->add_option("--restarts", f.restarts, "Chains per scene");

  auto* ev = app.add_subcommand("eval", "Run the experiment matching the dataset's scenario");
  common(ev);
  ev->add_option("--data", f.data, "Dataset directory or file")->required();
  ev->add_option("--ckpt", f.ckpt, "Checkpoint")->required();
  ev->add_option("--scene", f.scene, "Only this scene");
  ev->add_option("--steps", f.steps, "Langevin steps");
  ev->add_option("--restarts", f.restarts, "Chains per object (dining) or scene (ordering)");
  ev->add_option("--budget", f.budget, "Samples per method and clutter level (tv)");
  ev->add_option("--clutter", f.clutter, "Only these clutter levels (tv)");

  auto* hm = app.add_subcommand("heatmap", "Energy over a grid of one object's positions");
  common(hm);
  hm->add_option("--data", f.data, "Dataset directory or file")->required();
  hm->add_option("--ckpt", f.ckpt, "Checkpoint")->required();
  hm->add_option("--scene", f.scene, "Scene id")->required();
  hm->add_option("--object", f.object, "Object id")->required();
  hm->add_option("--grid", f.grid, "Cells per side");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) return cmd_gen(f);
    if (*tr) return cmd_train(f);
    if (*sm) return cmd_sample(f);
    if (*ev) return cmd_eval(f);
    if (*hm) return cmd_heatmap(f);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: schema: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
