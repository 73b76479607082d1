#include "coroseg/runner.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <torch/version.h>

#include "coroseg/errors.hpp"
#include "coroseg/report.hpp"
#include "coroseg/volume_io.hpp"

namespace coroseg {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(fmt::format("'{}' must be an object", where));
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(fmt::format("unknown key '{}' in '{}'", key, where));
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  return p.is_relative() && !base.empty() ? (base / p).lexically_normal() : p;
}

std::optional<std::filesystem::path> find_volume_file(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* ext : {".nii.gz", ".nii", ".nrrd"}) {
    auto p = dir / (stem + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return std::nullopt;
}

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

std::vector<std::filesystem::path> case_directories(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("dataset directory holds no cases: " + root.string());
  return dirs;
}

std::pair<Volume, Mask> read_case_dir(const std::filesystem::path& dir) {
  const auto image = find_volume_file(dir, "image");
  const auto label = find_volume_file(dir, "label");
  if (!image) throw DataError("case " + dir.string() + " has no image.{nii,nii.gz,nrrd}");
  if (!label) throw DataError("case " + dir.string() + " has no label.{nii,nii.gz,nrrd}");
  Volume v = load_volume(*image);
  Mask m = load_mask(*label);
  if (!(v.dims() == m.dims())) {
    throw DataError(fmt::format("case {}: image dims {} vs label dims {}", dir.string(), to_string(v.dims()),
                                to_string(m.dims())));
  }
  return {std::move(v), std::move(m)};
}

PhantomSpec phantom_case_spec(const PhantomSet& set, int i) {
  PhantomSpec spec = set.spec;
  spec.seed = set.first_seed + static_cast<std::uint64_t>(i);
  return spec;
}

std::string phantom_id(const PhantomSet& set, int i) { return fmt::format("{}{:03d}", set.prefix, i); }

ModelSpec parse_combination(const json& j, double width) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    const auto dash = name.find('-');
    if (dash == std::string::npos) {
      throw ConfigError(fmt::format("combination '{}' is not of the form Encoder-Decoder", name));
    }
    return make_spec(parse_encoder_family(name.substr(0, dash)), parse_decoder_family(name.substr(dash + 1)), width);
  }
  check_keys(j, {"encoder", "decoder"}, "combinations[]");
  return make_spec(parse_encoder_family(j.at("encoder").get<std::string>()),
                   parse_decoder_family(j.at("decoder").get<std::string>()), width);
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

PhantomSet parse_phantom_set(const json& j) {
  try {
    check_keys(j, {"count", "first_seed", "prefix", "dims", "spacing", "n_branches", "radius_range", "vessel",
                   "background"},
               "phantoms");
    PhantomSet set;
    read(j, "count", set.count);
    read(j, "first_seed", set.first_seed);
    read(j, "prefix", set.prefix);
    if (j.contains("dims")) {
      const auto d = j.at("dims").get<std::array<std::int64_t, 3>>();
      set.spec.dims = {d[0], d[1], d[2]};
    }
    if (j.contains("spacing")) {
      const auto s = j.at("spacing").get<std::array<double, 3>>();
      set.spec.spacing = {s[0], s[1], s[2]};
    }
    read(j, "n_branches", set.spec.n_branches);
    if (j.contains("radius_range")) {
      const auto r = j.at("radius_range").get<std::array<double, 2>>();
      set.spec.r_min = r[0];
      set.spec.r_max = r[1];
    }
    for (auto [key, model] : {std::pair{"vessel", &set.spec.vessel}, std::pair{"background", &set.spec.background}}) {
      if (!j.contains(key)) continue;
      check_keys(j.at(key), {"mean", "std"}, fmt::format("phantoms.{}", key));
      read(j.at(key), "mean", model->mean);
      read(j.at(key), "std", model->std);
    }
    if (set.count < 1) throw ConfigError(fmt::format("phantom count must be positive, got {}", set.count));
    try {
      validate(set.spec);
    } catch (const ValidationError& e) {
      throw ConfigError(std::string("invalid phantom spec: ") + e.what());
    }
    return set;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("phantoms: ") + e.what());
  }
}

json to_json(const PhantomSet& set) {
  const auto& s = set.spec;
  return {{"count", set.count},
          {"first_seed", set.first_seed},
          {"prefix", set.prefix},
          {"dims", {s.dims.nx, s.dims.ny, s.dims.nz}},
          {"spacing", {s.spacing.sx, s.spacing.sy, s.spacing.sz}},
          {"n_branches", s.n_branches},
          {"radius_range", {s.r_min, s.r_max}},
          {"vessel", {{"mean", s.vessel.mean}, {"std", s.vessel.std}}},
          {"background", {{"mean", s.background.mean}, {"std", s.background.std}}}};
}

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  try {
    check_keys(j, {"dataset", "combinations", "width_mult", "folds", "seed", "deterministic", "save_predictions",
                   "output_dir", "window", "train", "stitch"},
               "config");
    ExperimentConfig cfg;
    if (!j.contains("dataset")) throw ConfigError("config lacks a 'dataset' entry");
    const auto& ds = j.at("dataset");
    check_keys(ds, {"phantoms", "directory"}, "dataset");
    if (ds.contains("phantoms") == ds.contains("directory")) {
      throw ConfigError("dataset must name exactly one of 'phantoms' or 'directory'");
    }
    if (ds.contains("phantoms")) cfg.dataset.phantoms = parse_phantom_set(ds.at("phantoms"));
    if (ds.contains("directory")) cfg.dataset.directory = resolve(ds.at("directory").get<std::string>(), base_dir);

    read(j, "width_mult", cfg.width_mult);
    if (!(cfg.width_mult > 0.0)) throw ConfigError(fmt::format("width_mult must be positive, got {}", cfg.width_mult));
    read(j, "folds", cfg.folds);
    if (cfg.folds < 2) throw ConfigError(fmt::format("folds must be at least 2, got {}", cfg.folds));
    read(j, "seed", cfg.seed);
    read(j, "deterministic", cfg.deterministic);
    read(j, "save_predictions", cfg.save_predictions);
    if (j.contains("output_dir")) cfg.output_dir = resolve(j.at("output_dir").get<std::string>(), base_dir);
    else cfg.output_dir = resolve(cfg.output_dir, base_dir);

    const json combos = j.value("combinations", json("all"));
    if (combos.is_string() && combos.get<std::string>() == "all") {
      cfg.combinations = list_combinations(cfg.width_mult);
    } else if (combos.is_array() && !combos.empty()) {
      std::set<std::string> seen;
      for (const auto& c : combos) {
        ModelSpec spec = parse_combination(c, cfg.width_mult);
        if (!seen.insert(spec.name()).second) throw ConfigError("combination listed twice: " + spec.name());
        cfg.combinations.push_back(spec);
      }
    } else {
      throw ConfigError("'combinations' must be \"all\" or a nonempty list");
    }

    if (j.contains("window")) {
      check_keys(j.at("window"), {"lo", "hi"}, "window");
      read(j.at("window"), "lo", cfg.window_lo);
      read(j.at("window"), "hi", cfg.window_hi);
    }
    if (!(cfg.window_lo < cfg.window_hi)) {
      throw ConfigError(fmt::format("window needs lo < hi, got [{}, {}]", cfg.window_lo, cfg.window_hi));
    }

    auto& t = cfg.train;
    if (j.contains("train")) {
      const auto& jt = j.at("train");
      check_keys(jt, {"epochs", "steps_per_epoch", "batch_size", "learning_rate", "dice_w", "ce_w", "fg_bias",
                      "augment"},
                 "train");
      read(jt, "epochs", t.epochs);
      read(jt, "steps_per_epoch", t.steps_per_epoch);
      read(jt, "batch_size", t.batch_size);
      read(jt, "learning_rate", t.learning_rate);
      read(jt, "dice_w", t.dice_w);
      read(jt, "ce_w", t.ce_w);
      read(jt, "fg_bias", t.fg_bias);
      if (jt.contains("augment")) {
        check_keys(jt.at("augment"), {"p_flip", "p_rot", "seed"}, "train.augment");
        read(jt.at("augment"), "p_flip", t.augment.p_flip);
        read(jt.at("augment"), "p_rot", t.augment.p_rot);
        read(jt.at("augment"), "seed", t.augment.seed);
      }
    }
    if (j.contains("stitch")) {
      check_keys(j.at("stitch"), {"stride", "threshold", "batch"}, "stitch");
      read(j.at("stitch"), "stride", t.stitch.stride);
      read(j.at("stitch"), "threshold", t.stitch.threshold);
      read(j.at("stitch"), "batch", t.stitch.batch);
    }
    t.seed = cfg.seed;
    try {
      t.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_config(j, std::filesystem::absolute(path).parent_path());
}

json to_json(const ExperimentConfig& cfg) {
  json dataset = json::object();
  if (cfg.dataset.phantoms) dataset["phantoms"] = to_json(*cfg.dataset.phantoms);
  if (cfg.dataset.directory) dataset["directory"] = cfg.dataset.directory->string();
  json combos = json::array();
  for (const auto& c : cfg.combinations) combos.push_back(c.name());
  const auto& t = cfg.train;
  return {{"dataset", dataset},
          {"combinations", combos},
          {"width_mult", cfg.width_mult},
          {"folds", cfg.folds},
          {"seed", cfg.seed},
          {"deterministic", cfg.deterministic},
          {"save_predictions", cfg.save_predictions},
          {"output_dir", cfg.output_dir.string()},
          {"window", {{"lo", cfg.window_lo}, {"hi", cfg.window_hi}}},
          {"train",
           {{"epochs", t.epochs},
            {"steps_per_epoch", t.steps_per_epoch},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"dice_w", t.dice_w},
            {"ce_w", t.ce_w},
            {"fg_bias", t.fg_bias},
            {"augment", {{"p_flip", t.augment.p_flip}, {"p_rot", t.augment.p_rot}, {"seed", t.augment.seed}}}}},
          {"stitch", {{"stride", t.stitch.stride}, {"threshold", t.stitch.threshold}, {"batch", t.stitch.batch}}}};
}

std::vector<Case> load_dataset(const DatasetSource& source, double window_lo, double window_hi) {
  std::vector<Case> cases;
  if (source.phantoms) {
    const auto& set = *source.phantoms;
    for (int i = 0; i < set.count; ++i) {
      Phantom ph = generate_phantom(phantom_case_spec(set, i));
      cases.push_back({phantom_id(set, i), window_normalize(ph.image, window_lo, window_hi), std::move(ph.label),
                       std::nullopt});
    }
    return cases;
  }
  if (!source.directory) throw DataError("dataset source is empty");
  for (const auto& dir : case_directories(*source.directory)) {
    auto [image, label] = read_case_dir(dir);
    Case c{dir.filename().string(), window_normalize(image, window_lo, window_hi), std::move(label), std::nullopt};
    if (std::ifstream tag(dir / "class.txt"); tag) {
      std::string text((std::istreambuf_iterator<char>(tag)), std::istreambuf_iterator<char>());
      c.cls = trim(text);
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

std::pair<Volume, Mask> load_case(const DatasetSource& source, const std::string& case_id) {
  if (source.phantoms) {
    const auto& set = *source.phantoms;
    for (int i = 0; i < set.count; ++i) {
      if (phantom_id(set, i) != case_id) continue;
      Phantom ph = generate_phantom(phantom_case_spec(set, i));
      return {std::move(ph.image), std::move(ph.label)};
    }
    throw DataError("no phantom case named " + case_id);
  }
  if (!source.directory) throw DataError("dataset source is empty");
  const auto dir = *source.directory / case_id;
  if (!std::filesystem::is_directory(dir)) throw DataError("no case directory " + dir.string());
  return read_case_dir(dir);
}

std::vector<std::string> write_phantoms(const PhantomSet& set, const std::filesystem::path& out_dir) {
  std::vector<std::string> ids;
  for (int i = 0; i < set.count; ++i) {
    const std::string id = phantom_id(set, i);
    const Phantom ph = generate_phantom(phantom_case_spec(set, i));
    std::filesystem::create_directories(out_dir / id);
    save_volume(ph.image, out_dir / id / "image.nii.gz");
    save_mask(ph.label, out_dir / id / "label.nii.gz");
    ids.push_back(id);
  }
  return ids;
}

std::filesystem::path run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  if (cfg.combinations.empty()) throw ConfigError("no combinations requested");
  try {
    cfg.train.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (cfg.deterministic) enable_deterministic_mode();

  const std::vector<Case> dataset = load_dataset(cfg.dataset, cfg.window_lo, cfg.window_hi);
  if (dataset.size() < static_cast<std::size_t>(cfg.folds)) {
    throw DataError(fmt::format("{} cases cannot fill {} folds", dataset.size(), cfg.folds));
  }
  std::vector<std::string> ids, tags;
  for (const auto& c : dataset) {
    ids.push_back(c.id);
    if (c.cls) tags.push_back(*c.cls);
  }
  const bool stratify = !tags.empty() && tags.size() == ids.size();
  const FoldSplit folds = make_folds(ids, stratify ? std::optional(tags) : std::nullopt, cfg.folds, cfg.seed);

  const auto& out = cfg.output_dir;
  std::filesystem::create_directories(out);
  json fold_map = json::object();
  for (std::size_t i = 0; i < ids.size(); ++i) fold_map[ids[i]] = folds.fold_of[i];
  const json manifest{{"config", to_json(cfg)},
                      {"seed", cfg.seed},
                      {"versions", {{"coroseg", COROSEG_VERSION}, {"libtorch", TORCH_VERSION}, {"compiler", __VERSION__}}},
                      {"stratified", folds.stratified},
                      {"folds", fold_map}};
  write_json(manifest, out / "manifest.json");

  std::vector<CVReport> reports;
  for (const auto& spec : cfg.combinations) {
    const std::string name = spec.name();
    const auto dir = out / name;
    std::filesystem::create_directories(dir);
    say(fmt::format("{}: {} folds over {} cases", name, folds.k, dataset.size()));
    CVHooks hooks;
    hooks.on_epoch = [&](int fold, const CurvePoint& p) {
      say(fmt::format("{} fold {} epoch {}: loss {:.4f} val dice {:.4f}", name, fold, p.epoch, p.loss, p.val_dice));
    };
    hooks.on_fold = [&](int fold, SegModelImpl& model, const FoldResult& r) {
      save_checkpoint(model, r.best.seed, dir / "checkpoints" / fmt::format("{}-fold{}-best.pt", name, fold));
      write_curve_csv(r.curve, dir / fmt::format("curve-fold{}.csv", fold));
    };
    if (cfg.save_predictions) {
      hooks.on_prediction = [&](int, const Case& c, const Prediction& p) {
        std::filesystem::create_directories(dir / "predictions");
        save_mask(p.mask, dir / "predictions" / (c.id + ".nii.gz"));
      };
    }
    CVReport report = cross_validate(spec, dataset, cfg.train, folds, hooks);
    write_metrics_csv(report, dir / "metrics.csv");
    say(fmt::format("{}: dice {}", name, format_moments(report.dice)));
    reports.push_back(std::move(report));
  }
  write_aggregate_csv(reports, out / "aggregate.csv");
  write_tables(reports, out);
  return out;
}

std::filesystem::path run_experiment(const std::filesystem::path& config_path, const ProgressFn& progress) {
  return run_experiment(load_config(config_path), progress);
}

OverlayResult render_case(const std::filesystem::path& results_dir, const std::string& case_id,
                          const std::optional<std::string>& combination) {
  const auto manifest_path = results_dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FileNotFound("no run manifest at " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: {}", manifest_path.string(), e.what()));
  }
  if (!manifest.contains("config")) throw FormatError(manifest_path.string() + " lacks a config entry");
  const ExperimentConfig cfg = parse_config(manifest.at("config"));

  std::optional<std::string> chosen;
  std::vector<std::string> candidates;
  if (combination) {
    candidates.push_back(parse_combination(json(*combination), cfg.width_mult).name());
  } else {
    for (const auto& spec : list_combinations()) candidates.push_back(spec.name());
  }
  for (const auto& name : candidates) {
    if (std::filesystem::exists(results_dir / name / "predictions" / (case_id + ".nii.gz"))) {
      chosen = name;
      break;
    }
  }
  if (!chosen) throw DataError(fmt::format("no prediction for case '{}' under {}", case_id, results_dir.string()));
  const Mask prediction = load_mask(results_dir / *chosen / "predictions" / (case_id + ".nii.gz"));
  const auto [image, label] = load_case(cfg.dataset, case_id);
  return render_overlay(image, label, prediction, results_dir / "renders" / *chosen / case_id, case_id);
}

}  // namespace coroseg
