// SPDX-License-Identifier: Apache-2.0
//
// statechange: synth | train | decode | classify | eval | pca-export
//
// Failures print one JSON line {"error": "..."} on stderr and exit nonzero.
// Worker count comes from STATECHANGE_THREADS (0 = single-threaded).

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "statechange/statechange.hpp"

namespace sc = statechange;
namespace io = statechange::io;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// synth

sc::LengthRange length_range(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 2) throw sc::Error(std::string(key) + " must be [min, max]");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

sc::SynthConfig synth_config(const json& j) {
  sc::SynthConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "num_categories") c.num_categories = v.get<std::size_t>();
    else if (key == "videos_per_category") c.videos_per_category = v.get<std::size_t>();
    else if (key == "noise_videos") c.noise_videos = v.get<std::size_t>();
    else if (key == "num_frames") c.num_frames = v.get<std::size_t>();
    else if (key == "dim") c.dim = v.get<std::size_t>();
    else if (key == "prototype_separation") c.prototype_separation = v.get<double>();
    else if (key == "feature_noise_sigma") c.feature_noise_sigma = v.get<double>();
    else if (key == "initial_block") c.initial_block = length_range(v, "initial_block");
    else if (key == "action_block") c.action_block = length_range(v, "action_block");
    else if (key == "end_block") c.end_block = length_range(v, "end_block");
    else if (key == "min_gap") c.min_gap = v.get<std::size_t>();
    else if (key == "confusable_pairs") {
      c.confusable_pairs.clear();
      for (const auto& p : v) c.confusable_pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
    }
    else if (key == "shared_background") c.shared_background = v.get<bool>();
    else if (key == "background_at_origin") c.background_at_origin = v.get<bool>();
    else if (key == "heldout_fraction") c.heldout_fraction = v.get<double>();
    else if (key == "fps") c.fps = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw sc::Error("unknown synth config key '" + key + "'");
  }
  return c;
}

int run_synth(const std::string& config_path, const fs::path& out_dir,
              std::optional<std::uint64_t> seed) {
  sc::SynthConfig cfg;
  if (!config_path.empty()) cfg = synth_config(json::parse(io::read_file(config_path)));
  if (seed) cfg.seed = *seed;
  const auto ds = sc::generate(cfg);

  io::DatasetManifest m;
  m.catalog = ds.catalog;
  m.annotations = "annotations.json";
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    const auto& v = ds.videos[i];
    const std::string rel = "features/" + v.id + ".fetv";
    io::write_features(out_dir / rel, v.frames);
    m.videos.push_back({v.id, v.label, v.fps, v.num_frames(), rel, ds.splits[i]});
  }
  io::write_annotations(out_dir / "annotations.json", ds.annotations);
  io::write_manifest(out_dir / "manifest.json", m);
  std::cout << json{{"manifest", (out_dir / "manifest.json").string()},
                    {"videos", ds.videos.size()},
                    {"categories", ds.catalog.size()}}
                   .dump()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// shared loading

struct Loaded {
  io::DatasetManifest manifest;
  std::vector<sc::VideoFeatures> videos;
};

Loaded load(const fs::path& manifest_path, const std::string& split) {
  Loaded l;
  l.manifest = io::read_manifest(manifest_path);
  l.videos = io::load_videos(manifest_path, l.manifest, split);
  const auto report = sc::validate_dataset(l.manifest.catalog, l.videos);
  for (const auto& v : report.videos)
    if (!v.ok) throw sc::Error("video '" + v.video_id + "' failed validation: " + v.reasons.front());
  return l;
}

std::vector<sc::AnnotationTrack> load_annotations(const fs::path& manifest_path,
                                                  const io::DatasetManifest& m,
                                                  const std::string& override_path) {
  if (!override_path.empty()) return io::read_annotations(override_path);
  if (m.annotations.empty()) throw sc::Error("no annotations given and none in the manifest");
  return io::read_annotations(manifest_path.parent_path() / m.annotations);
}

/// Annotated subset of `videos`, with their tracks in the same order.
std::pair<std::vector<sc::VideoFeatures>, std::vector<sc::AnnotationTrack>> annotated(
    const std::vector<sc::VideoFeatures>& videos, const std::vector<sc::AnnotationTrack>& tracks) {
  std::unordered_map<std::string, const sc::AnnotationTrack*> by_id;
  for (const auto& t : tracks) by_id[t.video_id] = &t;
  std::pair<std::vector<sc::VideoFeatures>, std::vector<sc::AnnotationTrack>> out;
  for (const auto& v : videos) {
    const auto it = by_id.find(v.id);
    if (it == by_id.end() || it->second->intervals.empty()) continue;
    out.first.push_back(v);
    out.second.push_back(*it->second);
  }
  return out;
}

void check_model_fits(const io::Checkpoint& ck, const io::DatasetManifest& m) {
  if (!(ck.catalog == m.catalog))
    throw sc::Error("checkpoint catalog does not match the manifest catalog");
}

std::string default_eval_split(const io::DatasetManifest& m) {
  for (const auto& v : m.videos)
    if (v.split == "test") return "test";
  return "all";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string manifest, out, log, labels_dump;
  std::string arch = "joint2";
  std::string rules = "A,B,C,D,E";
  std::string state_background = "auto";
  std::string optimizer = "momentum-sgd";
  std::string weight_hook = "constant";
  std::string train_split = "train";
  std::string heldout_split = "test";
  double delta = 2.0, delta_prime = 60.0;
  std::size_t epochs = 50, batch = 8, hidden = 64, warmup = 5, max_labels = 25;
  double lr = 1e-4, adapter_lr = 1e-5, momentum = 0.9, l2 = 1e-3, action_scale = 0.2;
  std::optional<std::size_t> negatives;
  std::uint64_t seed = 0;
  bool no_adapter = false, freeze_adapter = false, per_category_best = false;
};

bool resolve_state_background(const std::string& mode, sc::Architecture arch,
                              const sc::RuleSet& rules) {
  if (mode == "on") return true;
  if (mode == "off") return false;
  if (mode != "auto") throw sc::Error("--state-background must be auto, on or off");
  switch (arch) {
    case sc::Architecture::Joint2: return true;
    case sc::Architecture::Joint1: return false;
    default: return rules.has(sc::LabelRule::D) || rules.has(sc::LabelRule::E);
  }
}

json counts_json(const std::array<std::size_t, 5>& counts) {
  json j = json::object();
  for (std::size_t k = 0; k < 5; ++k)
    j[std::string(sc::label_kind_name(static_cast<sc::LabelKind>(k)))] = counts[k];
  return j;
}

int run_train(const TrainArgs& a) {
  const fs::path manifest_path = a.manifest;
  auto data = load(manifest_path, a.train_split);
  if (data.videos.empty()) throw sc::Error("no training videos in split '" + a.train_split + "'");

  const auto arch = sc::parse_architecture(a.arch);
  sc::LabelRuleConfig rules;
  rules.rules = sc::RuleSet::parse(a.rules);
  rules.delta_seconds = a.delta;
  rules.delta_prime_seconds = a.delta_prime;
  rules.explicit_negatives_per_video = a.negatives;
  rules.seed = a.seed;
  rules.validate();

  sc::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_videos = a.batch;
  cfg.base_lr_heads = a.lr;
  cfg.base_lr_adapter = a.adapter_lr;
  cfg.warmup_epochs = std::min(a.warmup, a.epochs);
  cfg.momentum = a.momentum;
  cfg.l2_penalty_heads = a.l2;
  cfg.action_loss_scale = a.action_scale;
  cfg.max_labeled_frames_per_video = a.max_labels;
  cfg.freeze_adapter = a.freeze_adapter;
  cfg.per_category_best_epoch = a.per_category_best;
  cfg.seed = a.seed;
  if (a.optimizer == "plain-gd") cfg.optimizer = sc::OptimizerMode::PlainGd;
  else if (a.optimizer != "momentum-sgd") throw sc::Error("--optimizer must be momentum-sgd or plain-gd");
  if (a.weight_hook == "rank") cfg.weight_hook = sc::rank_weight();
  else if (a.weight_hook != "constant") throw sc::Error("--weight-hook must be constant or rank");

  std::string dump;
  if (!a.labels_dump.empty()) {
    cfg.label_observer = [&](std::size_t step, const sc::BatchLabels& b) {
      for (const auto& per : b.per_video)
        for (const auto& l : per) {
          auto j = io::label_to_json(l);
          j["rule"] = std::string(1, sc::rule_letter(l.rule));
          j["step"] = step;
          dump += j.dump();
          dump += '\n';
        }
    };
  }

  const sc::ModelOptions opts{resolve_state_background(a.state_background, arch, rules.rules),
                              !a.no_adapter};
  const auto params = sc::init_params(arch, data.manifest.catalog.size(),
                                      data.videos.front().dim(), a.hidden, a.seed, opts);

  std::vector<sc::VideoFeatures> held_videos;
  std::vector<sc::AnnotationTrack> held_tracks;
  std::optional<sc::HeldOut> heldout;
  if (a.heldout_split != "none") {
    const bool any = std::any_of(data.manifest.videos.begin(), data.manifest.videos.end(),
                                 [&](const auto& e) { return e.split == a.heldout_split; });
    if (any && !data.manifest.annotations.empty()) {
      auto held = io::load_videos(manifest_path, data.manifest, a.heldout_split);
      std::tie(held_videos, held_tracks) =
          annotated(held, load_annotations(manifest_path, data.manifest, ""));
      if (!held_videos.empty()) heldout = sc::HeldOut{held_videos, held_tracks};
    }
  }

  std::string log;
  const auto result = sc::fit(params, data.videos, cfg, rules, heldout, [&](const sc::EpochLog& e) {
    json j = {{"epoch", e.epoch},
              {"mean_loss", e.mean_loss},
              {"label_counts", counts_json(e.label_counts)},
              {"heldout_state_precision", nullptr},
              {"heldout_action_precision", nullptr},
              {"lr", e.lr},
              {"max_labeled_fraction", e.max_labeled_fraction}};
    if (e.heldout_state_precision) j["heldout_state_precision"] = *e.heldout_state_precision;
    if (e.heldout_action_precision) j["heldout_action_precision"] = *e.heldout_action_precision;
    log += j.dump() + "\n";
  });

  const fs::path out = a.out;
  io::write_checkpoint(out, result.params, data.manifest.catalog);
  fs::path log_path = a.log;
  if (log_path.empty()) {
    log_path = out;
    log_path += ".log.jsonl";
  }
  io::write_atomic(log_path, log);
  if (!a.labels_dump.empty()) io::write_atomic(a.labels_dump, dump);

  json summary = {{"checkpoint", out.string()}, {"log", log_path.string()}, {"epochs", result.log.size()}};
  summary["best_epoch"] = result.best_epoch ? json(*result.best_epoch) : json(nullptr);
  if (!result.per_category_best.empty()) {
    json pc = json::array();
    for (const auto& [c, b] : result.per_category_best)
      pc.push_back({{"category", data.manifest.catalog[c].name},
                    {"epoch", b.epoch},
                    {"state_precision", b.state},
                    {"action_precision", b.action}});
    summary["per_category_best"] = pc;
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// decode / classify / eval / pca-export

int run_decode(const std::string& ckpt, const std::string& manifest, const std::string& category,
               std::optional<double> threshold, const std::string& split, const std::string& out) {
  const auto ck = io::read_checkpoint(ckpt);
  const auto data = load(manifest, split);
  check_model_fits(ck, data.manifest);
  std::optional<std::size_t> forced;
  if (!category.empty()) {
    forced = ck.catalog.find(category);
    if (!forced)
      throw sc::Error("unknown category '" + category + "' (valid: " + ck.catalog.names_joined() + ")");
  }
  std::vector<std::vector<json>> rows(data.videos.size());
  sc::parallel_for(data.videos.size(), [&](std::size_t i) {
    const auto& v = data.videos[i];
    const auto scores = sc::forward(ck.params, v.frames);
    if (threshold) {
      for (auto& loc : sc::detect_multi(scores, *threshold)) {
        if (forced && loc.category != *forced) continue;
        loc.video_id = v.id;
        rows[i].push_back(io::localization_to_json(loc, ck.catalog));
      }
    } else {
      auto loc = sc::localize(scores, forced.value_or(v.label));
      loc.video_id = v.id;
      rows[i].push_back(io::localization_to_json(loc, ck.catalog));
    }
  });
  std::vector<json> flat;
  for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  io::write_atomic(out, io::to_jsonl(flat));
  return 0;
}

int run_classify(const std::string& ckpt, const std::string& manifest, const std::string& split,
                 const std::string& out) {
  const auto ck = io::read_checkpoint(ckpt);
  const auto data = load(manifest, split);
  check_model_fits(ck, data.manifest);
  std::vector<json> rows(data.videos.size());
  sc::parallel_for(data.videos.size(), [&](std::size_t i) {
    const auto& v = data.videos[i];
    const auto c = sc::classify(sc::forward(ck.params, v.frames));
    rows[i] = {{"video_id", v.id},
               {"category", c.category},
               {"category_name", ck.catalog[c.category].name},
               {"score", c.score},
               {"label", v.label}};
  });
  io::write_atomic(out, io::to_jsonl(rows));
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& manifest_arg,
             const std::string& annotations, const std::string& metrics, std::string split,
             const std::string& out) {
  const fs::path manifest_path = manifest_arg;
  const auto ck = io::read_checkpoint(ckpt);
  const auto m = io::read_manifest(manifest_path);
  if (split.empty()) split = default_eval_split(m);
  const auto data = load(manifest_path, split);
  check_model_fits(ck, data.manifest);
  const auto [videos, tracks] = annotated(data.videos, load_annotations(manifest_path, m, annotations));
  if (videos.empty()) throw sc::Error("no annotated videos in split '" + split + "'");

  std::vector<sc::FrameScores> scores(videos.size());
  sc::parallel_for(videos.size(), [&](std::size_t i) { scores[i] = sc::forward(ck.params, videos[i].frames); });

  json report = {{"split", split}, {"num_videos", videos.size()}};
  std::size_t pos = 0;
  while (pos <= metrics.size()) {
    const auto comma = metrics.find(',', pos);
    const std::string name = metrics.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (name == "precision") {
      std::vector<sc::Localization> preds(videos.size());
      for (std::size_t i = 0; i < videos.size(); ++i) {
        preds[i] = sc::localize(scores[i], videos[i].label);
        preds[i].video_id = videos[i].id;
      }
      const auto p = sc::precision_at_1(preds, tracks);
      report["state_precision"] = p.state;
      report["action_precision"] = p.action;
    } else if (name == "map") {
      std::vector<sc::Matrix> probs;
      for (std::size_t i = 0; i < videos.size(); ++i)
        probs.push_back(sc::category_track(scores[i], videos[i].label));
      report["map"] = sc::mean_average_precision(probs, tracks);
    } else if (name == "accuracy") {
      std::vector<std::size_t> labels;
      for (const auto& v : videos) labels.push_back(v.label);
      report["accuracy"] = sc::classification_accuracy(scores, labels);
    } else if (!name.empty()) {
      throw sc::Error("unknown metric '" + name + "' (valid: precision,map,accuracy)");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  io::write_atomic(out, report.dump(2) + "\n");
  return 0;
}

int run_pca(const std::string& ckpt, const std::string& manifest, const std::string& split,
            const std::string& out) {
  const auto ck = io::read_checkpoint(ckpt);
  const auto data = load(manifest, split);
  check_model_fits(ck, data.manifest);
  const auto pts = sc::pca_export(ck.params, data.videos);
  io::write_atomic(out, io::pca_to_csv(pts));
  return 0;
}

void fail(const std::string& msg) { std::cerr << json{{"error", msg}}.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object state and action localization from per-frame features"};
  app.require_subcommand(1);

  // synth
  std::string synth_config_path, synth_out;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with planted blocks");
  synth->add_option("--config", synth_config_path, "JSON generator config (defaults if omitted)");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed (overrides the config)");

  // train
  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Self-train a model on a manifest");
  train->add_option("--manifest", ta.manifest)->required();
  train->add_option("--arch", ta.arch, "independent|multiclf|joint1|joint2")->capture_default_str();
  train->add_option("--rules", ta.rules, "Enabled pseudo-label rules")->capture_default_str();
  train->add_option("--delta", ta.delta, "Neighborhood in seconds")->capture_default_str();
  train->add_option("--delta-prime", ta.delta_prime, "Background distance in seconds")->capture_default_str();
  train->add_option("--epochs", ta.epochs)->capture_default_str();
  train->add_option("--batch", ta.batch)->capture_default_str();
  train->add_option("--lr", ta.lr, "Head learning rate")->capture_default_str();
  train->add_option("--adapter-lr", ta.adapter_lr)->capture_default_str();
  train->add_option("--warmup", ta.warmup, "Warmup epochs")->capture_default_str();
  train->add_option("--momentum", ta.momentum)->capture_default_str();
  train->add_option("--l2", ta.l2, "L2 penalty on head parameters")->capture_default_str();
  train->add_option("--action-scale", ta.action_scale, "Loss weight of action labels")->capture_default_str();
  train->add_option("--max-labels", ta.max_labels, "Labeled frames per video")->capture_default_str();
  train->add_option("--hidden", ta.hidden, "Hidden width")->capture_default_str();
  train->add_option("--state-background", ta.state_background, "auto|on|off")->capture_default_str();
  train->add_flag("--no-adapter", ta.no_adapter, "Train heads on raw features");
  train->add_flag("--freeze-adapter", ta.freeze_adapter);
  train->add_option("--optimizer", ta.optimizer, "momentum-sgd|plain-gd")->capture_default_str();
  train->add_option("--weight-hook", ta.weight_hook, "constant|rank")->capture_default_str();
  train->add_option("--negatives-per-video", ta.negatives, "Rule E count for multiclf");
  train->add_option("--train-split", ta.train_split)->capture_default_str();
  train->add_option("--heldout-split", ta.heldout_split, "Split for per-epoch evaluation, or none")
      ->capture_default_str();
  train->add_flag("--per-category-best", ta.per_category_best,
                  "Also report the best held-out epoch of each category");
  train->add_option("--seed", ta.seed)->capture_default_str();
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--log", ta.log, "Epoch log (JSONL), default <out>.log.jsonl");
  train->add_option("--labels-dump", ta.labels_dump, "Write every step's pseudo labels (JSONL)");

  // decode
  std::string ckpt, manifest, out, category, split = "all", annotations, metrics = "precision,map,accuracy";
  std::optional<double> threshold;
  auto* decode = app.add_subcommand("decode", "Localize states and action per video");
  decode->add_option("--ckpt", ckpt)->required();
  decode->add_option("--manifest", manifest)->required();
  decode->add_option("--category", category, "Decode every video under this category");
  decode->add_option("--threshold", threshold, "Detect every category scoring above this");
  decode->add_option("--split", split)->capture_default_str();
  decode->add_option("--out", out)->required();

  auto* classify = app.add_subcommand("classify", "Most probable category per video");
  classify->add_option("--ckpt", ckpt)->required();
  classify->add_option("--manifest", manifest)->required();
  classify->add_option("--split", split)->capture_default_str();
  classify->add_option("--out", out)->required();

  std::string eval_split;
  auto* eval = app.add_subcommand("eval", "Precision, mAP and accuracy on annotated videos");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--annotations", annotations, "Defaults to the manifest's annotations");
  eval->add_option("--metrics", metrics)->capture_default_str();
  eval->add_option("--split", eval_split, "Defaults to test when present, else all");
  eval->add_option("--out", out)->required();

  auto* pca = app.add_subcommand("pca-export", "2-D PCA of the adapted features per video");
  pca->add_option("--ckpt", ckpt)->required();
  pca->add_option("--manifest", manifest)->required();
  pca->add_option("--split", split)->capture_default_str();
  pca->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail(e.what());
    return 2;
  }

  try {
    if (*synth) return run_synth(synth_config_path, synth_out, synth_seed);
    if (*train) return run_train(ta);
    if (*decode) return run_decode(ckpt, manifest, category, threshold, split, out);
    if (*classify) return run_classify(ckpt, manifest, split, out);
    if (*eval) return run_eval(ckpt, manifest, annotations, metrics, eval_split, out);
    if (*pca) return run_pca(ckpt, manifest, split, out);
  } catch (const std::exception& e) {
    fail(e.what());
    return 1;
  }
  return 1;
}
