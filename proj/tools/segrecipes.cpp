// Command-line surface for the segmentation training recipes. Every command
// is a thin composition of library operations; outputs are deterministic for
// a given config, so re-runs produce byte-identical artifacts.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seg/datagen.hpp"
#include "seg/digest.hpp"
#include "seg/ensemble.hpp"
#include "seg/error.hpp"
#include "seg/metrics.hpp"
#include "seg/model.hpp"
#include "seg/parallel.hpp"
#include "seg/swa.hpp"
#include "seg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  seg::require(in.good(), seg::ErrorKind::Io,
               "cannot open config file: " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    seg::raise(seg::ErrorKind::Io,
               "cannot parse " + path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  seg::require(out.good(), seg::ErrorKind::Io, "cannot open " + path.string());
  out << text;
  seg::require(out.good(), seg::ErrorKind::Io, "write failed: " + path.string());
}

std::vector<std::string> split_dotted(const std::string& key) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    if (dot == std::string::npos) {
      parts.push_back(key.substr(start));
      break;
    }
    parts.push_back(key.substr(start, dot - start));
    start = dot + 1;
  }
  return parts;
}

// Applies leftover "--key value" (or "--key=value") pairs onto the config.
// Dots address nested objects; values that parse as JSON are taken as JSON,
// anything else becomes a string.
void apply_overrides(json& config, const std::vector<std::string>& extras) {
  std::size_t i = 0;
  while (i < extras.size()) {
    std::string key = extras[i];
    seg::require(key.rfind("--", 0) == 0 && key.size() > 2, seg::ErrorKind::Usage,
                 "expected --key value overrides, got: " + key);
    key = key.substr(2);
    std::string value;
    const std::size_t eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
      i += 1;
    } else {
      seg::require(i + 1 < extras.size(), seg::ErrorKind::Usage,
                   "override --" + key + " is missing a value");
      value = extras[i + 1];
      i += 2;
    }
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;
    }
    json* node = &config;
    const std::vector<std::string> parts = split_dotted(key);
    for (std::size_t p = 0; p + 1 < parts.size(); ++p) {
      node = &((*node)[parts[p]]);
    }
    (*node)[parts.back()] = parsed;
  }
}

struct SplitOptions {
  std::string split = "all";
  double train_frac = 0.6;
  double val_frac = 0.2;
};

void add_split_options(CLI::App* cmd, SplitOptions& opt) {
  cmd->add_option("--split", opt.split, "Subset: all, train, val or test");
  cmd->add_option("--train-frac", opt.train_frac, "Train fraction of videos");
  cmd->add_option("--val-frac", opt.val_frac, "Val fraction of videos");
}

seg::datagen::Dataset load_split(const fs::path& sseg_path, const SplitOptions& opt) {
  seg::datagen::Dataset data = seg::datagen::load_sseg(sseg_path);
  if (opt.split == "all") return data;
  auto parts = seg::datagen::split_dataset(data, opt.train_frac, opt.val_frac);
  if (opt.split == "train") return std::move(parts[0]);
  if (opt.split == "val") return std::move(parts[1]);
  if (opt.split == "test") return std::move(parts[2]);
  seg::raise(seg::ErrorKind::Usage, "unknown split: " + opt.split);
}

std::string frame_name(std::size_t video, std::size_t frame) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "v%03zu_f%02zu", video, frame);
  return buf;
}

json prior_to_json(const seg::datagen::ClassPrior& prior) {
  return {{"pi", prior.pi},
          {"pixel_counts", prior.pixel_counts},
          {"video_counts", prior.video_counts}};
}

void emit_report(const json& report, const std::string& out_path) {
  const std::string text = report.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text_file(out_path, text);
    std::cerr << "wrote " << out_path << "\n";
  }
}

// ---- commands -------------------------------------------------------------

void run_gen_data(const fs::path& config_path, const std::vector<std::string>& extras,
                  const std::optional<std::uint64_t>& seed, const fs::path& out) {
  json raw = config_path.empty() ? json::object() : load_json_file(config_path);
  apply_overrides(raw, extras);
  if (seed.has_value()) raw["seed"] = *seed;
  const auto config = seg::datagen::DatasetConfig::from_json(raw);
  const seg::datagen::Dataset dataset = seg::datagen::generate(config);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  seg::datagen::save_sseg(dataset, out);
  std::cerr << "wrote " << out.string() << "\n";
}

void run_priors(const fs::path& data_path, const std::string& out_path) {
  const seg::datagen::Dataset dataset = seg::datagen::load_sseg(data_path);
  const seg::datagen::ClassPrior prior = seg::datagen::compute_prior(dataset);
  json report = prior_to_json(prior);
  report["config_digest"] = seg::digest_of(dataset.config.to_json().dump());
  emit_report(report, out_path);
}

void run_train(const fs::path& config_path, const std::vector<std::string>& extras,
               const std::optional<std::uint64_t>& seed, const fs::path& out_dir) {
  json raw = load_json_file(config_path);
  apply_overrides(raw, extras);
  static const std::set<std::string> known = {"dataset", "train_frac", "val_frac",
                                              "train"};
  for (const auto& [key, value] : raw.items()) {
    seg::require(known.count(key) > 0, seg::ErrorKind::Config,
                 "unknown train config key: " + key);
  }
  seg::require(raw.contains("dataset"), seg::ErrorKind::Config,
               "train config needs a \"dataset\" path");

  auto train_cfg = seg::trainer::TrainConfig::from_json(
      raw.contains("train") ? raw.at("train") : json::object());
  if (seed.has_value()) train_cfg.seed = *seed;

  const double train_frac = raw.value("train_frac", 0.6);
  const double val_frac = raw.value("val_frac", 0.2);
  const seg::datagen::Dataset full =
      seg::datagen::load_sseg(raw.at("dataset").get<std::string>());

  seg::datagen::Dataset train_set;
  std::optional<seg::datagen::Dataset> val_set;
  if (train_frac >= 1.0) {
    train_set = full;
  } else {
    auto parts = seg::datagen::split_dataset(full, train_frac, val_frac);
    train_set = std::move(parts[0]);
    val_set = std::move(parts[1]);
  }

  const seg::trainer::TrainResult result = seg::trainer::train(
      train_cfg, train_set, val_set.has_value() ? &*val_set : nullptr);

  fs::create_directories(out_dir / "snapshots");
  seg::model::save_swck(result.final_checkpoint, out_dir / "final.swck");
  for (const seg::model::Checkpoint& snapshot : result.snapshots) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "snapshot_%06lld.swck",
                  static_cast<long long>(snapshot.iteration));
    seg::model::save_swck(snapshot, out_dir / "snapshots" / buf);
  }
  std::string log_text;
  for (const json& record : result.log) {
    log_text += record.dump();
    log_text += '\n';
  }
  write_text_file(out_dir / "metrics.ndjson", log_text);
  json prior_report = prior_to_json(result.prior);
  prior_report["config_digest"] = result.final_checkpoint.config_digest;
  write_text_file(out_dir / "prior.json", prior_report.dump(2) + "\n");
  std::cerr << "wrote " << (out_dir / "final.swck").string() << " and "
            << result.snapshots.size() << " snapshots\n";
}

void run_swa(const fs::path& snapshot_dir, const fs::path& out) {
  std::vector<fs::path> files;
  seg::require(fs::is_directory(snapshot_dir), seg::ErrorKind::Io,
               "not a directory: " + snapshot_dir.string());
  for (const auto& entry : fs::directory_iterator(snapshot_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".swck") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  seg::require(!files.empty(), seg::ErrorKind::EmptyInput,
               "no .swck files in " + snapshot_dir.string());

  std::vector<seg::model::Checkpoint> snapshots;
  snapshots.reserve(files.size());
  for (const fs::path& file : files) snapshots.push_back(seg::model::load_swck(file));
  const seg::model::Checkpoint averaged = seg::swa::average_checkpoints(snapshots);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  seg::model::save_swck(averaged, out);
  std::cerr << "averaged " << files.size() << " snapshots into " << out.string()
            << "\n";
}

void run_predict(const fs::path& checkpoint_path, const fs::path& data_path,
                 const SplitOptions& split, const fs::path& out_dir,
                 std::string model_id, bool tta, const std::vector<double>& scales,
                 bool flip) {
  const seg::model::Checkpoint checkpoint = seg::model::load_swck(checkpoint_path);
  const seg::datagen::Dataset dataset = load_split(data_path, split);
  if (model_id.empty()) model_id = checkpoint_path.stem().string();
  fs::create_directories(out_dir);

  struct Job {
    const seg::datagen::Frame* frame;
    std::string name;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < dataset.videos.size(); ++v) {
    const auto& frames = dataset.videos[v].frames;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      jobs.push_back({&frames[f], frame_name(v, f)});
    }
  }
  seg::require(!jobs.empty(), seg::ErrorKind::EmptyData, "dataset has no frames");

  seg::parallel_for(jobs.size(), [&](std::size_t i) {
    const seg::ensemble::PredictionMap map =
        tta ? seg::ensemble::tta_predict(checkpoint.params, jobs[i].frame->features,
                                         jobs[i].name, model_id, scales, flip)
            : seg::ensemble::predict_frame(checkpoint.params, jobs[i].frame->features,
                                           jobs[i].name, model_id);
    seg::ensemble::save_pmap(map, out_dir / (jobs[i].name + ".pmap"));
  });
  std::cerr << "wrote " << jobs.size() << " prediction maps to "
            << out_dir.string() << "\n";
}

// Synthesized stand-in for an empty weak or aux group: contributes nothing.
seg::ensemble::PredictionMap zero_map(const seg::ensemble::PredictionMap& like) {
  seg::ensemble::PredictionMap map;
  map.probs = seg::Tensor(like.probs.shape());
  map.frame_id = like.frame_id;
  map.model_id = "none";
  return map;
}

void run_ensemble_search(const fs::path& config_path,
                         const std::vector<std::string>& extras,
                         const std::string& out_path) {
  json raw = load_json_file(config_path);
  apply_overrides(raw, extras);
  static const std::set<std::string> known = {
      "dataset", "split",      "train_frac", "val_frac",
      "pmap_root", "groups",   "alpha_grid", "beta_grid"};
  for (const auto& [key, value] : raw.items()) {
    seg::require(known.count(key) > 0, seg::ErrorKind::Config,
                 "unknown ensemble config key: " + key);
  }
  seg::require(raw.contains("dataset") && raw.contains("pmap_root") &&
                   raw.contains("groups"),
               seg::ErrorKind::Config,
               "ensemble config needs dataset, pmap_root and groups");

  SplitOptions split;
  split.split = raw.value("split", std::string("val"));
  split.train_frac = raw.value("train_frac", 0.6);
  split.val_frac = raw.value("val_frac", 0.2);
  const seg::datagen::Dataset dataset =
      load_split(raw.at("dataset").get<std::string>(), split);

  seg::ensemble::GroupSpec groups;
  const json& groups_json = raw.at("groups");
  groups.strong = groups_json.value("strong", std::vector<std::string>{});
  groups.weak = groups_json.value("weak", std::vector<std::string>{});
  groups.aux = groups_json.value("aux", std::vector<std::string>{});
  groups.validate();

  std::vector<double> alpha_grid =
      raw.value("alpha_grid", std::vector<double>{});
  std::vector<double> beta_grid = raw.value("beta_grid", std::vector<double>{});
  if (alpha_grid.empty()) {
    for (int i = 0; i <= 10; ++i) alpha_grid.push_back(0.2 * i);
  }
  if (beta_grid.empty()) {
    for (int i = 0; i <= 10; ++i) beta_grid.push_back(0.2 * i);
  }

  const fs::path pmap_root = raw.at("pmap_root").get<std::string>();
  auto load_group = [&](const std::vector<std::string>& ids,
                        const std::string& name) {
    std::vector<seg::ensemble::PredictionMap> maps;
    for (const std::string& id : ids) {
      const fs::path path = pmap_root / id / (name + ".pmap");
      seg::require(fs::exists(path), seg::ErrorKind::Io,
                   "missing prediction map: " + path.string());
      maps.push_back(seg::ensemble::load_pmap(path));
      seg::require(maps.back().frame_id == name, seg::ErrorKind::InvalidInput,
                   "frame id mismatch in " + path.string());
    }
    return maps;
  };

  std::vector<seg::ensemble::FrameEnsemble> frames;
  for (std::size_t v = 0; v < dataset.videos.size(); ++v) {
    const auto& video = dataset.videos[v];
    for (std::size_t f = 0; f < video.frames.size(); ++f) {
      const std::string name = frame_name(v, f);
      seg::ensemble::FrameEnsemble entry;
      entry.strong = seg::ensemble::group_average(load_group(groups.strong, name));
      entry.weak = groups.weak.empty()
                       ? zero_map(entry.strong)
                       : seg::ensemble::group_average(load_group(groups.weak, name));
      entry.aux = groups.aux.empty()
                      ? zero_map(entry.strong)
                      : seg::ensemble::group_average(load_group(groups.aux, name));
      entry.labels = video.frames[f].labels;
      frames.push_back(std::move(entry));
    }
  }

  const seg::ensemble::GridSearchResult result =
      seg::ensemble::grid_search(frames, alpha_grid, beta_grid);
  json report = result.to_json();
  report["config_digest"] = seg::digest_of(raw.dump());
  emit_report(report, out_path);
}

void run_eval(const fs::path& checkpoint_path, const fs::path& pmap_dir,
              const fs::path& data_path, const SplitOptions& split,
              const std::string& out_path) {
  seg::require(checkpoint_path.empty() != pmap_dir.empty(), seg::ErrorKind::Usage,
               "eval needs exactly one of --checkpoint or --pmaps");
  const seg::datagen::Dataset dataset = load_split(data_path, split);

  json report;
  if (!checkpoint_path.empty()) {
    const seg::model::Checkpoint checkpoint = seg::model::load_swck(checkpoint_path);
    const seg::metrics::IoUReport iou =
        seg::trainer::evaluate_dataset(checkpoint.params, dataset);
    report = iou.to_json();
    report["config_digest"] = checkpoint.config_digest;
  } else {
    seg::metrics::Confusion confusion(dataset.config.num_classes);
    for (std::size_t v = 0; v < dataset.videos.size(); ++v) {
      const auto& video = dataset.videos[v];
      for (std::size_t f = 0; f < video.frames.size(); ++f) {
        const fs::path path = pmap_dir / (frame_name(v, f) + ".pmap");
        seg::require(fs::exists(path), seg::ErrorKind::Io,
                     "missing prediction map: " + path.string());
        const seg::ensemble::PredictionMap map = seg::ensemble::load_pmap(path);
        confusion.accumulate(seg::ensemble::argmax_labels(map.probs),
                             video.frames[f].labels);
      }
    }
    report = seg::metrics::miou(confusion).to_json();
    report["config_digest"] = seg::digest_of(dataset.config.to_json().dump());
  }
  emit_report(report, out_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-technique recipes for per-pixel segmentation"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = hardware)")
      ->envname("SEGRECIPES_THREADS");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  fs::path gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "Dataset config JSON");
  gen->add_option("--seed", gen_seed, "Override the config seed");
  gen->add_option("--out", gen_out, "Output SSEG path")->required();
  gen->allow_extras();

  // priors
  auto* priors = app.add_subcommand("priors", "Class-prior statistics of a dataset");
  fs::path priors_data;
  std::string priors_out;
  priors->add_option("--data", priors_data, "SSEG dataset path")->required();
  priors->add_option("--out", priors_out, "Report path (default stdout)");

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  fs::path train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--config", train_config, "Run config JSON")->required();
  train->add_option("--seed", train_seed, "Override the train seed");
  train->add_option("--out", train_out, "Output directory")->required();
  train->allow_extras();

  // swa
  auto* swa = app.add_subcommand("swa", "Average snapshot checkpoints");
  fs::path swa_dir, swa_out;
  swa->add_option("--snapshots", swa_dir, "Directory of .swck snapshots")->required();
  swa->add_option("--out", swa_out, "Output checkpoint path")->required();

  // predict
  auto* predict = app.add_subcommand("predict", "Write per-frame prediction maps");
  fs::path predict_ckpt, predict_data, predict_out;
  SplitOptions predict_split;
  std::string predict_model_id;
  bool predict_tta = false;
  bool predict_flip = false;
  std::vector<double> predict_scales = {0.75, 1.0, 1.25};
  predict->add_option("--checkpoint", predict_ckpt, "SWCK checkpoint")->required();
  predict->add_option("--data", predict_data, "SSEG dataset path")->required();
  add_split_options(predict, predict_split);
  predict->add_option("--out", predict_out, "Output directory")->required();
  predict->add_option("--model-id", predict_model_id,
                      "Model id in map headers (default: checkpoint stem)");
  predict->add_flag("--tta", predict_tta, "Enable test-time augmentation");
  predict->add_option("--scales", predict_scales, "TTA scales")->delimiter(',');
  predict->add_flag("--flip", predict_flip, "Add horizontal-flip TTA");

  // ensemble-search
  auto* search = app.add_subcommand("ensemble-search",
                                    "Grid-search fusion weights on a split");
  fs::path search_config;
  std::string search_out;
  search->add_option("--config", search_config, "Ensemble config JSON")->required();
  search->add_option("--out", search_out, "Report path (default stdout)");
  search->allow_extras();

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or stored maps");
  fs::path eval_ckpt, eval_pmaps, eval_data;
  SplitOptions eval_split;
  std::string eval_out;
  eval->add_option("--checkpoint", eval_ckpt, "SWCK checkpoint");
  eval->add_option("--pmaps", eval_pmaps, "Directory of PMAP files");
  eval->add_option("--data", eval_data, "SSEG dataset path")->required();
  add_split_options(eval, eval_split);
  eval->add_option("--out", eval_out, "Report path (default stdout)");

  try {
    app.parse(argc, argv);
    seg::set_max_threads(threads);
    if (*gen) {
      run_gen_data(gen_config, gen->remaining(), gen_seed, gen_out);
    } else if (*priors) {
      run_priors(priors_data, priors_out);
    } else if (*train) {
      run_train(train_config, train->remaining(), train_seed, train_out);
    } else if (*swa) {
      run_swa(swa_dir, swa_out);
    } else if (*predict) {
      run_predict(predict_ckpt, predict_data, predict_split, predict_out,
                  predict_model_id, predict_tta, predict_scales, predict_flip);
    } else if (*search) {
      run_ensemble_search(search_config, search->remaining(), search_out);
    } else if (*eval) {
      run_eval(eval_ckpt, eval_pmaps, eval_data, eval_split, eval_out);
    }
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 2;
  } catch (const seg::Error& e) {
    std::cerr << json{{"error", {{"kind", e.kind_name()}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 3;
  }
  return 0;
}
