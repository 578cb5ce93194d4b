#include "mct/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mct/checkpoint.hpp"
#include "mct/hsi.hpp"
#include "mct/model.hpp"
#include "mct/optim.hpp"
#include "mct/pretrain.hpp"

namespace mct {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

using Position = std::pair<int64_t, int64_t>;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error::io("cannot open for writing: " + path);
  os << text;
  if (!os) throw Error::io("failed writing " + path);
}

std::string prepare_run_dir(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) throw Error::config("out_dir is required");
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw Error::io("cannot create out_dir " + cfg.out_dir + ": " + ec.message());
  // resolved config + version + root seed; every random stream derives from
  // that seed via fixed labels
  ordered_json manifest;
  manifest["version"] = version_string();
  manifest["config"] = nlohmann::json::parse(cfg.to_json_text());
  write_text((fs::path(cfg.out_dir) / "config.resolved.json").string(), manifest.dump(2) + "\n");
  return cfg.out_dir;
}

struct LoadedScene {
  HsiCube cube;  // cropped to a band multiple of groups, then z-scored
  int64_t bands_dropped = 0;
};

LoadedScene load_scene(const ExperimentConfig& cfg) {
  if (cfg.cube_path.empty()) throw Error::config("dataset.cube is required");
  LoadedScene scene;
  HsiCube raw = load_cube(cfg.cube_path);
  HsiCube cropped = crop_bands_to_multiple(raw, cfg.mce.groups);
  scene.bands_dropped = raw.bands - cropped.bands;
  scene.cube = normalize_bands(cropped);
  return scene;
}

std::vector<Patch> extract_batch(const HsiCube& cube, const std::vector<Position>& positions,
                                 size_t begin, size_t end, int64_t patch_size,
                                 const GroundTruth* gt) {
  std::vector<Patch> batch;
  batch.reserve(end - begin);
  for (size_t i = begin; i < end; ++i) {
    const auto [r, c] = positions[i];
    Patch p = extract_patch(cube, r, c, patch_size);
    if (gt) p.label = gt->label_at(r, c);
    batch.push_back(std::move(p));
  }
  return batch;
}

// eval-mode predictions for a list of positions, batched
std::vector<int> predict_positions(const MctModel<float>& model, const HsiCube& cube,
                                   const std::vector<Position>& positions, int64_t batch_size) {
  std::vector<int> preds;
  preds.reserve(positions.size());
  for (size_t at = 0; at < positions.size(); at += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(positions.size(), at + static_cast<size_t>(batch_size));
    const auto batch = extract_batch(cube, positions, at, end, model.hyper.mce.patch, nullptr);
    const auto batch_preds = model.predict(stack_patches<float>(batch));
    preds.insert(preds.end(), batch_preds.begin(), batch_preds.end());
  }
  return preds;
}

MctModel<float> model_from_checkpoint(const std::string& path, std::string* phase_out = nullptr) {
  const LoadedCheckpoint ck = load_checkpoint(path);
  std::string phase;
  ModelHyper hyper = model_hyper_from_meta(ck.meta_json, &phase, nullptr);
  if (phase != "finetune") {
    throw Error::data("checkpoint " + path + " holds phase '" + phase +
                      "', expected a fine-tuned model");
  }
  auto model = MctModel<float>::build(hyper, /*seed=*/0);
  restore_store(model.params, ck, /*load_optimizer=*/false);
  if (phase_out) *phase_out = phase;
  return model;
}

double smoothed_tail(const std::vector<double>& values, size_t window) {
  if (values.empty()) return 0.0;
  const size_t n = std::min(window, values.size());
  double acc = 0.0;
  for (size_t i = values.size() - n; i < values.size(); ++i) acc += values[i];
  return acc / static_cast<double>(n);
}

}  // namespace

std::string run_pretrain(const ExperimentConfig& cfg) {
  prepare_run_dir(cfg);
  LoadedScene scene = load_scene(cfg);

  ModelHyper hyper;
  hyper.mce = cfg.mce;
  hyper.mce.bands = static_cast<int>(scene.cube.bands);
  hyper.encoder = cfg.encoder;
  hyper.classes = 0;

  auto model = PretrainModel<float>::build(hyper, cfg.recon_hidden, cfg.seed);
  Adam<float> opt({cfg.pretrain.lr, 0.9, 0.999, 1e-8, cfg.pretrain.weight_decay});

  PretrainStream stream(scene.cube, hyper.mce.patch, cfg.pretrain.batch,
                        hash_mix(cfg.seed, hash_str("pretrain-stream")));
  const int64_t total_steps =
      static_cast<int64_t>(cfg.pretrain.epochs) * std::max(1, cfg.pretrain.steps_per_epoch);
  if (total_steps < 1) throw Error::config("pretrain schedule has no steps");

  std::ostringstream log;
  log << "step,lr,loss\n";
  std::vector<double> losses;
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.pretrain.epochs; ++epoch) {
    stream.start_epoch(epoch);
    for (int s = 0; s < std::max(1, cfg.pretrain.steps_per_epoch); ++s) {
      const auto batch = stream.next_batch();
      const double lr = cosine_lr(cfg.pretrain.lr, step, total_steps);
      DropoutCtx drop{cfg.encoder.dropout > 0.0, cfg.encoder.dropout,
                      hash_mix(cfg.seed, hash_str("dropout")), static_cast<uint64_t>(step), 0};
      const double loss = pretrain_step(model, batch, opt, lr, &drop);
      losses.push_back(loss);
      log << step << "," << lr << "," << loss << "\n";
      ++step;
    }
  }

  // held-out probe: a fresh deterministic sample plus the per-band-mean
  // baseline on the same patches
  PretrainStream probe(scene.cube, hyper.mce.patch, 256,
                       hash_mix(cfg.seed, hash_str("pretrain-probe")));
  probe.start_epoch(0);
  const auto probe_batch = probe.next_batch();
  const Tensor<float> probe_targets = center_spectra<float>(probe_batch);
  const VarPtr<float> probe_est =
      model.forward(nullptr, stack_patches<float>(probe_batch), /*train_mode=*/false);
  const double probe_mse = kernels::mse(probe_est->value, probe_targets);

  std::vector<double> band_mean(static_cast<size_t>(scene.cube.bands), 0.0);
  for (int64_t p = 0; p < scene.cube.pixels(); ++p) {
    for (int64_t b = 0; b < scene.cube.bands; ++b) {
      band_mean[static_cast<size_t>(b)] +=
          static_cast<double>(scene.cube.values[static_cast<size_t>(p * scene.cube.bands + b)]);
    }
  }
  for (auto& v : band_mean) v /= static_cast<double>(scene.cube.pixels());
  double baseline_acc = 0.0;
  for (int64_t i = 0; i < probe_targets.numel(); ++i) {
    const double d = static_cast<double>(probe_targets[i]) -
                     band_mean[static_cast<size_t>(i % scene.cube.bands)];
    baseline_acc += d * d;
  }
  const double baseline_mse = baseline_acc / static_cast<double>(probe_targets.numel());

  const double leakage =
      center_leakage_sensitivity(model, probe_batch.front());

  const fs::path ckpt_path = fs::path(cfg.out_dir) / "pretrain.mctw";
  const int64_t opt_steps = opt.steps_taken();
  save_checkpoint(model.params, ckpt_path.string(),
                  model_meta_json(hyper, "pretrain", cfg.recon_hidden), &opt_steps);
  write_text((fs::path(cfg.out_dir) / "pretrain_loss.csv").string(), log.str());

  ordered_json summary;
  summary["phase"] = "pretrain";
  summary["checkpoint"] = ckpt_path.string();
  summary["steps"] = step;
  summary["final_loss"] = losses.empty() ? 0.0 : losses.back();
  summary["smoothed_loss"] = smoothed_tail(losses, 20);
  summary["heldout_mse"] = probe_mse;
  summary["band_mean_baseline_mse"] = baseline_mse;
  summary["center_leakage_sensitivity"] = leakage;
  summary["bands_dropped_for_grouping"] = scene.bands_dropped;
  summary["seed"] = cfg.seed;
  summary["version"] = version_string();
  const std::string text = summary.dump(2) + "\n";
  write_text((fs::path(cfg.out_dir) / "pretrain_summary.json").string(), text);
  return text;
}

std::string run_train(const ExperimentConfig& cfg) {
  prepare_run_dir(cfg);
  LoadedScene scene = load_scene(cfg);
  if (cfg.gt_path.empty()) throw Error::config("dataset.gt is required for training");
  if (cfg.split_path.empty()) throw Error::config("dataset.split is required for training");
  const GroundTruth gt = load_gt(cfg.gt_path);
  if (gt.height != scene.cube.height || gt.width != scene.cube.width) {
    throw Error::shape("ground truth grid does not match the cube");
  }
  const SplitSpec split = load_split(cfg.split_path);
  if (split.train.empty()) throw Error::data("split has no training pixels");

  ModelHyper hyper;
  hyper.mce = cfg.mce;
  hyper.mce.bands = static_cast<int>(scene.cube.bands);
  hyper.encoder = cfg.encoder;
  hyper.classes = gt.classes;
  hyper.head_hidden = cfg.head_hidden;

  auto model = MctModel<float>::build(hyper, cfg.seed);

  ordered_json transfer_info;
  if (!cfg.pretrained_checkpoint.empty() && cfg.transfer != TransferScope::none) {
    const LoadedCheckpoint ck = load_checkpoint(cfg.pretrained_checkpoint);
    const TransferReport report = transfer_weights(ck, model.params, cfg.transfer);
    transfer_info["source"] = cfg.pretrained_checkpoint;
    char hash_hex[24];
    std::snprintf(hash_hex, sizeof(hash_hex), "fnv1a:%016llx",
                  static_cast<unsigned long long>(file_fnv1a(cfg.pretrained_checkpoint)));
    transfer_info["source_hash"] = hash_hex;
    transfer_info["scope"] = cfg.transfer == TransferScope::full ? "full" : "partial";
    transfer_info["copied"] = report.copied.size();
    transfer_info["skipped"] = report.skipped;
  }

  Adam<float> opt({cfg.train.lr, 0.9, 0.999, 1e-8, cfg.train.weight_decay});
  std::vector<Position> train_positions = split.train;
  const int64_t batch_size = std::max(1, cfg.train.batch);
  const int64_t batches_per_epoch =
      (static_cast<int64_t>(train_positions.size()) + batch_size - 1) / batch_size;
  const int64_t total_steps = static_cast<int64_t>(cfg.train.epochs) * batches_per_epoch;
  if (total_steps < 1) throw Error::config("train schedule has no steps");

  std::ostringstream log;
  log << "epoch,step,lr,loss\n";
  double last_loss = 0.0;
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    Rng shuffle_rng(hash_mix(cfg.seed, hash_str("epoch-shuffle"), static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(train_positions);
    for (int64_t at = 0; at < static_cast<int64_t>(train_positions.size()); at += batch_size) {
      const size_t end =
          std::min(train_positions.size(), static_cast<size_t>(at + batch_size));
      const auto batch = extract_batch(scene.cube, train_positions, static_cast<size_t>(at), end,
                                       hyper.mce.patch, &gt);
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (const auto& p : batch) {
        if (p.label == 0) throw Error::data("training pixel is unlabeled");
        labels.push_back(p.label - 1);
      }
      Tape<float> tape;
      DropoutCtx drop{cfg.encoder.dropout > 0.0, cfg.encoder.dropout,
                      hash_mix(cfg.seed, hash_str("dropout")), static_cast<uint64_t>(step), 0};
      const double lr = cosine_lr(cfg.train.lr, step, total_steps);
      auto logits = model.logits(&tape, stack_patches<float>(batch), /*train_mode=*/true, &drop);
      auto loss = ops::cross_entropy(&tape, logits, labels);
      model.params.zero_grad();
      tape.backward(loss);
      opt.step(model.params, lr);
      last_loss = loss->value[0];
      log << epoch << "," << step << "," << lr << "," << last_loss << "\n";
      ++step;
    }
  }

  // final train accuracy in eval mode
  const auto train_preds = predict_positions(model, scene.cube, split.train, 256);
  int64_t correct = 0;
  for (size_t i = 0; i < split.train.size(); ++i) {
    if (train_preds[i] == gt.label_at(split.train[i].first, split.train[i].second)) ++correct;
  }
  const double train_acc =
      static_cast<double>(correct) / static_cast<double>(split.train.size());

  const fs::path ckpt_path = fs::path(cfg.out_dir) / "model.mctw";
  save_checkpoint(model.params, ckpt_path.string(),
                  model_meta_json(hyper, "finetune", 0), nullptr);
  write_text((fs::path(cfg.out_dir) / "train_log.csv").string(), log.str());

  ordered_json summary;
  summary["phase"] = "finetune";
  summary["checkpoint"] = ckpt_path.string();
  summary["steps"] = step;
  summary["final_loss"] = last_loss;
  summary["train_accuracy"] = train_acc;
  summary["classes"] = gt.classes;
  summary["train_pixels"] = split.train.size();
  if (!transfer_info.empty()) summary["transfer"] = transfer_info;
  summary["bands_dropped_for_grouping"] = scene.bands_dropped;
  summary["seed"] = cfg.seed;
  summary["version"] = version_string();
  const std::string text = summary.dump(2) + "\n";
  write_text((fs::path(cfg.out_dir) / "train_summary.json").string(), text);
  return text;
}

std::string run_eval(const ExperimentConfig& cfg) {
  prepare_run_dir(cfg);
  if (cfg.checkpoint_path.empty()) throw Error::config("checkpoint is required for eval");
  if (cfg.gt_path.empty() || cfg.split_path.empty()) {
    throw Error::config("dataset.gt and dataset.split are required for eval");
  }
  auto model = model_from_checkpoint(cfg.checkpoint_path);

  ExperimentConfig scene_cfg = cfg;
  scene_cfg.mce = model.hyper.mce;  // band grouping must match the model
  LoadedScene scene = load_scene(scene_cfg);
  if (static_cast<int>(scene.cube.bands) != model.hyper.mce.bands) {
    throw Error::shape("cube bands " + std::to_string(scene.cube.bands) +
                       " do not match model bands " + std::to_string(model.hyper.mce.bands));
  }
  const GroundTruth gt = load_gt(cfg.gt_path);
  if (gt.classes != model.hyper.classes) {
    throw Error::data("ground truth classes " + std::to_string(gt.classes) +
                      " do not match model classes " + std::to_string(model.hyper.classes));
  }
  const SplitSpec split = load_split(cfg.split_path);
  if (split.test.empty()) throw Error::data("split has no test pixels");

  const auto preds = predict_positions(model, scene.cube, split.test, 256);
  ConfusionMatrix cm(gt.classes);
  for (size_t i = 0; i < split.test.size(); ++i) {
    const int truth = gt.label_at(split.test[i].first, split.test[i].second);
    if (truth == 0) throw Error::data("test split contains an unlabeled pixel");
    cm.accumulate(truth, preds[i]);
  }
  const MetricsResult metrics = compute_metrics(cm);
  const std::string json_text = metrics_to_json(metrics) + "\n";
  write_text((fs::path(cfg.out_dir) / "metrics.json").string(), json_text);
  write_text((fs::path(cfg.out_dir) / "metrics.csv").string(), metrics_to_csv(metrics));
  return json_text;
}

std::string run_map(const ExperimentConfig& cfg) {
  prepare_run_dir(cfg);
  if (cfg.checkpoint_path.empty()) throw Error::config("checkpoint is required for map");
  const MapMode mode = map_mode_from_string(cfg.map_mode);
  auto model = model_from_checkpoint(cfg.checkpoint_path);

  ExperimentConfig scene_cfg = cfg;
  scene_cfg.mce = model.hyper.mce;
  LoadedScene scene = load_scene(scene_cfg);
  if (static_cast<int>(scene.cube.bands) != model.hyper.mce.bands) {
    throw Error::shape("cube bands do not match model bands");
  }

  GroundTruth gt;
  if (mode == MapMode::labeled_only) {
    if (cfg.gt_path.empty()) {
      throw Error::config("labeled-only map mode requires dataset.gt");
    }
    gt = load_gt(cfg.gt_path);
    if (gt.height != scene.cube.height || gt.width != scene.cube.width) {
      throw Error::shape("ground truth grid does not match the cube");
    }
  }

  std::vector<Position> positions;
  for (int64_t r = 0; r < scene.cube.height; ++r) {
    for (int64_t c = 0; c < scene.cube.width; ++c) {
      if (mode == MapMode::full || gt.label_at(r, c) != 0) positions.emplace_back(r, c);
    }
  }
  const auto preds = predict_positions(model, scene.cube, positions, 256);
  std::vector<uint16_t> map_labels(
      static_cast<size_t>(scene.cube.height * scene.cube.width), 0);
  for (size_t i = 0; i < positions.size(); ++i) {
    map_labels[static_cast<size_t>(positions[i].first * scene.cube.width + positions[i].second)] =
        static_cast<uint16_t>(preds[i]);
  }
  const fs::path map_path = fs::path(cfg.out_dir) / "map.ppm";
  render_map(map_labels, scene.cube.height, scene.cube.width, mode, map_path.string());

  ordered_json summary;
  summary["map"] = map_path.string();
  summary["mode"] = cfg.map_mode;
  summary["pixels_predicted"] = positions.size();
  summary["version"] = version_string();
  const std::string text = summary.dump(2) + "\n";
  write_text((fs::path(cfg.out_dir) / "map_summary.json").string(), text);
  return text;
}

std::string describe_checkpoint(const std::string& path) {
  const LoadedCheckpoint ck = load_checkpoint(path);
  ordered_json j;
  j["version"] = ck.version;
  j["meta"] = ck.meta_json.empty() ? nlohmann::json::object()
                                   : nlohmann::json::parse(ck.meta_json, nullptr, false);
  size_t params = 0, buffers = 0;
  int64_t elements = 0;
  for (const auto& e : ck.entries) {
    (e.kind == 0 ? params : buffers) += 1;
    elements += numel_of(e.shape);
  }
  j["params"] = params;
  j["buffers"] = buffers;
  j["elements"] = elements;
  j["has_optimizer_state"] = ck.has_optimizer;
  return j.dump(2) + "\n";
}

}  // namespace mct
