// mct — experiment driver for the MCT hyperspectral classifier.
// Thin flag layer over the C API: reads config files, applies overrides,
// and forwards the resolved JSON to libmct.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mct.h"

namespace {

using nlohmann::json;

int report_error(mct_status status) {
  json err;
  err["error"] = {{"category", mct_status_name(status)}, {"message", mct_last_error()}};
  std::cerr << err.dump() << std::endl;
  return static_cast<int>(status);
}

int report_bad_usage(const std::string& message) {
  json err;
  err["error"] = {{"category", "config"}, {"message", message}};
  std::cerr << err.dump() << std::endl;
  return static_cast<int>(MCT_E_CONFIG);
}

struct RunFlags {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  std::string split;
  std::string pretrained;
  std::string transfer;
  std::string map_mode;
  uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;
};

// Load the config file and fold the command-line overrides into it.
bool resolve_config(const RunFlags& flags, std::string* out_text, std::string* error) {
  json cfg = json::object();
  if (!flags.config_path.empty()) {
    std::ifstream is(flags.config_path);
    if (!is) {
      *error = "cannot open config: " + flags.config_path;
      return false;
    }
    std::ostringstream os;
    os << is.rdbuf();
    cfg = json::parse(os.str(), nullptr, false);
    if (cfg.is_discarded()) {
      *error = "invalid JSON in config: " + flags.config_path;
      return false;
    }
  }
  if (!flags.out_dir.empty()) cfg["out_dir"] = flags.out_dir;
  if (flags.seed_set) cfg["seed"] = flags.seed;
  if (flags.deterministic) cfg["deterministic"] = true;
  if (!flags.checkpoint.empty()) cfg["checkpoint"] = flags.checkpoint;
  if (!flags.split.empty()) cfg["dataset"]["split"] = flags.split;
  if (!flags.pretrained.empty()) cfg["train"]["pretrained"] = flags.pretrained;
  if (!flags.transfer.empty()) cfg["train"]["transfer"] = flags.transfer;
  if (!flags.map_mode.empty()) cfg["map_mode"] = flags.map_mode;
  *out_text = cfg.dump();
  return true;
}

void add_common_flags(CLI::App* cmd, RunFlags* flags, bool config_required) {
  auto* copt = cmd->add_option("--config", flags->config_path, "experiment config JSON");
  if (config_required) copt->required();
  cmd->add_option("--out", flags->out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", flags->seed, "seed (overrides config)")
      ->each([flags](const std::string&) { flags->seed_set = true; });
  cmd->add_flag("--deterministic", flags->deterministic, "force deterministic mode on");
}

using RunFn = mct_status (*)(const char*, char**);

int run_with(const RunFlags& flags, RunFn fn) {
  std::string cfg_text, error;
  if (!resolve_config(flags, &cfg_text, &error)) return report_bad_usage(error);
  char* summary = nullptr;
  const mct_status status = fn(cfg_text.c_str(), &summary);
  if (status != MCT_OK) return report_error(status);
  if (summary) {
    std::cout << summary;
    mct_string_free(summary);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MCT hyperspectral classification pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mct_version()));

  // convert
  std::string kind, raw_path, sidecar_path, convert_out;
  auto* convert = app.add_subcommand("convert", "convert raw binary + JSON sidecar to .hsic/.hsig");
  convert->add_option("--kind", kind, "cube or gt")->required()
      ->check(CLI::IsMember({"cube", "gt"}));
  convert->add_option("--raw", raw_path, "headerless little-endian payload")->required();
  convert->add_option("--sidecar", sidecar_path, "JSON sidecar with dimensions")->required();
  convert->add_option("--out", convert_out, "output path")->required();

  // split
  std::string split_gt, split_out;
  uint32_t per_class = 0;
  uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "stratified limited-label split");
  split->add_option("--gt", split_gt, "ground-truth .hsig")->required();
  split->add_option("--per-class", per_class, "training pixels per class")->required();
  split->add_option("--seed", split_seed, "split seed");
  split->add_option("--out", split_out, "split JSON output path")->required();

  RunFlags pretrain_flags, train_flags, eval_flags, map_flags;
  auto* pretrain = app.add_subcommand("pretrain", "center-mask self-supervised pretraining");
  add_common_flags(pretrain, &pretrain_flags, true);

  auto* train = app.add_subcommand("train", "supervised fine-tuning");
  add_common_flags(train, &train_flags, true);
  train->add_option("--pretrained", train_flags.pretrained, "pretraining checkpoint to start from");
  train->add_option("--transfer", train_flags.transfer, "weight transfer scope")
      ->check(CLI::IsMember({"full", "partial", "none"}));

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common_flags(eval, &eval_flags, true);
  eval->add_option("--checkpoint", eval_flags.checkpoint, "model checkpoint (.mctw)");
  eval->add_option("--split", eval_flags.split, "split JSON (overrides config)");

  auto* map = app.add_subcommand("map", "render a classification map");
  add_common_flags(map, &map_flags, true);
  map->add_option("--checkpoint", map_flags.checkpoint, "model checkpoint (.mctw)");
  map->add_option("--map-mode", map_flags.map_mode, "labeled or full")
      ->check(CLI::IsMember({"labeled", "full"}));

  CLI11_PARSE(app, argc, argv);

  if (convert->parsed()) {
    const mct_status status = kind == "cube"
                                  ? mct_cube_convert(raw_path.c_str(), sidecar_path.c_str(),
                                                     convert_out.c_str())
                                  : mct_gt_convert(raw_path.c_str(), sidecar_path.c_str(),
                                                   convert_out.c_str());
    if (status != MCT_OK) return report_error(status);
    std::cout << "{\"written\":\"" << convert_out << "\"}\n";
    return 0;
  }

  if (split->parsed()) {
    mct_gt* gt = nullptr;
    mct_status status = mct_gt_open(split_gt.c_str(), &gt);
    if (status != MCT_OK) return report_error(status);
    mct_split* sp = nullptr;
    status = mct_split_create(gt, per_class, split_seed, &sp);
    mct_gt_free(gt);
    if (status != MCT_OK) return report_error(status);
    status = mct_split_save(sp, split_out.c_str());
    uint64_t n_train = 0, n_test = 0;
    mct_split_counts(sp, &n_train, &n_test);
    mct_split_free(sp);
    if (status != MCT_OK) return report_error(status);
    std::cout << "{\"written\":\"" << split_out << "\",\"train\":" << n_train
              << ",\"test\":" << n_test << "}\n";
    return 0;
  }

  if (pretrain->parsed()) return run_with(pretrain_flags, mct_run_pretrain);
  if (train->parsed()) return run_with(train_flags, mct_run_train);
  if (eval->parsed()) return run_with(eval_flags, mct_run_eval);
  if (map->parsed()) return run_with(map_flags, mct_run_map);
  return report_bad_usage("no subcommand given");
}
