#pragma once

#include <cstdint>
#include <string>

#include "mct/model.hpp"
#include "mct/pretrain.hpp"

namespace mct {

struct ScheduleConfig {
  int epochs = 0;
  int steps_per_epoch = 0;  // pretraining only; fine-tuning derives steps from the split
  int batch = 64;
  double lr = 1e-3;  // cosine-decayed over the run
  double weight_decay = 1e-4;
};

// Everything a command needs, resolved from a JSON file plus CLI overrides.
struct ExperimentConfig {
  std::string cube_path;
  std::string gt_path;
  std::string split_path;
  std::string checkpoint_path;  // eval / map input

  MceConfig mce;  // bands filled from the cube at run time
  EncoderConfig encoder;
  int head_hidden = 0;
  int recon_hidden = 0;

  ScheduleConfig pretrain{100, 50, 64, 1e-3, 1e-4};
  ScheduleConfig train{300, 0, 64, 1e-3, 1e-4};
  std::string pretrained_checkpoint;
  TransferScope transfer = TransferScope::none;

  uint64_t seed = 0;
  bool deterministic = true;
  std::string out_dir;
  std::string map_mode = "labeled";

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_json_file(const std::string& path);
  std::string to_json_text() const;
};

// Model hyperparameters embedded in checkpoint metadata so that evaluation
// can rebuild the exact architecture from the file alone.
std::string model_meta_json(const ModelHyper& hyper, const std::string& phase, int recon_hidden);
ModelHyper model_hyper_from_meta(const std::string& meta_json, std::string* phase_out,
                                 int* recon_hidden_out);

}  // namespace mct
