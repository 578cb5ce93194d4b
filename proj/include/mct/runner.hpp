#pragma once

// Experiment drivers behind the CLI commands. Each run is a pure function of
// (inputs, config, seed): artifacts land in config.out_dir and a JSON summary
// is returned.

#include <string>

#include "mct/config.hpp"
#include "mct/metrics.hpp"

namespace mct {

std::string run_pretrain(const ExperimentConfig& cfg);
std::string run_train(const ExperimentConfig& cfg);
std::string run_eval(const ExperimentConfig& cfg);
std::string run_map(const ExperimentConfig& cfg);

// Checkpoint introspection (phase, tensor counts, hyperparameters).
std::string describe_checkpoint(const std::string& path);

}  // namespace mct
