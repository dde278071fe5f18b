#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "mjplab/config.hpp"
#include "mjplab/pipeline.hpp"

namespace mjplab {

struct Checkpoint {
  ExperimentConfig config;
  Trainable model;
  std::size_t epoch = 0;
};

/// Directory with manifest.json (experiment config, epoch, parameter names
/// and shapes) and one `<name>.tensor` file per parameter. Returns the
/// written files.
std::vector<std::filesystem::path> save_checkpoint(const std::filesystem::path& dir, const Trainable& model,
                                                   const ExperimentConfig& config, std::size_t epoch);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace mjplab
