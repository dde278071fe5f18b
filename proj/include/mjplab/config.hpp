#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mjplab/attack.hpp"
#include "mjplab/aux_loss.hpp"
#include "mjplab/mjp.hpp"
#include "mjplab/optim.hpp"
#include "mjplab/transformer.hpp"

namespace mjplab {

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "files"
  std::string train_path;
  std::string val_path;
  std::size_t train_size = 512;
  std::size_t val_size = 256;
  double noise = 0.1;
  std::size_t cues = 1;
  std::size_t cue_span = 4;
  bool operator==(const DataConfig&) const = default;
};

struct CampaignConfig {
  AttackConfig attack;
  double gamma = 0.5;  // shuffle ratio applied to the client step in settings b/c
  std::size_t samples = 4;
  std::vector<AttackSetting> settings{AttackSetting::a, AttackSetting::b, AttackSetting::c};
  bool operator==(const CampaignConfig&) const = default;
};

struct ExperimentConfig {
  ModelConfig model;
  ShuffleSpec shuffle;
  AuxConfig aux;
  TrainConfig train;
  DataConfig data;
  std::optional<CampaignConfig> attack;
  std::vector<double> sweep_gammas{0.0, 0.1, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::size_t> pca_dims{1, 2, 3};
  std::string output_dir = "runs/default";
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json shuffle_spec_to_json(const ShuffleSpec& spec);
ShuffleSpec shuffle_spec_from_json(const nlohmann::json& j);

nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Missing keys take their defaults; unknown keys are a ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Sorted keys, two-space indentation, trailing newline. Parsing the result
/// and serializing again reproduces it byte for byte.
std::string canonical_config(const ExperimentConfig& cfg);
/// Lowercase hex SHA-256 of the canonical form.
std::string config_hash(const ExperimentConfig& cfg);
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// Sets a dotted key ("shuffle.gamma") from its text form. The text is
/// read as JSON when it parses, otherwise as a string.
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// Several overrides applied together, so interdependent keys may change at once.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::pair<std::string, std::string>>& overrides);
/// Every dotted leaf key of the configuration, for building CLI flags.
std::vector<std::string> config_keys();

}  // namespace mjplab
