#pragma once

// Experiment orchestration behind the command-line tool.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mjplab/attack.hpp"
#include "mjplab/checkpoint.hpp"
#include "mjplab/config.hpp"
#include "mjplab/dataset.hpp"
#include "mjplab/pca.hpp"

namespace mjplab {

/// Non-finite loss or gradient during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSplits {
  Dataset train;
  Dataset val;
};

/// Synthetic splits are generated from the experiment seed; file splits are
/// loaded from data.train_path / data.val_path. Both are validated.
DataSplits load_data(const ExperimentConfig& cfg);

/// Fresh model (and regressor when an auxiliary loss is configured).
Trainable init_trainable(const ExperimentConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct RunRecord {
  std::string config_hash;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> checkpoints;

  nlohmann::json to_json() const;
};

struct TrainOutput {
  RunRecord record;
  Trainable model;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Per step: shuffle + masked position embeddings (when the shuffle spec is
/// active), forward, CE + lambda * aux, backward, clipped AdamW step under
/// warmup + cosine decay. With a non-empty out_dir a checkpoint is written
/// after every epoch to out_dir/checkpoints/epoch_<n>.
TrainOutput train(const ExperimentConfig& cfg, const DataSplits& data, const std::filesystem::path& out_dir = {},
                  const EpochCallback& on_epoch = {});

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t count = 0;
};

/// Accuracy with inference-time shuffling at ratio gamma (window and mode
/// from the experiment's shuffle spec), shuffles drawn from eval_seed.
EvalResult evaluate(const Trainable& model, const ExperimentConfig& cfg, const Dataset& data, double gamma,
                    std::uint64_t eval_seed);

struct SweepPoint {
  double gamma = 0.0;
  EvalResult result;
};

std::vector<SweepPoint> ratio_sweep(const Trainable& model, const ExperimentConfig& cfg, const Dataset& data,
                                    const std::vector<double>& gammas, std::uint64_t eval_seed,
                                    std::size_t workers = 0);

struct CampaignCell {
  std::size_t sample = 0;
  AttackSetting setting = AttackSetting::a;
  double gamma = 0.0;
  std::optional<AttackResult> result;
  std::string error;  // non-empty when the cell failed
};

struct CampaignResult {
  std::vector<CampaignCell> cells;
  /// Mean metrics per (setting, gamma) over the successful cells.
  std::vector<std::pair<std::string, MetricReport>> rows;
  nlohmann::json to_json() const;
};

/// Runs every (sample, setting) cell of the configured campaign. Settings b
/// and c of one sample share a single inversion. Failed cells are recorded
/// and the campaign continues.
CampaignResult attack_campaign(const Trainable& model, const ExperimentConfig& cfg, const Dataset& data,
                               const std::vector<std::size_t>& samples, std::size_t workers = 0);

/// Files written by export_pe.
struct PeExport {
  PcaProjection projection;
  std::vector<ExplainedVarianceRow> variance;
  std::vector<std::filesystem::path> files;
};

/// PCA of the token position rows of E_pos; the CLS row (vision) and E_unk
/// are projected with the same basis and labelled "cls" / "unk".
/// Writes projection.csv, variance.csv and scatter.svg into out_dir.
PeExport export_pe(const Trainable& model, const std::vector<std::size_t>& dims, const std::filesystem::path& out_dir,
                   const std::string& label = "model");

/// manifest.json in dir: command, config hash, seed and SHA-256 of every
/// artifact (paths relative to dir).
void write_manifest(const std::filesystem::path& dir, const std::string& command, const ExperimentConfig& cfg,
                    const std::vector<std::filesystem::path>& artifacts);

void write_text_file(const std::filesystem::path& path, const std::string& content);

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0: hardware
/// concurrency). Exceptions are rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Markdown summary of whatever run artifacts exist in dir.
std::string build_report(const std::filesystem::path& dir);

}  // namespace mjplab
