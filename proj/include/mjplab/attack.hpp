#pragma once

// Simulated federated client step and optimization-based gradient inversion.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mjplab/aux_loss.hpp"
#include "mjplab/metrics.hpp"
#include "mjplab/mjp.hpp"
#include "mjplab/pipeline.hpp"

namespace mjplab {

enum class AttackSetting { a, b, c };
enum class DistanceKind { l2, l2_plus_alpha_l1 };
enum class InitKind { gaussian, uniform };

std::string to_string(AttackSetting s);
std::string to_string(DistanceKind d);
std::string to_string(InitKind i);
AttackSetting parse_attack_setting(const std::string& s);
DistanceKind parse_distance(const std::string& s);
InitKind parse_init(const std::string& s);

enum class OptimizerKind { adam, lbfgs };
std::string to_string(OptimizerKind o);
OptimizerKind parse_optimizer(const std::string& s);

struct AttackConfig {
  /// Objective evaluations, summed over restarts.
  std::size_t iterations = 2000;
  OptimizerKind optimizer = OptimizerKind::lbfgs;
  /// Adam step size, or the length of the first L-BFGS step; 0 selects the
  /// modality default.
  double learning_rate = 0.0;
  DistanceKind distance = DistanceKind::l2;
  double alpha = 0.01;
  AttackSetting setting = AttackSetting::a;
  InitKind init = InitKind::gaussian;
  bool label_known = true;
  std::uint64_t seed = 0;
  /// Adam only: step decay x0.1 at 3/8, 5/8 and 7/8 of the iterations.
  bool lr_decay = true;
  /// Independent initializations sharing the iteration budget; the run with
  /// the lowest objective wins.
  std::size_t restarts = 1;

  void validate() const;
  double effective_lr(Modality m) const;
  bool operator==(const AttackConfig&) const = default;
};

/// Everything an observer of one client update sees, plus the ground truth
/// it was computed from.
struct ClientStep {
  TokenBatch input;                      // the raw batch x
  std::vector<std::size_t> labels;
  std::optional<ShuffleSpec> spec;
  std::optional<ShuffledBatch> shuffled;  // x~ when a spec was applied
  GradientMap snapshot;                   // every trainable parameter
};

/// One forward/backward of the training objective on `input`. With a spec
/// the batch is shuffled and position-masked first.
ClientStep client_gradients(const Trainable& model, const TokenBatch& input, std::span<const std::size_t> labels,
                            const std::optional<ShuffleSpec>& spec, const AuxConfig& aux, const Rng& rng);

enum class AttackStatus { completed, diverged };

/// Result of the generic inversion loop.
struct InversionRun {
  Tensor best;                   // iterate with the lowest objective
  std::vector<double> trace;     // best-so-far objective per iteration
  std::vector<double> raw_trace; // objective at each iterate
  AttackStatus status = AttackStatus::completed;
};

/// Builds the dummy gradients (one Var per matched tensor) on the given tape.
using DummyGradientFn = std::function<std::vector<Var>(Tape& tape, const Var& dummy)>;

/// Minimises the distance between the dummy gradients and `target` from
/// `init` with cfg.optimizer for cfg.iterations objective evaluations.
/// Adam evaluates once per step. L-BFGS (history 20, backtracking Armijo
/// line search) records every trial point and stops early once no step
/// along the steepest-descent direction lowers the objective.
InversionRun invert(const DummyGradientFn& dummy_gradients, const std::vector<Tensor>& target, Tensor init,
                    const AttackConfig& cfg, double learning_rate);

/// Distance between matched gradient lists: sum of squared differences, plus
/// alpha times the l1 norm of the differences for l2_plus_alpha_l1.
Var gradient_distance(std::span<const Var> dummy, std::span<const Tensor> target, DistanceKind kind, double alpha);

/// Names of the parameters whose gradients the attacker matches: every model
/// parameter except the token lookup table (text). Regressor gradients do
/// not depend on the input and are left out.
std::vector<std::string> matched_parameters(const TransformerModel& model);

/// Label inferred from the head-bias gradient: the only negative entry of
/// softmax - onehot for a single sample.
std::size_t infer_label(const GradientMap& snapshot);

struct AttackResult {
  AttackSetting setting = AttackSetting::a;
  Modality modality = Modality::text;
  Tensor recovered;                   // [L, D] embeddings (text) or [H, W, C] pixels
  std::vector<std::size_t> decoded;   // text only
  Tensor reference_image;             // vision reference for the setting
  std::vector<std::size_t> reference_tokens;  // text reference for the setting
  std::vector<double> trace;
  std::vector<double> raw_trace;
  AttackStatus status = AttackStatus::completed;
  MetricReport metrics;
};

/// Gradient inversion against a snapshot of `model` taken on a single
/// sample whose input has `input_shape` ([L, D] text embeddings or [H, W, C]
/// pixels). Returns the best iterate with decoded tokens (text); reference
/// and metrics are left for the caller.
AttackResult invert_gradients(const GradientMap& target, const TransformerModel& model,
                              std::span<const std::size_t> labels, const AttackConfig& cfg);

/// Nearest row of `table` [V, D] by cosine similarity for each row of
/// `recovered` [L, D]; ties go to the lowest id. With `centered` each row
/// and candidate has its mean removed first, which ignores the per-row
/// constant shift that pre-norm blocks cannot see.
std::vector<std::size_t> decode_tokens(const Tensor& recovered, const Tensor& table, bool centered = false);

/// Settings (a)/(b)/(c) on one sample. (a) attacks gradients of x and scores
/// against x; (b) attacks gradients of x~ and scores against x~; (c) attacks
/// gradients of x~ and scores against x. b and c need a spec.
AttackResult run_attack_setting(const Trainable& model, const TokenBatch& x, std::size_t label,
                                const std::optional<ShuffleSpec>& spec, const AuxConfig& aux, const AttackConfig& cfg,
                                const Rng& rng);

/// Shared inversion for settings b and c; `scored` picks the reference.
AttackResult rescore(const AttackResult& recovered, AttackSetting setting, const TokenBatch& x,
                     const TokenBatch& shuffled, const ModelConfig& cfg);

nlohmann::json attack_config_to_json(const AttackConfig& cfg);
AttackConfig attack_config_from_json(const nlohmann::json& j);

/// result.json (config, metrics, traces), recovered.tensor and, for text,
/// recovered.txt with the decoded ids. Returns the written file paths.
std::vector<std::filesystem::path> save_attack_result(const std::filesystem::path& dir, const AttackResult& result,
                                                      const AttackConfig& cfg);

}  // namespace mjplab
