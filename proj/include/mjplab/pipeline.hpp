#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mjplab/aux_loss.hpp"
#include "mjplab/mjp.hpp"
#include "mjplab/transformer.hpp"

namespace mjplab {

/// Everything that receives gradients during training: the transformer plus
/// the optional localization regressor.
struct Trainable {
  TransformerModel model;
  ParamStore regressor;

  const ModelConfig& config() const { return model.config(); }
  std::vector<const ParamStore*> stores() const { return {&model.params(), &regressor}; }
  /// Union of both parameter sets (names are disjoint).
  ParamStore all_params() const;
  void assign(const ParamStore& values);
};

struct LossTerms {
  Var loss;
  Var ce;
  Var aux;  // empty when no auxiliary loss is configured
  Var logits;
  std::optional<ShuffledBatch> shuffled;
};

/// One forward pass to the training objective. With `spec` the batch goes
/// through the MJP input layer (shuffle + masked position embeddings),
/// otherwise through the plain input layer.
LossTerms compute_loss(const BoundParams& p, const ModelConfig& cfg, const TokenBatch& batch,
                       std::span<const std::size_t> labels, const ShuffleSpec* spec, const Rng& shuffle_rng,
                       const AuxConfig& aux, Rng& aux_rng);

/// Logits without MJP.
Var plain_logits(const BoundParams& p, const ModelConfig& cfg, const TokenBatch& batch);

}  // namespace mjplab
