#pragma once

// Self-supervised localization losses on the position table.

#include <span>
#include <string>

#include "mjplab/autodiff.hpp"
#include "mjplab/mjp.hpp"
#include "mjplab/rng.hpp"
#include "mjplab/transformer.hpp"

namespace mjplab {

enum class AuxKind { none, dal, drl };

std::string to_string(AuxKind k);
AuxKind parse_aux_kind(const std::string& s);

struct LossWeights {
  double lambda = 0.01;
};

struct AuxConfig {
  AuxKind kind = AuxKind::none;
  LossWeights weights;
  bool detach_pe = false;  // regressor-only updates when true
  bool operator==(const AuxConfig& o) const {
    return kind == o.kind && weights.lambda == o.weights.lambda && detach_pe == o.detach_pe;
  }
};

/// Linear map g from a position row to its coordinates: D -> 2 on the
/// vision grid, D -> 1 for text positions. Parameters are "aux.g.weight"
/// and "aux.g.bias".
struct LocalizationRegressor {
  static std::size_t output_dims(Modality mode) { return mode == Modality::vision ? 2 : 1; }
  static ParamStore initialize(Modality mode, std::size_t embed_dim, Rng& rng);
};

/// True coordinates normalized to [0, 1] per axis: (row, col) on a row-major
/// K x K grid in vision mode, the index in text mode. [L, dims].
Tensor normalized_coordinates(Modality mode, std::size_t length, std::size_t grid_side);

/// Mean over unshuffled positions of the l1 distance between g(pe row) and
/// the normalized coordinate, averaged over the given masks. `pe_rows`
/// excludes any CLS slot. Empty selection gives 0.
Var dal_loss(const Var& pe_rows, const Var& reg_weight, const Var& reg_bias, std::span<const ShuffleMask> masks,
             Modality mode, std::size_t grid_side);

/// Relative variant: mean l1 error between predicted and true coordinate
/// differences over unshuffled pairs (all pairs up to 64 tokens, otherwise
/// 4L pairs sampled from rng). Fewer than two unshuffled positions gives 0.
Var drl_loss(const Var& pe_rows, const Var& reg_weight, const Var& reg_bias, std::span<const ShuffleMask> masks,
             Modality mode, std::size_t grid_side, Rng& rng);

/// ce + lambda * aux.
Var total_loss(const Var& ce, const Var& aux, const LossWeights& weights);

/// Auxiliary term for a bound model: selects the patch rows of pe.pos,
/// honours detach_pe and dispatches on kind. Returns an empty Var for none.
Var auxiliary_loss(const BoundParams& p, const ModelConfig& cfg, const AuxConfig& aux,
                   std::span<const ShuffleMask> masks, Rng& rng);

}  // namespace mjplab
