#include "mjplab/aux_loss.hpp"

#include <cmath>
#include <map>

namespace mjplab {

std::string to_string(AuxKind k) {
  switch (k) {
    case AuxKind::dal: return "dal";
    case AuxKind::drl: return "drl";
    default: return "none";
  }
}

AuxKind parse_aux_kind(const std::string& s) {
  if (s == "none") return AuxKind::none;
  if (s == "dal") return AuxKind::dal;
  if (s == "drl") return AuxKind::drl;
  throw ConfigError("unknown aux_loss '" + s + "' (expected none|dal|drl)");
}

ParamStore LocalizationRegressor::initialize(Modality mode, std::size_t embed_dim, Rng& rng) {
  const std::size_t out = output_dims(mode);
  Tensor weight({embed_dim, out});
  const double bound = std::sqrt(6.0 / static_cast<double>(embed_dim + out));
  for (double& v : weight.data()) v = rng.uniform(-bound, bound);
  ParamStore params;
  params.emplace("aux.g.weight", std::move(weight));
  params.emplace("aux.g.bias", Tensor({out}));
  return params;
}

Tensor normalized_coordinates(Modality mode, std::size_t length, std::size_t grid_side) {
  if (mode == Modality::vision) {
    if (grid_side * grid_side != length) {
      throw ShapeError("dense localization needs a square grid: " + std::to_string(length) + " rows for side " +
                       std::to_string(grid_side));
    }
    Tensor out({length, 2});
    const double denom = grid_side > 1 ? static_cast<double>(grid_side - 1) : 1.0;
    for (std::size_t l = 0; l < length; ++l) {
      out[2 * l] = static_cast<double>(l / grid_side) / denom;
      out[2 * l + 1] = static_cast<double>(l % grid_side) / denom;
    }
    return out;
  }
  Tensor out({length, 1});
  const double denom = length > 1 ? static_cast<double>(length - 1) : 1.0;
  for (std::size_t l = 0; l < length; ++l) out[l] = static_cast<double>(l) / denom;
  return out;
}

namespace {

void check_masks(std::span<const ShuffleMask> masks, std::size_t length) {
  for (const ShuffleMask& m : masks) {
    if (m.size() != length) throw ShapeError("mask length does not match position rows");
  }
}

Var predict(const Var& pe_rows, const Var& w, const Var& b) { return add(matmul(pe_rows, w), b); }

}  // namespace

Var dal_loss(const Var& pe_rows, const Var& reg_weight, const Var& reg_bias, std::span<const ShuffleMask> masks,
             Modality mode, std::size_t grid_side) {
  if (pe_rows.shape().size() != 2) throw ShapeError("position rows must be [L, D]");
  const std::size_t length = pe_rows.shape()[0];
  const Tensor coords = normalized_coordinates(mode, length, grid_side);
  check_masks(masks, length);
  Tape& tape = pe_rows.tape();

  // Per-position weight: average over masks of 1/|unshuffled| on unshuffled rows.
  Tensor weights({length});
  const std::vector<ShuffleMask> fallback{ShuffleMask::zeros(length)};
  const std::span<const ShuffleMask> used = masks.empty() ? std::span<const ShuffleMask>(fallback) : masks;
  for (const ShuffleMask& m : used) {
    const std::size_t kept = length - m.popcount();
    if (kept == 0) continue;
    for (std::size_t l = 0; l < length; ++l) {
      if (!m.bits[l]) weights[l] += 1.0 / (static_cast<double>(kept) * static_cast<double>(used.size()));
    }
  }
  const Var distance = sum_axis(abs(sub(predict(pe_rows, reg_weight, reg_bias), tape.constant(coords))), 1, false);
  return sum(mul(distance, tape.constant(std::move(weights))));
}

Var drl_loss(const Var& pe_rows, const Var& reg_weight, const Var& reg_bias, std::span<const ShuffleMask> masks,
             Modality mode, std::size_t grid_side, Rng& rng) {
  if (pe_rows.shape().size() != 2) throw ShapeError("position rows must be [L, D]");
  const std::size_t length = pe_rows.shape()[0];
  const Tensor coords = normalized_coordinates(mode, length, grid_side);
  check_masks(masks, length);
  Tape& tape = pe_rows.tape();

  const std::vector<ShuffleMask> fallback{ShuffleMask::zeros(length)};
  const std::span<const ShuffleMask> used = masks.empty() ? std::span<const ShuffleMask>(fallback) : masks;
  std::map<std::pair<std::size_t, std::size_t>, double> pair_weight;
  for (const ShuffleMask& m : used) {
    std::vector<std::size_t> kept;
    for (std::size_t l = 0; l < length; ++l) {
      if (!m.bits[l]) kept.push_back(l);
    }
    if (kept.size() < 2) continue;
    const double share = 1.0 / static_cast<double>(used.size());
    if (length <= 64) {
      const double n_pairs = static_cast<double>(kept.size() * (kept.size() - 1) / 2);
      for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t j = i + 1; j < kept.size(); ++j) pair_weight[{kept[i], kept[j]}] += share / n_pairs;
      }
    } else {
      const std::size_t draws = 4 * length;
      for (std::size_t s = 0; s < draws; ++s) {
        const auto i = static_cast<std::size_t>(rng.below(kept.size()));
        auto j = static_cast<std::size_t>(rng.below(kept.size() - 1));
        if (j >= i) ++j;
        pair_weight[{kept[i], kept[j]}] += share / static_cast<double>(draws);
      }
    }
  }
  if (pair_weight.empty()) return tape.constant(Tensor::scalar(0.0));

  const std::size_t dims = coords.shape()[1];
  std::vector<std::size_t> first, second;
  Tensor target({pair_weight.size(), dims});
  Tensor weights({pair_weight.size()});
  std::size_t k = 0;
  for (const auto& [pair, w] : pair_weight) {
    first.push_back(pair.first);
    second.push_back(pair.second);
    for (std::size_t d = 0; d < dims; ++d) {
      target[k * dims + d] = coords[pair.first * dims + d] - coords[pair.second * dims + d];
    }
    weights[k++] = w;
  }
  const Var pred = predict(pe_rows, reg_weight, reg_bias);
  const Var diff = sub(gather_rows(pred, first), gather_rows(pred, second));
  const Var distance = sum_axis(abs(sub(diff, tape.constant(std::move(target)))), 1, false);
  return sum(mul(distance, tape.constant(std::move(weights))));
}

Var total_loss(const Var& ce, const Var& aux, const LossWeights& weights) {
  if (weights.lambda < 0) throw ConfigError("lambda must be non-negative");
  if (ce.size() != 1 || aux.size() != 1) throw ShapeError("total_loss expects scalar terms");
  if (weights.lambda == 0.0) return ce;
  return add(ce, scale(aux, weights.lambda));
}

Var auxiliary_loss(const BoundParams& p, const ModelConfig& cfg, const AuxConfig& aux,
                   std::span<const ShuffleMask> masks, Rng& rng) {
  if (aux.kind == AuxKind::none) return {};
  Var rows = p["pe.pos"];
  if (cfg.has_cls()) rows = slice(rows, 0, 1, cfg.seq_len);
  if (aux.detach_pe) rows = detach(rows);
  const Var& w = p["aux.g.weight"];
  const Var& b = p["aux.g.bias"];
  if (aux.kind == AuxKind::dal) return dal_loss(rows, w, b, masks, cfg.mode, cfg.grid_side);
  return drl_loss(rows, w, b, masks, cfg.mode, cfg.grid_side, rng);
}

}  // namespace mjplab
