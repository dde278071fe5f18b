#include "mjplab/pipeline.hpp"

namespace mjplab {

ParamStore Trainable::all_params() const {
  ParamStore out = model.params();
  for (const auto& [name, value] : regressor) out.emplace(name, value);
  return out;
}

void Trainable::assign(const ParamStore& values) {
  for (const auto& [name, value] : values) {
    auto it = model.params().find(name);
    if (it != model.params().end()) {
      it->second = value;
      continue;
    }
    auto jt = regressor.find(name);
    if (jt == regressor.end()) throw ConfigError("unknown parameter " + name);
    jt->second = value;
  }
}

Var plain_logits(const BoundParams& p, const ModelConfig& cfg, const TokenBatch& batch) {
  const Var projected = project_tokens(p, cfg, batch);
  return forward_classify(p, cfg, embed_input(p, cfg, projected, p["pe.pos"]));
}

LossTerms compute_loss(const BoundParams& p, const ModelConfig& cfg, const TokenBatch& batch,
                       std::span<const std::size_t> labels, const ShuffleSpec* spec, const Rng& shuffle_rng,
                       const AuxConfig& aux, Rng& aux_rng) {
#ifdef MJPLAB_NO_MJP
  spec = nullptr;
#endif
  LossTerms out;
  Var embedded;
  std::vector<ShuffleMask> masks;
  if (spec) {
    MjpInput in = mjp_input_layer(p, cfg, batch, *spec, shuffle_rng);
    embedded = in.embedded;
    masks = in.shuffled.masks;
    out.shuffled = std::move(in.shuffled);
  } else {
    embedded = embed_input(p, cfg, project_tokens(p, cfg, batch), p["pe.pos"]);
  }
  out.logits = forward_classify(p, cfg, embedded);
  out.ce = cross_entropy(out.logits, labels);
  out.aux = auxiliary_loss(p, cfg, aux, masks, aux_rng);
  out.loss = out.aux.valid() ? total_loss(out.ce, out.aux, aux.weights) : out.ce;
  return out;
}

}  // namespace mjplab
