#include "mjplab/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace mjplab {

std::string to_string(Modality m) { return m == Modality::vision ? "vision" : "text"; }

Modality parse_modality(const std::string& s) {
  if (s == "vision") return Modality::vision;
  if (s == "text") return Modality::text;
  throw ConfigError("unknown modality '" + s + "' (expected vision|text)");
}

void ModelConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || layers == 0 || mlp_dim == 0 || seq_len == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (mode == Modality::vision) {
    if (grid_side * grid_side != seq_len) {
      throw ConfigError("vision mode needs grid_side^2 == seq_len, got grid_side " + std::to_string(grid_side) +
                        " and seq_len " + std::to_string(seq_len));
    }
    if (patch_size == 0 || channels == 0) throw ConfigError("patch_size and channels must be positive");
  } else if (vocab_size == 0) {
    throw ConfigError("text mode needs a positive vocab_size");
  }
}

// ---------------------------------------------------------------------------

std::map<std::string, Shape> TransformerModel::parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim;
  std::map<std::string, Shape> shapes;
  if (cfg.mode == Modality::text) {
    shapes["embed.token"] = {cfg.vocab_size, d};
  } else {
    shapes["embed.patch.weight"] = {cfg.patch_dim(), d};
    shapes["embed.patch.bias"] = {d};
    shapes["embed.cls"] = {1, d};
  }
  shapes["pe.pos"] = {cfg.position_rows(), d};
  shapes["pe.unk"] = {1, d};
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string b = "blocks." + std::to_string(i) + ".";
    shapes[b + "ln1.weight"] = {d};
    shapes[b + "ln1.bias"] = {d};
    for (const char* proj : {"q", "k", "v", "out"}) {
      shapes[b + "attn." + proj + ".weight"] = {d, d};
      shapes[b + "attn." + proj + ".bias"] = {d};
    }
    shapes[b + "ln2.weight"] = {d};
    shapes[b + "ln2.bias"] = {d};
    shapes[b + "mlp.fc1.weight"] = {d, cfg.mlp_dim};
    shapes[b + "mlp.fc1.bias"] = {cfg.mlp_dim};
    shapes[b + "mlp.fc2.weight"] = {cfg.mlp_dim, d};
    shapes[b + "mlp.fc2.bias"] = {d};
  }
  shapes["norm.weight"] = {d};
  shapes["norm.bias"] = {d};
  shapes["head.weight"] = {d, cfg.num_classes};
  shapes["head.bias"] = {cfg.num_classes};
  return shapes;
}

TransformerModel::TransformerModel(ModelConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  const auto shapes = parameter_shapes(config_);
  if (shapes.size() != params_.size()) {
    throw ConfigError("parameter set has " + std::to_string(params_.size()) + " entries, expected " +
                      std::to_string(shapes.size()));
  }
  for (const auto& [name, shape] : shapes) {
    const auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("missing parameter " + name);
    if (it->second.shape() != shape) {
      throw ConfigError("parameter " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(shape));
    }
  }
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

TransformerModel TransformerModel::initialize(const ModelConfig& config, Rng& rng) {
  ParamStore params;
  std::uint64_t index = 0;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Rng local = rng.split(index++);
    Tensor t(shape);
    const bool is_norm = name.find(".ln") != std::string::npos || name.rfind("norm.", 0) == 0;
    if (is_norm && ends_with(name, ".weight")) {
      t = Tensor::ones(shape);
    } else if (ends_with(name, ".bias")) {
      // zeros
    } else if (name.rfind("embed.token", 0) == 0 || name.rfind("pe.", 0) == 0 || name == "embed.cls") {
      for (double& v : t.data()) v = local.truncated_normal(0.02);
    } else {
      const double fan_in = static_cast<double>(shape[0]);
      const double fan_out = static_cast<double>(shape[1]);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : t.data()) v = local.uniform(-bound, bound);
    }
    params.emplace(name, std::move(t));
  }
  return TransformerModel(config, std::move(params));
}

PositionEmbeddingTable TransformerModel::position_embeddings() const {
  return {params_.at("pe.pos"), params_.at("pe.unk")};
}

// ---------------------------------------------------------------------------

BoundParams::BoundParams(Tape& tape, std::span<const ParamStore* const> stores, bool requires_grad) : tape_(&tape) {
  for (const ParamStore* store : stores) {
    for (const auto& [name, value] : *store) {
      if (!vars_.emplace(name, tape.leaf(value, requires_grad)).second) {
        throw ConfigError("parameter " + name + " bound twice");
      }
    }
  }
}

BoundParams::BoundParams(Tape& tape, const ParamStore& store, bool requires_grad)
    : BoundParams(tape, std::span<const ParamStore* const>(std::vector<const ParamStore*>{&store}), requires_grad) {}

const Var& BoundParams::operator[](const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("no bound parameter named " + name);
  return it->second;
}

// ---------------------------------------------------------------------------

TokenBatch TokenBatch::text(std::vector<std::vector<std::size_t>> ids) {
  TokenBatch b;
  b.modality = Modality::text;
  b.ids = std::move(ids);
  return b;
}

TokenBatch TokenBatch::vision(Tensor patches) {
  if (patches.rank() != 3) throw ShapeError("vision batch needs [B, L, patch_dim], got " + shape_str(patches.shape()));
  TokenBatch b;
  b.modality = Modality::vision;
  b.patches = std::move(patches);
  return b;
}

std::size_t TokenBatch::batch_size() const {
  return modality == Modality::text ? ids.size() : patches.shape()[0];
}

std::size_t TokenBatch::length() const {
  if (modality == Modality::text) return ids.empty() ? 0 : ids[0].size();
  return patches.shape()[1];
}

TokenBatch TokenBatch::select(std::span<const std::size_t> rows) const {
  if (modality == Modality::text) {
    std::vector<std::vector<std::size_t>> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(ids.at(r));
    return text(std::move(out));
  }
  const std::size_t per = patches.shape()[1] * patches.shape()[2];
  Tensor out({rows.size(), patches.shape()[1], patches.shape()[2]});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= patches.shape()[0]) throw ShapeError("batch row out of range");
    for (std::size_t j = 0; j < per; ++j) out[i * per + j] = patches[rows[i] * per + j];
  }
  return vision(std::move(out));
}

// ---------------------------------------------------------------------------

namespace {

void check_image(const Shape& s, std::size_t patch) {
  if (s.size() != 3) throw ShapeError("image must be [H, W, C], got " + shape_str(s));
  if (patch == 0 || s[0] % patch != 0 || s[1] % patch != 0) {
    throw ShapeError("image " + shape_str(s) + " is not divisible into " + std::to_string(patch) + "x" +
                     std::to_string(patch) + " patches");
  }
}

}  // namespace

Tensor patchify(const Tensor& image, std::size_t patch) {
  check_image(image.shape(), patch);
  const std::size_t h = image.shape()[0] / patch, w = image.shape()[1] / patch, c = image.shape()[2];
  const std::size_t axes[] = {0, 2, 1, 3, 4};
  return kernels::permute(image.reshaped({h, patch, w, patch, c}), axes).reshaped({h * w, patch * patch * c});
}

Tensor unpatchify(const Tensor& tokens, std::size_t patch, std::size_t height, std::size_t width) {
  if (tokens.rank() != 2 || patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ShapeError("cannot unpatchify " + shape_str(tokens.shape()) + " into " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  const std::size_t h = height / patch, w = width / patch;
  if (tokens.shape()[0] != h * w || tokens.shape()[1] % (patch * patch) != 0) {
    throw ShapeError("token table " + shape_str(tokens.shape()) + " does not tile a " + std::to_string(height) + "x" +
                     std::to_string(width) + " image");
  }
  const std::size_t c = tokens.shape()[1] / (patch * patch);
  const std::size_t axes[] = {0, 2, 1, 3, 4};
  return kernels::permute(tokens.reshaped({h, w, patch, patch, c}), axes).reshaped({height, width, c});
}

Var patchify(const Var& image, std::size_t patch) {
  check_image(image.shape(), patch);
  const std::size_t h = image.shape()[0] / patch, w = image.shape()[1] / patch, c = image.shape()[2];
  return reshape(permute(reshape(image, {h, patch, w, patch, c}), {0, 2, 1, 3, 4}), {h * w, patch * patch * c});
}

Var project_patches(const BoundParams& p, const Var& patches) {
  return add(matmul(patches, p["embed.patch.weight"]), p["embed.patch.bias"]);
}

Var project_tokens(const BoundParams& p, const ModelConfig& cfg, const TokenBatch& batch) {
  if (batch.modality != cfg.mode) throw ConfigError("batch modality does not match model mode");
  const std::size_t b = batch.batch_size();
  const std::size_t l = batch.length();
  if (cfg.mode == Modality::text) {
    std::vector<std::size_t> flat;
    flat.reserve(b * l);
    for (const auto& row : batch.ids) {
      if (row.size() != l) throw ShapeError("ragged text batch");
      for (std::size_t id : row) {
        if (id >= cfg.vocab_size) {
          throw ShapeError("token id " + std::to_string(id) + " exceeds vocab_size " + std::to_string(cfg.vocab_size));
        }
        flat.push_back(id);
      }
    }
    return reshape(gather_rows(p["embed.token"], flat), {b, l, cfg.embed_dim});
  }
  return project_patches(p, p.tape().constant(batch.patches));
}

Var embed_input(const BoundParams& p, const ModelConfig& cfg, const Var& projected, const Var& pe) {
  const Shape& s = projected.shape();
  if (s.size() != 3 || s[1] != cfg.seq_len || s[2] != cfg.embed_dim) {
    throw ShapeError("projected tokens " + shape_str(s) + " do not match seq_len " + std::to_string(cfg.seq_len) +
                     " and embed_dim " + std::to_string(cfg.embed_dim));
  }
  const std::size_t rows = pe.shape().size() >= 2 ? pe.shape()[pe.shape().size() - 2] : 0;
  if (rows != cfg.position_rows()) {
    throw ShapeError("position embeddings " + shape_str(pe.shape()) + " do not match " +
                     std::to_string(cfg.position_rows()) + " token slots");
  }
  Var z = projected;
  if (cfg.has_cls()) {
    const Var cls = broadcast_to(reshape(p["embed.cls"], {1, 1, cfg.embed_dim}), {s[0], 1, cfg.embed_dim});
    const Var parts[] = {cls, projected};
    z = concat(parts, 1);
  }
  return add(z, pe);
}

Var msa_forward(const BoundParams& p, const ModelConfig& cfg, std::size_t layer, const Var& z,
                std::vector<Tensor>* attention) {
  const Shape& s = z.shape();
  if (s.size() != 3 || s[2] != cfg.embed_dim) throw ShapeError("msa input must be [B, T, D], got " + shape_str(s));
  const std::size_t b = s[0], t = s[1], d = s[2], h = cfg.heads, dh = d / h;
  const std::string prefix = "blocks." + std::to_string(layer) + ".attn.";
  auto heads = [&](const char* name) {
    const Var proj = add(matmul(z, p[prefix + name + ".weight"]), p[prefix + name + ".bias"]);
    return permute(reshape(proj, {b, t, h, dh}), {0, 2, 1, 3});
  };
  const Var q = heads("q");
  const Var k = heads("k");
  const Var v = heads("v");
  const Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Var weights = softmax(scores, 3);
  if (attention) attention->push_back(weights.value());
  const Var context = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {b, t, d});
  return add(matmul(context, p[prefix + "out.weight"]), p[prefix + "out.bias"]);
}

Var encode(const BoundParams& p, const ModelConfig& cfg, const Var& z0, std::vector<Tensor>* attention) {
  Var z = z0;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string b = "blocks." + std::to_string(i) + ".";
    const Var attn_in = layer_norm(z, p[b + "ln1.weight"], p[b + "ln1.bias"]);
    z = add(z, msa_forward(p, cfg, i, attn_in, attention));
    const Var mlp_in = layer_norm(z, p[b + "ln2.weight"], p[b + "ln2.bias"]);
    const Var hidden = gelu(add(matmul(mlp_in, p[b + "mlp.fc1.weight"]), p[b + "mlp.fc1.bias"]));
    z = add(z, add(matmul(hidden, p[b + "mlp.fc2.weight"]), p[b + "mlp.fc2.bias"]));
  }
  return z;
}

Var classify(const BoundParams& p, const ModelConfig& cfg, const Var& encoded) {
  const Shape& s = encoded.shape();
  if (s.size() != 3 || s[1] != cfg.position_rows() || s[2] != cfg.embed_dim) {
    throw ShapeError("encoded sequence " + shape_str(s) + " does not match model configuration");
  }
  const Var first = reshape(slice(encoded, 1, 0, 1), {s[0], s[2]});
  const Var normed = layer_norm(first, p["norm.weight"], p["norm.bias"]);
  return add(matmul(normed, p["head.weight"]), p["head.bias"]);
}

Var forward_classify(const BoundParams& p, const ModelConfig& cfg, const Var& embedded) {
  return classify(p, cfg, encode(p, cfg, embedded));
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeError("cross_entropy expects [B, C] logits with B labels, got " + shape_str(s) + " and " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = s[0], c = s[1];
  Tensor top_mask({b, c});
  Tensor onehot({b, c});
  Tensor rest_mask = Tensor::full({b, c}, 1.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c) {
      throw std::out_of_range("label " + std::to_string(labels[i]) + " out of range for " + std::to_string(c) +
                              " classes");
    }
    std::size_t top = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.value()[i * c + j] > logits.value()[i * c + top]) top = j;
    top_mask[i * c + top] = 1.0;
    rest_mask[i * c + top] = 0.0;
    onehot[i * c + labels[i]] = 1.0;
  }
  Tape& tape = logits.tape();
  // Shift by the max logit as a Var; log-sum-exp is then log1p of the
  // non-max terms, which keeps precision when one class dominates.
  const Var top = sum_axis(mul(logits, tape.constant(std::move(top_mask))), 1, true);
  const Var shifted = sub(logits, top);
  const Var log_norm = log1p(sum_axis(mul(exp(shifted), tape.constant(std::move(rest_mask))), 1, true));
  const Var log_prob = sub(shifted, log_norm);
  return scale(sum(mul(tape.constant(std::move(onehot)), log_prob)), -1.0 / static_cast<double>(b));
}

}  // namespace mjplab
