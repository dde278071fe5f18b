#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mjplab/autodiff.hpp"
#include "mjplab/rng.hpp"
#include "mjplab/tensor.hpp"

namespace mjplab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Modality { vision, text };

std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

using ParamStore = ParamValues;
using GradientMap = ParamValues;

struct ModelConfig {
  Modality mode = Modality::text;
  std::size_t seq_len = 16;  // token count L; vision adds one CLS slot on top
  std::size_t embed_dim = 32;
  std::size_t heads = 1;
  std::size_t layers = 2;
  std::size_t mlp_dim = 64;
  std::size_t num_classes = 2;
  std::size_t vocab_size = 64;  // text
  std::size_t patch_size = 2;   // vision
  std::size_t channels = 1;     // vision
  std::size_t grid_side = 4;    // vision, grid_side^2 == seq_len

  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t image_side() const { return grid_side * patch_size; }
  bool has_cls() const { return mode == Modality::vision; }
  /// Rows of the position table: L, plus the CLS slot in vision mode.
  std::size_t position_rows() const { return seq_len + (has_cls() ? 1 : 0); }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Learnable position table plus the shared unknown-position row.
struct PositionEmbeddingTable {
  Tensor pos;  // position_rows x D
  Tensor unk;  // 1 x D
};

class TransformerModel {
 public:
  TransformerModel(ModelConfig config, ParamStore params);

  /// Truncated-normal(0.02) for embeddings and position rows, Xavier-uniform
  /// for linear maps, zeros for biases, ones for layernorm gains.
  static TransformerModel initialize(const ModelConfig& config, Rng& rng);
  static std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  PositionEmbeddingTable position_embeddings() const;

 private:
  ModelConfig config_;
  ParamStore params_;
};

/// Parameters placed on a tape as leaves, addressed by name.
class BoundParams {
 public:
  BoundParams(Tape& tape, std::span<const ParamStore* const> stores, bool requires_grad);
  BoundParams(Tape& tape, const ParamStore& store, bool requires_grad);

  const Var& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  const std::map<std::string, Var>& vars() const { return vars_; }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  std::map<std::string, Var> vars_;
};

/// A batch of token sequences: integer ids in text mode, flattened patches
/// [B, L, patch_dim] in vision mode.
struct TokenBatch {
  Modality modality = Modality::text;
  std::vector<std::vector<std::size_t>> ids;
  Tensor patches;

  static TokenBatch text(std::vector<std::vector<std::size_t>> ids);
  static TokenBatch vision(Tensor patches);
  std::size_t batch_size() const;
  std::size_t length() const;
  /// Sub-batch holding the given rows in order.
  TokenBatch select(std::span<const std::size_t> rows) const;
};

/// [H, W, C] image -> [L, p*p*C] tokens in row-major grid order; each token
/// flattens its patch as (row, col, channel).
Tensor patchify(const Tensor& image, std::size_t patch);
Tensor unpatchify(const Tensor& tokens, std::size_t patch, std::size_t height, std::size_t width);
Var patchify(const Var& image, std::size_t patch);

/// Token projection E without position information: [B, L, D].
Var project_tokens(const BoundParams& p, const ModelConfig& cfg, const TokenBatch& batch);
Var project_patches(const BoundParams& p, const Var& patches);

/// z0 = [CLS;] projected + pe. `pe` is either [T, D] shared across the
/// batch or [B, T, D] per sequence, with T = cfg.position_rows().
Var embed_input(const BoundParams& p, const ModelConfig& cfg, const Var& projected, const Var& pe);

/// Multi-head self-attention of layer `layer` applied to z [B, T, D]. When
/// `attention` is non-null the softmax weights [B, H, T, T] are appended.
Var msa_forward(const BoundParams& p, const ModelConfig& cfg, std::size_t layer, const Var& z,
                std::vector<Tensor>* attention = nullptr);

/// Pre-layernorm encoder stack: [B, T, D] -> [B, T, D].
Var encode(const BoundParams& p, const ModelConfig& cfg, const Var& z0, std::vector<Tensor>* attention = nullptr);

/// Classification head over the first token of encoded [B, T, D] -> [B, C].
Var classify(const BoundParams& p, const ModelConfig& cfg, const Var& encoded);

Var forward_classify(const BoundParams& p, const ModelConfig& cfg, const Var& embedded);

/// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, std::span<const std::size_t> labels);

}  // namespace mjplab
