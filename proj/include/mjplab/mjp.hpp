#pragma once

// Masked jigsaw shuffling of token sequences and the masked position
// embeddings that accompany it.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mjplab/autodiff.hpp"
#include "mjplab/rng.hpp"
#include "mjplab/transformer.hpp"

namespace mjplab {

enum class ShuffleMode { tokenwise, blockwise };

std::string to_string(ShuffleMode m);
ShuffleMode parse_shuffle_mode(const std::string& s);

struct ShuffleSpec {
  double gamma = 0.0;
  std::optional<std::size_t> window;  // none: one window spanning the sequence
  ShuffleMode mode = ShuffleMode::tokenwise;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ShuffleSpec&) const = default;
};

/// bits[l] == 1 marks a shuffled slot whose position embedding is replaced
/// by the shared unknown row. Indexed over tokens; the vision CLS slot is
/// not part of the mask and is never selected.
struct ShuffleMask {
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  std::size_t popcount() const;
  static ShuffleMask zeros(std::size_t n) { return {std::vector<std::uint8_t>(n, 0)}; }
};

/// shuffled[i] = original[source[i]].
struct Permutation {
  std::vector<std::size_t> source;

  static Permutation identity(std::size_t n);
  /// original index -> shuffled slot.
  std::vector<std::size_t> destination() const;
  bool is_identity() const;
};

struct ShuffledBatch {
  TokenBatch tokens;
  std::vector<ShuffleMask> masks;
  std::vector<Permutation> perms;
};

/// Number of tokens selected out of n: round-half-to-even of gamma * n.
std::size_t selection_count(double gamma, std::size_t n);

/// Contiguous non-overlapping windows [start, end) covering 0..length; the
/// last window may be short. No window means a single window.
std::vector<std::pair<std::size_t, std::size_t>> shuffle_windows(std::size_t length,
                                                                 std::optional<std::size_t> window);

/// Exactly selection_count(gamma, |window|) uniformly chosen positions per window.
ShuffleMask tokenwise_mask(std::size_t length, const ShuffleSpec& spec, Rng& rng);

/// Uniform random arrangement of the mask-1 slots within each window;
/// mask-0 slots map to themselves.
Permutation jigsaw_permutation(const ShuffleMask& mask, std::optional<std::size_t> window, Rng& rng);

/// Blockwise variant on a K x K grid (K even): whole 2x2 blocks are
/// selected and permuted as units.
void blockwise_mask_and_permutation(std::size_t grid_side, double gamma, Rng& rng, ShuffleMask& mask,
                                    Permutation& perm);

/// Reorders the tokens of each sequence by its permutation.
TokenBatch apply_permutations(const TokenBatch& tokens, std::span<const Permutation> perms);
/// Undoes apply_permutations.
TokenBatch invert_permutations(const TokenBatch& shuffled, std::span<const Permutation> perms);

/// Applies the given masks with a fresh permutation per sequence, drawn from
/// rng.split(sequence index).
ShuffledBatch jigsaw_puzzle(const TokenBatch& tokens, std::span<const ShuffleMask> masks, const Rng& rng,
                            std::optional<std::size_t> window = std::nullopt);

/// Masks plus jigsaw permutation for each sequence; sequence b draws from
/// rng.split(b) so its shuffle does not depend on the rest of the batch.
/// Blockwise mode needs the vision grid side.
ShuffledBatch shuffle_tokens(const TokenBatch& tokens, const ShuffleSpec& spec, const Rng& rng,
                             std::size_t grid_side = 0);

/// shuffle_tokens with a mandatory n-gram window (w >= 2).
ShuffledBatch ngram_shuffle(const TokenBatch& tokens, const ShuffleSpec& spec, const Rng& rng);

/// Row l of the result is pos[l] when mask bit l is 0 and unk otherwise.
/// With has_cls the first row is the CLS slot, always pos[0], and mask bit l
/// addresses row l + 1. Returns [T, D] for one mask and [B, T, D] for several.
Var mjp_position_embeddings(const Var& pos, const Var& unk, std::span<const ShuffleMask> masks, bool has_cls);
Tensor mjp_position_embeddings(const PositionEmbeddingTable& pe, const ShuffleMask& mask, bool has_cls);

struct MjpInput {
  Var embedded;
  ShuffledBatch shuffled;
};

/// Shuffles the batch, projects the shuffled tokens and adds the masked
/// position embeddings. Everything downstream is the unchanged transformer.
MjpInput mjp_input_layer(const BoundParams& p, const ModelConfig& cfg, const TokenBatch& batch,
                         const ShuffleSpec& spec, const Rng& rng);

}  // namespace mjplab
