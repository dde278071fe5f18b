#include "mjplab/mjp.hpp"

#include <algorithm>
#include <cmath>

namespace mjplab {

std::string to_string(ShuffleMode m) { return m == ShuffleMode::blockwise ? "blockwise" : "tokenwise"; }

ShuffleMode parse_shuffle_mode(const std::string& s) {
  if (s == "tokenwise") return ShuffleMode::tokenwise;
  if (s == "blockwise") return ShuffleMode::blockwise;
  throw ConfigError("unknown shuffle mode '" + s + "' (expected tokenwise|blockwise)");
}

void ShuffleSpec::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("shuffle gamma must lie in [0, 1]");
  if (window && *window < 2) throw ConfigError("shuffle window must be at least 2");
}

std::size_t ShuffleMask::popcount() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Permutation Permutation::identity(std::size_t n) {
  Permutation p;
  p.source.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.source[i] = i;
  return p;
}

std::vector<std::size_t> Permutation::destination() const {
  std::vector<std::size_t> dst(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) dst[source[i]] = i;
  return dst;
}

bool Permutation::is_identity() const {
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i] != i) return false;
  }
  return true;
}

std::size_t selection_count(double gamma, std::size_t n) {
  return static_cast<std::size_t>(std::nearbyint(gamma * static_cast<double>(n)));
}

std::vector<std::pair<std::size_t, std::size_t>> shuffle_windows(std::size_t length,
                                                                 std::optional<std::size_t> window) {
  const std::size_t w = window ? std::max<std::size_t>(*window, 1) : std::max<std::size_t>(length, 1);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t start = 0; start < length; start += w) out.emplace_back(start, std::min(length, start + w));
  return out;
}

ShuffleMask tokenwise_mask(std::size_t length, const ShuffleSpec& spec, Rng& rng) {
  spec.validate();
  ShuffleMask mask = ShuffleMask::zeros(length);
  for (const auto& [start, end] : shuffle_windows(length, spec.window)) {
    const std::size_t n = end - start;
    for (std::size_t offset : rng.choose(n, selection_count(spec.gamma, n))) mask.bits[start + offset] = 1;
  }
  return mask;
}

Permutation jigsaw_permutation(const ShuffleMask& mask, std::optional<std::size_t> window, Rng& rng) {
  Permutation perm = Permutation::identity(mask.size());
  std::vector<std::size_t> slots;
  for (const auto& [start, end] : shuffle_windows(mask.size(), window)) {
    slots.clear();
    for (std::size_t i = start; i < end; ++i) {
      if (mask.bits[i]) slots.push_back(i);
    }
    const std::vector<std::size_t> order = rng.permutation(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) perm.source[slots[i]] = slots[order[i]];
  }
  return perm;
}

void blockwise_mask_and_permutation(std::size_t grid_side, double gamma, Rng& rng, ShuffleMask& mask,
                                    Permutation& perm) {
  if (grid_side == 0 || grid_side % 2 != 0) {
    throw ConfigError("blockwise shuffling needs an even grid side, got " + std::to_string(grid_side));
  }
  const std::size_t per_row = grid_side / 2;
  const std::size_t blocks = per_row * per_row;
  mask = ShuffleMask::zeros(grid_side * grid_side);
  perm = Permutation::identity(grid_side * grid_side);
  const std::vector<std::size_t> chosen = rng.choose(blocks, selection_count(gamma, blocks));
  const std::vector<std::size_t> order = rng.permutation(chosen.size());
  auto cell = [&](std::size_t block, std::size_t dy, std::size_t dx) {
    return (2 * (block / per_row) + dy) * grid_side + 2 * (block % per_row) + dx;
  };
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    for (std::size_t dy = 0; dy < 2; ++dy) {
      for (std::size_t dx = 0; dx < 2; ++dx) {
        const std::size_t dst = cell(chosen[i], dy, dx);
        mask.bits[dst] = 1;
        perm.source[dst] = cell(chosen[order[i]], dy, dx);
      }
    }
  }
}

TokenBatch apply_permutations(const TokenBatch& tokens, std::span<const Permutation> perms) {
  const std::size_t b = tokens.batch_size();
  const std::size_t l = tokens.length();
  if (perms.size() != b) throw ShapeError("one permutation per sequence required");
  for (const Permutation& p : perms) {
    if (p.source.size() != l) throw ShapeError("permutation length does not match token count");
  }
  if (tokens.modality == Modality::text) {
    std::vector<std::vector<std::size_t>> ids(b, std::vector<std::size_t>(l));
    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t i = 0; i < l; ++i) ids[s][i] = tokens.ids[s][perms[s].source[i]];
    }
    return TokenBatch::text(std::move(ids));
  }
  const std::size_t width = tokens.patches.shape()[2];
  Tensor out(tokens.patches.shape());
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t i = 0; i < l; ++i) {
      const std::size_t src = (s * l + perms[s].source[i]) * width;
      std::copy_n(tokens.patches.data().begin() + static_cast<std::ptrdiff_t>(src), width,
                  out.data().begin() + static_cast<std::ptrdiff_t>((s * l + i) * width));
    }
  }
  return TokenBatch::vision(std::move(out));
}

TokenBatch invert_permutations(const TokenBatch& shuffled, std::span<const Permutation> perms) {
  std::vector<Permutation> inverse;
  inverse.reserve(perms.size());
  for (const Permutation& p : perms) inverse.push_back({p.destination()});
  return apply_permutations(shuffled, inverse);
}

ShuffledBatch jigsaw_puzzle(const TokenBatch& tokens, std::span<const ShuffleMask> masks, const Rng& rng,
                            std::optional<std::size_t> window) {
  if (masks.size() != tokens.batch_size()) throw ShapeError("one mask per sequence required");
  ShuffledBatch out;
  out.masks.assign(masks.begin(), masks.end());
  for (std::size_t s = 0; s < masks.size(); ++s) {
    if (masks[s].size() != tokens.length()) throw ShapeError("mask length does not match token count");
    Rng local = rng.split(s);
    out.perms.push_back(jigsaw_permutation(masks[s], window, local));
  }
  out.tokens = apply_permutations(tokens, out.perms);
  return out;
}

ShuffledBatch shuffle_tokens(const TokenBatch& tokens, const ShuffleSpec& spec, const Rng& rng,
                             std::size_t grid_side) {
  spec.validate();
  const std::size_t b = tokens.batch_size();
  const std::size_t l = tokens.length();
  ShuffledBatch out;
  out.masks.reserve(b);
  out.perms.reserve(b);
  for (std::size_t s = 0; s < b; ++s) {
    Rng local = rng.split(s);
    ShuffleMask mask;
    Permutation perm;
    if (spec.mode == ShuffleMode::blockwise) {
      if (grid_side * grid_side != l) throw ConfigError("blockwise shuffling needs grid_side^2 == token count");
      blockwise_mask_and_permutation(grid_side, spec.gamma, local, mask, perm);
    } else {
      mask = tokenwise_mask(l, spec, local);
      perm = jigsaw_permutation(mask, spec.window, local);
    }
    out.masks.push_back(std::move(mask));
    out.perms.push_back(std::move(perm));
  }
  out.tokens = apply_permutations(tokens, out.perms);
  return out;
}

ShuffledBatch ngram_shuffle(const TokenBatch& tokens, const ShuffleSpec& spec, const Rng& rng) {
  if (!spec.window || *spec.window < 2) throw ConfigError("n-gram shuffling needs a window of at least 2");
  return shuffle_tokens(tokens, spec, rng);
}

namespace {

std::vector<std::size_t> masked_row_index(const ShuffleMask& mask, std::size_t rows, bool has_cls) {
  const std::size_t offset = has_cls ? 1 : 0;
  if (mask.size() + offset > rows) {
    throw ShapeError("mask of length " + std::to_string(mask.size()) + " exceeds " + std::to_string(rows) +
                     " position rows");
  }
  std::vector<std::size_t> index(rows);
  for (std::size_t t = 0; t < rows; ++t) {
    const bool masked = t >= offset && t - offset < mask.size() && mask.bits[t - offset];
    index[t] = masked ? rows : t;
  }
  return index;
}

}  // namespace

Var mjp_position_embeddings(const Var& pos, const Var& unk, std::span<const ShuffleMask> masks, bool has_cls) {
  if (pos.shape().size() != 2 || unk.shape().size() != 2 || unk.shape()[0] != 1 || unk.shape()[1] != pos.shape()[1]) {
    throw ShapeError("position table " + shape_str(pos.shape()) + " and unknown row " + shape_str(unk.shape()) +
                     " are incompatible");
  }
  if (masks.empty()) throw ShapeError("mjp_position_embeddings needs at least one mask");
  const std::size_t rows = pos.shape()[0];
  const Var parts[] = {pos, unk};
  const Var table = concat(parts, 0);
  std::vector<std::size_t> index;
  index.reserve(rows * masks.size());
  for (const ShuffleMask& m : masks) {
    const auto one = masked_row_index(m, rows, has_cls);
    index.insert(index.end(), one.begin(), one.end());
  }
  const Var gathered = gather_rows(table, index);
  if (masks.size() == 1) return gathered;
  return reshape(gathered, {masks.size(), rows, pos.shape()[1]});
}

Tensor mjp_position_embeddings(const PositionEmbeddingTable& pe, const ShuffleMask& mask, bool has_cls) {
  const std::size_t rows = pe.pos.shape()[0];
  const std::size_t d = pe.pos.shape()[1];
  Tensor out({rows, d});
  const auto index = masked_row_index(mask, rows, has_cls);
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t j = 0; j < d; ++j) out[t * d + j] = index[t] == rows ? pe.unk[j] : pe.pos[index[t] * d + j];
  }
  return out;
}

MjpInput mjp_input_layer(const BoundParams& p, const ModelConfig& cfg, const TokenBatch& batch,
                         const ShuffleSpec& spec, const Rng& rng) {
  MjpInput out;
  out.shuffled = shuffle_tokens(batch, spec, rng, cfg.grid_side);
  const Var projected = project_tokens(p, cfg, out.shuffled.tokens);
  const Var pe = mjp_position_embeddings(p["pe.pos"], p["pe.unk"], out.shuffled.masks, cfg.has_cls());
  out.embedded = embed_input(p, cfg, projected, pe);
  return out;
}

}  // namespace mjplab
