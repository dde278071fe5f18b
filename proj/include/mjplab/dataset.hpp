#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mjplab/tensor_io.hpp"
#include "mjplab/transformer.hpp"

namespace mjplab {

/// Malformed dataset content; the message carries the file and line.
class DataError : public IoError {
 public:
  using IoError::IoError;
};

struct Sample {
  std::vector<std::size_t> tokens;  // text
  Tensor image;                     // vision, [H, W, C]
  std::size_t label = 0;
};

struct Dataset {
  Modality modality = Modality::text;
  std::vector<Sample> items;
  std::vector<std::string> warnings;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  /// Batch of the given items, patchified for vision models.
  TokenBatch batch(std::span<const std::size_t> indices, const ModelConfig& cfg) const;
  std::vector<std::size_t> labels(std::span<const std::size_t> indices) const;
};

/// Text: one sample per line, space-separated token ids, a tab, the label.
/// Blank lines are skipped.
Dataset load_text_dataset(const std::filesystem::path& path);
/// Vision: `labels.csv` with `file,label` rows (optional header) naming
/// tensor files in the same directory.
Dataset load_image_dataset(const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& path, Modality modality);

/// Rejects labels >= num_classes, token ids >= vocab_size, wrong lengths
/// and image shapes that do not match the model.
void validate_dataset(const Dataset& data, const ModelConfig& cfg);

void save_text_dataset(const std::filesystem::path& path, const Dataset& data);
void save_image_dataset(const std::filesystem::path& dir, const Dataset& data);

struct SyntheticOptions {
  std::size_t size = 256;
  std::uint64_t seed = 0;
  double noise = 0.1;  // vision: pixel noise stddev
  std::size_t cues = 1;  // text: sentiment cue units per sequence
  std::size_t cue_span = 4;  // text: units are planted within the first cue_span slots (0: anywhere)
};

/// Striped / checkered images. Class 0 horizontal stripes, 1 vertical
/// stripes, 2 checkerboard, 3 diagonal stripes (classes beyond the model's
/// num_classes are not generated). Stripe width, phase and contrast are
/// random; Gaussian pixel noise is added and values are clamped to [0, 1].
Dataset synthetic_images(const ModelConfig& cfg, const SyntheticOptions& opts);

/// Token-bag sentiment. Ids 0-7 are positive words, 8-15 negative words,
/// 16 is a negator and the rest are filler. Each sequence plants `cues`
/// units at random non-overlapping slots inside the first `cue_span`
/// positions; a unit is a sentiment word, or the
/// negator immediately followed by a word whose polarity it flips. The label
/// is 1 when the flipped-aware polarity sum is positive. Needs vocab >= 24
/// and 2 classes.
Dataset synthetic_text(const ModelConfig& cfg, const SyntheticOptions& opts);

Dataset synthetic_dataset(const ModelConfig& cfg, const SyntheticOptions& opts);

}  // namespace mjplab
