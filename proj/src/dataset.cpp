#include "mjplab/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mjplab/rng.hpp"

namespace mjplab {

TokenBatch Dataset::batch(std::span<const std::size_t> indices, const ModelConfig& cfg) const {
  if (modality == Modality::text) {
    std::vector<std::vector<std::size_t>> ids;
    ids.reserve(indices.size());
    for (std::size_t i : indices) ids.push_back(items.at(i).tokens);
    return TokenBatch::text(std::move(ids));
  }
  const std::size_t l = cfg.seq_len, pd = cfg.patch_dim();
  Tensor patches({indices.size(), l, pd});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor tokens = patchify(items.at(indices[b]).image, cfg.patch_size);
    if (tokens.size() != l * pd) throw ShapeError("image does not patchify to the model's token grid");
    std::copy(tokens.data().begin(), tokens.data().end(), patches.data().begin() + static_cast<std::ptrdiff_t>(b * l * pd));
  }
  return TokenBatch::vision(std::move(patches));
}

std::vector<std::size_t> Dataset::labels(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(items.at(i).label);
  return out;
}

namespace {

std::size_t parse_index(const std::string& field, const std::string& where) {
  if (field.empty() || !std::all_of(field.begin(), field.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw DataError(where + ": expected a non-negative integer, got '" + field + "'");
  }
  try {
    return static_cast<std::size_t>(std::stoull(field));
  } catch (const std::exception&) {
    throw DataError(where + ": integer out of range '" + field + "'");
  }
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \r\t");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \r\t");
  return s.substr(first, last - first + 1);
}

}  // namespace

Dataset load_text_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open text dataset " + path.string());
  Dataset data;
  data.modality = Modality::text;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw DataError(where + ": expected '<ids>\\t<label>'");
    }
    Sample s;
    std::istringstream ids(line.substr(0, tab));
    std::string field;
    while (ids >> field) s.tokens.push_back(parse_index(field, where));
    if (s.tokens.empty()) throw DataError(where + ": no token ids");
    s.label = parse_index(trim(line.substr(tab + 1)), where);
    data.items.push_back(std::move(s));
  }
  if (data.items.empty()) data.warnings.push_back("dataset " + path.string() + " is empty");
  return data;
}

Dataset load_image_dataset(const std::filesystem::path& dir) {
  const auto labels_path = dir / "labels.csv";
  std::ifstream in(labels_path);
  if (!in) throw IoError("cannot open " + labels_path.string());
  Dataset data;
  data.modality = Modality::vision;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = labels_path.string() + ":" + std::to_string(line_no);
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(where + ": expected 'file,label'");
    const std::string file = trim(line.substr(0, comma));
    const std::string label = trim(line.substr(comma + 1));
    if (line_no == 1 && file == "file" && label == "label") continue;
    Sample s;
    s.label = parse_index(label, where);
    try {
      s.image = load_tensor(dir / file);
    } catch (const IoError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (s.image.rank() != 3) throw DataError(where + ": image must be [H, W, C], got " + shape_str(s.image.shape()));
    data.items.push_back(std::move(s));
  }
  if (data.items.empty()) data.warnings.push_back("dataset " + dir.string() + " is empty");
  return data;
}

Dataset load_dataset(const std::filesystem::path& path, Modality modality) {
  if (!std::filesystem::exists(path)) throw IoError("dataset path does not exist: " + path.string());
  return modality == Modality::text ? load_text_dataset(path) : load_image_dataset(path);
}

void validate_dataset(const Dataset& data, const ModelConfig& cfg) {
  if (data.modality != cfg.mode) throw DataError("dataset modality does not match the model");
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    const Sample& s = data.items[i];
    const std::string where = "sample " + std::to_string(i);
    if (s.label >= cfg.num_classes) {
      throw DataError(where + ": label " + std::to_string(s.label) + " >= num_classes " + std::to_string(cfg.num_classes));
    }
    if (cfg.mode == Modality::text) {
      if (s.tokens.size() != cfg.seq_len) {
        throw DataError(where + ": " + std::to_string(s.tokens.size()) + " tokens, model expects " +
                        std::to_string(cfg.seq_len));
      }
      for (std::size_t id : s.tokens) {
        if (id >= cfg.vocab_size) {
          throw DataError(where + ": token id " + std::to_string(id) + " >= vocab_size " + std::to_string(cfg.vocab_size));
        }
      }
    } else {
      const Shape want{cfg.image_side(), cfg.image_side(), cfg.channels};
      if (s.image.shape() != want) {
        throw DataError(where + ": image " + shape_str(s.image.shape()) + ", model expects " + shape_str(want));
      }
    }
  }
}

void save_text_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const Sample& s : data.items) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) out << (i ? " " : "") << s.tokens[i];
    out << '\t' << s.label << '\n';
  }
}

void save_image_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "labels.csv", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "labels.csv").string());
  out << "file,label\n";
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    const std::string name = "img_" + std::to_string(i) + ".tensor";
    save_tensor(dir / name, data.items[i].image);
    out << name << ',' << data.items[i].label << '\n';
  }
}

Dataset synthetic_images(const ModelConfig& cfg, const SyntheticOptions& opts) {
  if (cfg.mode != Modality::vision) throw ConfigError("synthetic images need a vision model");
  const std::size_t side = cfg.image_side(), channels = cfg.channels;
  const std::size_t classes = std::min<std::size_t>(cfg.num_classes, 4);
  Dataset data;
  data.modality = Modality::vision;
  const Rng root(opts.seed, 0x1a6e);
  for (std::size_t n = 0; n < opts.size; ++n) {
    Rng rng = root.split(n);
    Sample s;
    s.label = static_cast<std::size_t>(rng.below(classes));
    const std::size_t width = 2 + static_cast<std::size_t>(rng.below(2));
    const std::size_t phase_y = static_cast<std::size_t>(rng.below(width * 2));
    const std::size_t phase_x = static_cast<std::size_t>(rng.below(width * 2));
    const double lo = rng.uniform(0.0, 0.3), hi = rng.uniform(0.7, 1.0);
    s.image = Tensor({side, side, channels});
    std::vector<double> gain(channels);
    for (double& g : gain) g = rng.uniform(0.8, 1.0);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        std::size_t on = 0;
        switch (s.label) {
          case 0: on = ((y + phase_y) / width) % 2; break;
          case 1: on = ((x + phase_x) / width) % 2; break;
          case 2: on = ((y + phase_y) / width + (x + phase_x) / width) % 2; break;
          default: on = ((x + y + phase_x) / width) % 2; break;
        }
        for (std::size_t c = 0; c < channels; ++c) {
          const double v = (on ? hi : lo) * gain[c] + opts.noise * rng.normal();
          s.image[(y * side + x) * channels + c] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
    data.items.push_back(std::move(s));
  }
  return data;
}

Dataset synthetic_text(const ModelConfig& cfg, const SyntheticOptions& opts) {
  if (cfg.mode != Modality::text) throw ConfigError("synthetic text needs a text model");
  if (cfg.vocab_size < 24 || cfg.num_classes != 2) throw ConfigError("synthetic text needs vocab_size >= 24 and 2 classes");
  constexpr std::size_t kNegator = 16, kFirstFiller = 17;
  const std::size_t l = cfg.seq_len;
  const std::size_t span = opts.cue_span == 0 ? l : std::min(opts.cue_span, l);
  if (opts.cues == 0 || opts.cues % 2 == 0 || 3 * opts.cues - 1 > span) {
    throw ConfigError("synthetic text needs an odd cue count with 3*cues - 1 <= cue_span");
  }
  Dataset data;
  data.modality = Modality::text;
  const Rng root(opts.seed, 0x7e47);
  for (std::size_t n = 0; n < opts.size; ++n) {
    Rng rng = root.split(n);
    Sample s;
    s.label = static_cast<std::size_t>(rng.below(2));
    // Effective polarities with a majority matching the label.
    std::vector<int> polarity(opts.cues);
    do {
      for (int& p : polarity) p = rng.below(2) ? 1 : -1;
    } while ((std::count(polarity.begin(), polarity.end(), 1) * 2 > static_cast<std::ptrdiff_t>(opts.cues)) !=
             (s.label == 1));

    s.tokens.assign(l, 0);
    for (std::size_t& t : s.tokens) t = kFirstFiller + static_cast<std::size_t>(rng.below(cfg.vocab_size - kFirstFiller));
    std::vector<char> negate(opts.cues);
    for (char& g : negate) g = rng.below(2) == 1;
    // Two-slot units first so a free pair always exists.
    std::vector<std::size_t> order(opts.cues);
    std::iota(order.begin(), order.end(), 0);
    std::stable_partition(order.begin(), order.end(), [&](std::size_t u) { return negate[u] != 0; });
    std::vector<char> used(l, 0);
    for (std::size_t u : order) {
      const int p = polarity[u];
      const bool negated = negate[u] != 0;
      const int word_polarity = negated ? -p : p;
      const std::size_t word = (word_polarity > 0 ? 0 : 8) + static_cast<std::size_t>(rng.below(8));
      const std::size_t width = negated ? 2 : 1;
      std::size_t start = 0;
      do {
        start = static_cast<std::size_t>(rng.below(span - width + 1));
      } while (used[start] || used[start + width - 1]);
      if (negated) {
        s.tokens[start] = kNegator;
        used[start] = 1;
      }
      s.tokens[start + width - 1] = word;
      used[start + width - 1] = 1;
    }
    data.items.push_back(std::move(s));
  }
  return data;
}

Dataset synthetic_dataset(const ModelConfig& cfg, const SyntheticOptions& opts) {
  return cfg.mode == Modality::text ? synthetic_text(cfg, opts) : synthetic_images(cfg, opts);
}

}  // namespace mjplab
