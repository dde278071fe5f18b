#include "mjplab/config.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include "mjplab/tensor_io.hpp"

namespace mjplab {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a table");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for " + where + "." + key + ": " + e.what());
  }
}

json campaign_to_json(const CampaignConfig& c) {
  json j = attack_config_to_json(c.attack);
  j["gamma"] = c.gamma;
  j["samples"] = c.samples;
  std::vector<std::string> settings;
  for (AttackSetting s : c.settings) settings.push_back(to_string(s));
  j["settings"] = settings;
  return j;
}

CampaignConfig campaign_from_json(const json& j) {
  reject_unknown(j,
                 {"iterations", "learning_rate", "distance", "alpha", "setting", "init", "label_known", "seed",
                  "lr_decay", "optimizer", "restarts", "gamma", "samples", "settings"},
                 "attack");
  CampaignConfig c;
  json base = j;
  for (const char* k : {"gamma", "samples", "settings"}) base.erase(k);
  try {
    c.attack = attack_config_from_json(base);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad attack table: ") + e.what());
  }
  c.gamma = get_or(j, "gamma", c.gamma, "attack");
  c.samples = get_or(j, "samples", c.samples, "attack");
  if (j.contains("settings")) {
    c.settings.clear();
    for (const auto& s : j.at("settings")) c.settings.push_back(parse_attack_setting(s.get<std::string>()));
  }
  if (c.gamma < 0 || c.gamma > 1) throw ConfigError("attack.gamma must be in [0, 1]");
  if (c.samples < 1) throw ConfigError("attack.samples must be >= 1");
  return c;
}

}  // namespace

json model_config_to_json(const ModelConfig& cfg) {
  return {{"mode", to_string(cfg.mode)},       {"seq_len", cfg.seq_len},       {"embed_dim", cfg.embed_dim},
          {"heads", cfg.heads},                {"layers", cfg.layers},         {"mlp_dim", cfg.mlp_dim},
          {"num_classes", cfg.num_classes},    {"vocab_size", cfg.vocab_size}, {"patch_size", cfg.patch_size},
          {"channels", cfg.channels},          {"grid_side", cfg.grid_side}};
}

ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j,
                 {"mode", "seq_len", "embed_dim", "heads", "layers", "mlp_dim", "num_classes", "vocab_size",
                  "patch_size", "channels", "grid_side"},
                 "model");
  ModelConfig cfg;
  cfg.mode = parse_modality(get_or<std::string>(j, "mode", to_string(cfg.mode), "model"));
  cfg.seq_len = get_or(j, "seq_len", cfg.seq_len, "model");
  cfg.embed_dim = get_or(j, "embed_dim", cfg.embed_dim, "model");
  cfg.heads = get_or(j, "heads", cfg.heads, "model");
  cfg.layers = get_or(j, "layers", cfg.layers, "model");
  cfg.mlp_dim = get_or(j, "mlp_dim", cfg.mlp_dim, "model");
  cfg.num_classes = get_or(j, "num_classes", cfg.num_classes, "model");
  cfg.vocab_size = get_or(j, "vocab_size", cfg.vocab_size, "model");
  cfg.patch_size = get_or(j, "patch_size", cfg.patch_size, "model");
  cfg.channels = get_or(j, "channels", cfg.channels, "model");
  cfg.grid_side = get_or(j, "grid_side", cfg.grid_side, "model");
  cfg.validate();
  return cfg;
}

json shuffle_spec_to_json(const ShuffleSpec& spec) {
  return {{"gamma", spec.gamma},
          {"window", spec.window ? json(*spec.window) : json(nullptr)},
          {"mode", to_string(spec.mode)},
          {"seed", spec.seed}};
}

ShuffleSpec shuffle_spec_from_json(const json& j) {
  reject_unknown(j, {"gamma", "window", "mode", "seed"}, "shuffle");
  ShuffleSpec spec;
  spec.gamma = get_or(j, "gamma", spec.gamma, "shuffle");
  if (j.contains("window") && !j.at("window").is_null()) spec.window = get_or<std::size_t>(j, "window", 0, "shuffle");
  spec.mode = parse_shuffle_mode(get_or<std::string>(j, "mode", to_string(spec.mode), "shuffle"));
  spec.seed = get_or(j, "seed", spec.seed, "shuffle");
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

void ExperimentConfig::validate() const {
  model.validate();
  try {
    shuffle.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  train.validate();
  if (aux.weights.lambda < 0) throw ConfigError("aux.lambda must be >= 0");
  if (data.source != "synthetic" && data.source != "files") throw ConfigError("data.source must be synthetic|files");
  if (data.source == "files" && (data.train_path.empty() || data.val_path.empty())) {
    throw ConfigError("data.source = files needs data.train_path and data.val_path");
  }
  for (double g : sweep_gammas) {
    if (g < 0 || g > 1) throw ConfigError("sweep_gammas entries must be in [0, 1]");
  }
  for (std::size_t d : pca_dims) {
    if (d < 1) throw ConfigError("pca_dims entries must be >= 1");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["model"] = model_config_to_json(cfg.model);
  j["shuffle"] = shuffle_spec_to_json(cfg.shuffle);
  j["aux"] = {{"aux_loss", to_string(cfg.aux.kind)},
              {"lambda", cfg.aux.weights.lambda},
              {"dal_detach_pe", cfg.aux.detach_pe}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.learning_rate},
                {"weight_decay", cfg.train.weight_decay},
                {"warmup_fraction", cfg.train.warmup_fraction},
                {"grad_clip", cfg.train.grad_clip}};
  j["data"] = {{"source", cfg.data.source},         {"train_path", cfg.data.train_path},
               {"val_path", cfg.data.val_path},     {"train_size", cfg.data.train_size},
               {"val_size", cfg.data.val_size},     {"noise", cfg.data.noise},
               {"cues", cfg.data.cues},           {"cue_span", cfg.data.cue_span}};
  j["attack"] = cfg.attack ? campaign_to_json(*cfg.attack) : json(nullptr);
  j["sweep_gammas"] = cfg.sweep_gammas;
  j["pca_dims"] = cfg.pca_dims;
  j["output_dir"] = cfg.output_dir;
  j["seed"] = cfg.seed;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j,
                 {"model", "shuffle", "aux", "train", "data", "attack", "sweep_gammas", "pca_dims", "output_dir", "seed"},
                 "");
  ExperimentConfig cfg;
  try {
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
    if (j.contains("shuffle")) cfg.shuffle = shuffle_spec_from_json(j.at("shuffle"));
    if (j.contains("aux")) {
      const json& a = j.at("aux");
      reject_unknown(a, {"aux_loss", "lambda", "dal_detach_pe"}, "aux");
      cfg.aux.kind = parse_aux_kind(get_or<std::string>(a, "aux_loss", "none", "aux"));
      cfg.aux.weights.lambda = get_or(a, "lambda", cfg.aux.weights.lambda, "aux");
      cfg.aux.detach_pe = get_or(a, "dal_detach_pe", cfg.aux.detach_pe, "aux");
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      reject_unknown(t, {"epochs", "batch_size", "learning_rate", "weight_decay", "warmup_fraction", "grad_clip"},
                     "train");
      cfg.train.epochs = get_or(t, "epochs", cfg.train.epochs, "train");
      cfg.train.batch_size = get_or(t, "batch_size", cfg.train.batch_size, "train");
      cfg.train.learning_rate = get_or(t, "learning_rate", cfg.train.learning_rate, "train");
      cfg.train.weight_decay = get_or(t, "weight_decay", cfg.train.weight_decay, "train");
      cfg.train.warmup_fraction = get_or(t, "warmup_fraction", cfg.train.warmup_fraction, "train");
      cfg.train.grad_clip = get_or(t, "grad_clip", cfg.train.grad_clip, "train");
    }
    if (j.contains("data")) {
      const json& d = j.at("data");
      reject_unknown(d, {"source", "train_path", "val_path", "train_size", "val_size", "noise", "cues", "cue_span"},
                     "data");
      cfg.data.source = get_or(d, "source", cfg.data.source, "data");
      cfg.data.train_path = get_or(d, "train_path", cfg.data.train_path, "data");
      cfg.data.val_path = get_or(d, "val_path", cfg.data.val_path, "data");
      cfg.data.train_size = get_or(d, "train_size", cfg.data.train_size, "data");
      cfg.data.val_size = get_or(d, "val_size", cfg.data.val_size, "data");
      cfg.data.noise = get_or(d, "noise", cfg.data.noise, "data");
      cfg.data.cues = get_or(d, "cues", cfg.data.cues, "data");
      cfg.data.cue_span = get_or(d, "cue_span", cfg.data.cue_span, "data");
    }
    if (j.contains("attack") && !j.at("attack").is_null()) cfg.attack = campaign_from_json(j.at("attack"));
    cfg.sweep_gammas = get_or(j, "sweep_gammas", cfg.sweep_gammas, "");
    cfg.pca_dims = get_or(j, "pca_dims", cfg.pca_dims, "");
    cfg.output_dir = get_or(j, "output_dir", cfg.output_dir, "");
    cfg.seed = get_or(j, "seed", cfg.seed, "");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

std::string canonical_config(const ExperimentConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(canonical_config(cfg)); }

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << canonical_config(cfg);
}

namespace {

void collect_leaves(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      collect_leaves(value, path, out);
    } else {
      out.push_back(path);
    }
  }
}

}  // namespace

std::vector<std::string> config_keys() {
  ExperimentConfig cfg;
  cfg.attack = CampaignConfig{};
  std::vector<std::string> keys;
  collect_leaves(config_to_json(cfg), "", keys);
  return keys;
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::pair<std::string, std::string>>& overrides) {
  const std::vector<std::string> keys = config_keys();
  json j = config_to_json(cfg);
  for (const auto& [key, value] : overrides) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown config key '" + key + "'");
    if (key.starts_with("attack.") && j["attack"].is_null()) j["attack"] = campaign_to_json(CampaignConfig{});
    std::string pointer = "/" + key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::parse_error&) {
      parsed = value;
    }
    j[json::json_pointer(pointer)] = parsed;
  }
  cfg = config_from_json(j);
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  apply_overrides(cfg, {{key, value}});
}

}  // namespace mjplab
