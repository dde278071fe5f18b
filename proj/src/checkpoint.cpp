#include "mjplab/checkpoint.hpp"

#include <fstream>

#include "mjplab/tensor_io.hpp"

namespace mjplab {

using nlohmann::json;

std::vector<std::filesystem::path> save_checkpoint(const std::filesystem::path& dir, const Trainable& model,
                                                   const ExperimentConfig& config, std::size_t epoch) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  json params = json::object();
  for (const auto& [name, value] : model.all_params()) {
    params[name] = value.shape();
    const auto path = dir / (name + ".tensor");
    save_tensor(path, value);
    written.push_back(path);
  }
  const json manifest = {{"config", config_to_json(config)}, {"epoch", epoch}, {"parameters", params}};
  const auto path = dir / "manifest.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  written.insert(written.begin(), path);
  return written;
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint manifest " + path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("corrupt checkpoint manifest " + path.string() + ": " + e.what());
  }
  const ExperimentConfig config = config_from_json(manifest.at("config"));
  ParamStore model_params, regressor;
  for (const auto& [name, shape] : manifest.at("parameters").items()) {
    Tensor value = load_tensor(dir / (name + ".tensor"));
    if (value.shape() != shape.get<Shape>()) throw IoError("parameter " + name + " has the wrong shape on disk");
    (name.starts_with("aux.") ? regressor : model_params).emplace(name, std::move(value));
  }
  return Checkpoint{config, Trainable{TransformerModel(config.model, std::move(model_params)), std::move(regressor)},
                    manifest.value("epoch", std::size_t{0})};
}

}  // namespace mjplab
