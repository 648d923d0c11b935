#include "bullettrain/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "bullettrain/errors.hpp"
#include "bullettrain/io.hpp"

namespace bt {

using nlohmann::json;

std::string checkpoint_to_json(const Classifier& model) {
  json doc;
  doc["version"] = kCheckpointVersion;
  doc["architecture"] = model.architecture().to_string();
  doc["K"] = model.classes();
  json params = json::array();
  for (const auto& p : model.parameters()) {
    params.push_back({{"shape", p.shape()}, {"data", p.values()}});
  }
  doc["parameters"] = std::move(params);
  return doc.dump();
}

Classifier checkpoint_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  try {
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
    }
    Architecture arch = Architecture::parse(doc.at("architecture").get<std::string>());
    if (doc.at("K").get<std::size_t>() != arch.classes()) {
      throw ConfigError("checkpoint: K does not match architecture");
    }
    std::vector<Tensor> params;
    for (const auto& entry : doc.at("parameters")) {
      params.emplace_back(entry.at("shape").get<Shape>(), entry.at("data").get<std::vector<double>>());
    }
    return Classifier(std::move(arch), std::move(params));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Classifier& model, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_json(model));
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_file(path));
}

}  // namespace bt
