#pragma once

#include <filesystem>
#include <string>

#include "bullettrain/model.hpp"

namespace bt {

inline constexpr int kCheckpointVersion = 1;

// {"version", "architecture", "K", "parameters": [{"shape", "data"}, ...]}.
// Doubles are written in shortest round-trip form, so a save/load cycle is
// bit-exact.
std::string checkpoint_to_json(const Classifier& model);
Classifier checkpoint_from_json(const std::string& text);

void save_checkpoint(const Classifier& model, const std::filesystem::path& path);
Classifier load_checkpoint(const std::filesystem::path& path);

}  // namespace bt
