#pragma once

// JSON conversions shared by the checkpoint, trainer and evaluation sources.

#include "json.hpp"
#include "stainforge/generator.hpp"

namespace stainforge::detail {

using json = nlohmann::ordered_json;

inline constexpr int kCheckpointFormatVersion = 1;

json generator_config_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from(const json& j);

/// Parses checkpoint metadata and checks its format_version.
json checkpoint_metadata(const std::string& text, const std::string& source);

}  // namespace stainforge::detail
