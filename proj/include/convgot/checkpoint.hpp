#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "convgot/autodiff.hpp"

namespace convgot {

// {"name": {"shape": [rows, cols], "data": [...]}, ...} with names in sorted order.
nlohmann::json params_to_json(const ParamSet& params);
ParamSet params_from_json(const nlohmann::json& j);

// Overwrites values of parameters present in both; throws on shape mismatch or missing names.
void load_params_into(ParamSet& params, const nlohmann::json& j);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace convgot
