#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "namedemand/types.hpp"

namespace namedemand {

// {"markets": [{"id", "X", "P", "W", "shares"}], "individuals": [{"market", "Z", "d"}]}
nlohmann::json dataset_to_json(const Dataset& dataset);
// Errors name the offending field, e.g. "markets[2].P".
Dataset dataset_from_json(const nlohmann::json& j, const ValidateOptions& options = {});

// Parse errors carry the line/column reported by the JSON parser.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

Dataset read_dataset(const std::filesystem::path& path, const ValidateOptions& options = {});
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);

}  // namespace namedemand
