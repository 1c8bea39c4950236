#pragma once

#include <json.hpp>

#include "fmue/model.hpp"

namespace fmue {

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const LoRAConfig& c);
void from_json(const nlohmann::json& j, LoRAConfig& c);

}  // namespace fmue
