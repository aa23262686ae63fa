#pragma once

#include <set>
#include <string>

#include "arch/model.hpp"
#include "json.hpp"

namespace tbsn {

// Throws std::invalid_argument naming the offending key; every config parser
// runs this so typos never pass silently.
void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                         const std::string& context);

nlohmann::json to_json(const TBSNConfig& cfg);
nlohmann::json to_json(const StudentUNetConfig& cfg);

// Parsers start from the given defaults and overlay present keys.
TBSNConfig tbsn_config_from_json(const nlohmann::json& j, TBSNConfig defaults = {});
StudentUNetConfig student_config_from_json(const nlohmann::json& j,
                                           StudentUNetConfig defaults = {});

std::string csa_mode_name(CsaMode m);
CsaMode csa_mode_from_name(const std::string& s);
std::string downsample_name(DownsampleMode m);
DownsampleMode downsample_from_name(const std::string& s);

}  // namespace tbsn
