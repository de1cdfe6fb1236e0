// serialize.hpp: JSON forms of the physics types. Readers reject unknown
// keys and wrong types with ConfigError.

#pragma once

#include "qfc/complexmat.hpp"
#include "qfc/physmodel.hpp"

#include <json.hpp>

#include <initializer_list>
#include <stdexcept>
#include <string>

namespace qfc {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws ConfigError naming `where` if `j` is not an object or has a key
// outside `allowed`.
void require_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

double json_number(const Json& j, const char* key, const std::string& where);
std::size_t json_count(const Json& j, const char* key, const std::string& where);
std::string json_string(const Json& j, const char* key, const std::string& where);

Json to_json(const SystemModel& m);
SystemModel system_model_from_json(const Json& j, const std::string& where = "system");

Json to_json(const ControlGrid& g);
ControlGrid control_grid_from_json(const Json& j, const std::string& where = "grid");

// {"re": [...], "im": [...]}
Json to_json(const PureState& psi);
PureState pure_state_from_json(const Json& j, const std::string& where);

}  // namespace qfc
