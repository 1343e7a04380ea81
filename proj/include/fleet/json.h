#pragma once

// JSON bindings for the domain types. Kept out of model.h so translation
// units that only need the types do not pay for the JSON header.

#include <json.hpp>
#include <string>
#include <string_view>

#include "fleet/error.h"
#include "fleet/model.h"

namespace fleet {

using Json = nlohmann::json;

void to_json(Json& j, const Instruction& v);
void from_json(const Json& j, Instruction& v);
void to_json(Json& j, const ModelSpec& v);
void from_json(const Json& j, ModelSpec& v);
void to_json(Json& j, const Query& v);
void from_json(const Json& j, Query& v);
void to_json(Json& j, const Artifact& v);
void from_json(const Json& j, Artifact& v);
void to_json(Json& j, const Task& v);
void from_json(const Json& j, Task& v);
void to_json(Json& j, const Resource& v);
void from_json(const Json& j, Resource& v);
void to_json(Json& j, const DataSourceRef& v);
void from_json(const Json& j, DataSourceRef& v);
void to_json(Json& j, const Project& v);
void from_json(const Json& j, Project& v);
void to_json(Json& j, const DataSource& v);
void from_json(const Json& j, DataSource& v);

// Compact dump with sorted keys (nlohmann objects are ordered maps).
std::string canonical_dump(const Json& j);

// Parses text; throws MalformedDocument on syntax errors.
Json parse_json(std::string_view text);

// Field access that reports MalformedDocument instead of nlohmann errors.
const Json& require(const Json& j, std::string_view key);

template <class T>
T require_as(const Json& j, std::string_view key) {
  const Json& v = require(j, key);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedDocument,
                "field '" + std::string(key) + "': " + e.what());
  }
}

}  // namespace fleet
