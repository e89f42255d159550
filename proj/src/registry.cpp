#include "omniseq/registry.hpp"

#include <mutex>

namespace omniseq {

std::string_view to_string(FieldType t) {
  switch (t) {
    case FieldType::kInteger: return "integer";
    case FieldType::kReal: return "real";
    case FieldType::kString: return "string";
    case FieldType::kIntegerList: return "integer_list";
    case FieldType::kTokenList: return "token_list";
  }
  return "integer";
}

FieldType parse_field_type(std::string_view s) {
  for (auto t : {FieldType::kInteger, FieldType::kReal, FieldType::kString,
                 FieldType::kIntegerList, FieldType::kTokenList}) {
    if (to_string(t) == s) return t;
  }
  throw DataError("unknown field type '" + std::string(s) + "'");
}

Json to_json(const FeatureRecord& r) {
  return Json{{"user", r.user},
              {"schema", r.schema},
              {"version", r.version},
              {"as_of", r.as_of},
              {"payload", r.payload}};
}

FeatureRecord record_from_json(const Json& j) {
  try {
    return FeatureRecord{j.at("user").get<UserId>(), j.at("schema").get<std::string>(),
                         j.at("version").get<int>(), j.at("payload"),
                         j.at("as_of").get<Timestamp>()};
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed feature record: ") + e.what());
  }
}

namespace {

bool is_integer_list(const Json& v) {
  if (!v.is_array()) return false;
  for (const auto& x : v) {
    if (!x.is_number_integer()) return false;
  }
  return true;
}

// A token is {"ts": int, "item": int} or {"ts": int, "set": [int, ...]}.
bool is_token_list(const Json& v) {
  if (!v.is_array()) return false;
  for (const auto& tok : v) {
    if (!tok.is_object() || !tok.contains("ts") || !tok["ts"].is_number_integer()) return false;
    const bool item = tok.contains("item") && tok["item"].is_number_integer();
    const bool set = tok.contains("set") && is_integer_list(tok["set"]) && !tok["set"].empty();
    if (item == set) return false;
  }
  return true;
}

bool matches(FieldType type, const Json& v) {
  switch (type) {
    case FieldType::kInteger: return v.is_number_integer();
    case FieldType::kReal: return v.is_number();
    case FieldType::kString: return v.is_string();
    case FieldType::kIntegerList: return is_integer_list(v);
    case FieldType::kTokenList: return is_token_list(v);
  }
  return false;
}

}  // namespace

FeatureRegistry::FeatureRegistry(const FeatureRegistry& other) {
  std::shared_lock lock(other.mu_);
  schemas_ = other.schemas_;
}

FeatureRegistry& FeatureRegistry::operator=(const FeatureRegistry& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_);
  std::shared_lock other_lock(other.mu_);
  schemas_ = other.schemas_;
  return *this;
}

int FeatureRegistry::register_schema(FeatureSchema schema) {
  if (schema.name.empty()) {
    throw RegistryError(RegistryError::Kind::kInvalidSchema, "schema name must not be empty");
  }
  if (schema.fields.empty()) {
    throw RegistryError(RegistryError::Kind::kInvalidSchema,
                        "schema '" + schema.name + "' declares no fields");
  }
  std::unique_lock lock(mu_);
  auto& versions = schemas_[schema.name];
  schema.version = static_cast<int>(versions.size()) + 1;
  versions.push_back(std::move(schema));
  return versions.back().version;
}

const FeatureSchema& FeatureRegistry::find_locked(std::string_view name, int version) const {
  auto it = schemas_.find(name);
  if (it == schemas_.end()) {
    throw RegistryError(RegistryError::Kind::kUnknownSchema,
                        "unknown schema '" + std::string(name) + "'");
  }
  if (version < 1 || version > static_cast<int>(it->second.size())) {
    throw RegistryError(RegistryError::Kind::kUnknownVersion,
                        "schema '" + std::string(name) + "' has no version " +
                            std::to_string(version));
  }
  return it->second[static_cast<std::size_t>(version - 1)];
}

FeatureSchema FeatureRegistry::get(std::string_view name, int version) const {
  std::shared_lock lock(mu_);
  return find_locked(name, version);
}

FeatureSchema FeatureRegistry::latest(std::string_view name) const {
  std::shared_lock lock(mu_);
  auto it = schemas_.find(name);
  if (it == schemas_.end()) {
    throw RegistryError(RegistryError::Kind::kUnknownSchema,
                        "unknown schema '" + std::string(name) + "'");
  }
  return it->second.back();
}

bool FeatureRegistry::contains(std::string_view name) const {
  std::shared_lock lock(mu_);
  return schemas_.find(name) != schemas_.end();
}

std::vector<FeatureSchema> FeatureRegistry::list() const {
  std::shared_lock lock(mu_);
  std::vector<FeatureSchema> out;
  for (const auto& [name, versions] : schemas_) {
    out.insert(out.end(), versions.begin(), versions.end());
  }
  return out;
}

const FeatureRecord& FeatureRegistry::validate(const FeatureRecord& record) const {
  std::shared_lock lock(mu_);
  const FeatureSchema& schema = find_locked(record.schema, record.version);
  if (!record.payload.is_object()) {
    throw RegistryError(RegistryError::Kind::kTypeMismatch, "record payload must be an object");
  }
  for (const auto& field : schema.fields) {
    auto it = record.payload.find(field.name);
    if (it == record.payload.end()) {
      if (field.required) {
        throw RegistryError(RegistryError::Kind::kMissingField,
                            "record for user " + std::to_string(record.user) +
                                " is missing required field '" + field.name + "'");
      }
      continue;
    }
    if (!matches(field.type, *it)) {
      throw RegistryError(RegistryError::Kind::kTypeMismatch,
                          "field '" + field.name + "' is not of type " +
                              std::string(to_string(field.type)));
    }
  }
  return record;
}

Json FeatureRegistry::to_json() const {
  std::shared_lock lock(mu_);
  Json out = Json::array();
  for (const auto& [name, versions] : schemas_) {
    for (const auto& s : versions) {
      Json fields = Json::array();
      for (const auto& f : s.fields) {
        fields.push_back({{"name", f.name}, {"type", to_string(f.type)}, {"required", f.required}});
      }
      out.push_back({{"name", s.name},
                     {"version", s.version},
                     {"created_at", s.created_at},
                     {"fields", fields}});
    }
  }
  return Json{{"schemas", out}};
}

FeatureRegistry FeatureRegistry::from_json(const Json& j) {
  FeatureRegistry reg;
  try {
    for (const auto& s : j.at("schemas")) {
      FeatureSchema schema{s.at("name").get<std::string>(), 0, {},
                           s.at("created_at").get<Timestamp>()};
      for (const auto& f : s.at("fields")) {
        schema.fields.push_back(FieldSpec{f.at("name").get<std::string>(),
                                          parse_field_type(f.at("type").get<std::string>()),
                                          f.at("required").get<bool>()});
      }
      const int expected = s.at("version").get<int>();
      if (reg.register_schema(std::move(schema)) != expected) {
        throw DataError("registry metadata versions are not contiguous");
      }
    }
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed registry metadata: ") + e.what());
  }
  return reg;
}

}  // namespace omniseq
