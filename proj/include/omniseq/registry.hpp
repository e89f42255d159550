#pragma once

#include <map>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "omniseq/domain.hpp"

namespace omniseq {

using Json = nlohmann::json;

enum class FieldType : std::uint8_t { kInteger, kReal, kString, kIntegerList, kTokenList };

std::string_view to_string(FieldType t);
FieldType parse_field_type(std::string_view s);

struct FieldSpec {
  std::string name;
  FieldType type = FieldType::kInteger;
  bool required = true;
};

struct FeatureSchema {
  std::string name;
  int version = 0;
  std::vector<FieldSpec> fields;
  Timestamp created_at = 0;
};

struct FeatureRecord {
  UserId user = 0;
  std::string schema;
  int version = 0;
  Json payload;
  Timestamp as_of = 0;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

Json to_json(const FeatureRecord& r);
FeatureRecord record_from_json(const Json& j);

class RegistryError : public DataError {
 public:
  enum class Kind {
    kInvalidSchema,
    kUnknownSchema,
    kUnknownVersion,
    kMissingField,
    kTypeMismatch,
  };

  RegistryError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Versioned feature schemas. Versions per name are contiguous from 1.
// Concurrent readers; writers are serialized.
class FeatureRegistry {
 public:
  FeatureRegistry() = default;
  FeatureRegistry(const FeatureRegistry& other);
  FeatureRegistry& operator=(const FeatureRegistry& other);

  // Assigns version 1 to a new name, otherwise previous max + 1. The
  // submitted version number is ignored.
  int register_schema(FeatureSchema schema);

  FeatureSchema get(std::string_view name, int version) const;
  FeatureSchema latest(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<FeatureSchema> list() const;

  // Returns the record unchanged when it conforms to its schema version.
  const FeatureRecord& validate(const FeatureRecord& record) const;

  Json to_json() const;
  static FeatureRegistry from_json(const Json& j);

 private:
  const FeatureSchema& find_locked(std::string_view name, int version) const;

  mutable std::shared_mutex mu_;
  std::map<std::string, std::vector<FeatureSchema>, std::less<>> schemas_;
};

}  // namespace omniseq
