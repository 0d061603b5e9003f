#pragma once

#include <json.hpp>

#include <set>
#include <string>

#include "lvr/error.hpp"

namespace lvr {

using Json = nlohmann::ordered_json;

/// Reads named fields out of a JSON object and rejects keys nobody asked for.
class JsonFields {
 public:
  JsonFields(const Json& object, std::string section)
      : object_(object), section_(std::move(section)) {
    require(object_.is_object(), ErrorKind::kConfig,
            "section [" + section_ + "] must be an object");
  }

  template <class V>
  void read(const std::string& key, V& out) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kConfig, "[" + section_ + "] " + key + ": " + e.what());
    }
  }

  // Reads a string field through a converter that throws on bad values.
  template <class V, class Parse>
  void read_enum(const std::string& key, V& out, Parse&& parse) {
    std::string s;
    bool present = object_.contains(key);
    read(key, s);
    if (present) out = parse(s);
  }

  const Json* child(const std::string& key) {
    seen_.insert(key);
    auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!seen_.count(it.key())) {
        fail(ErrorKind::kConfig, "unknown key '" + it.key() + "' in [" + section_ + "]");
      }
    }
  }

 private:
  const Json& object_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace lvr
