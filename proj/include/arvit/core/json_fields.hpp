#pragma once

#include <set>
#include <string>
#include <string_view>

#include "arvit/core/errors.hpp"
#include "json.hpp"

namespace arvit {

// Strict reader over one JSON object: every error names the full field path
// (e.g. "model.cnn.widths[2]"), and finish() rejects keys nobody consumed.
class JsonFields {
 public:
  JsonFields(const nlohmann::json& object, std::string path) : j_(object), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(describe() + ": expected an object");
  }

  std::string field_path(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  bool has(std::string_view key) const { return j_.contains(std::string(key)); }

  const nlohmann::json& raw(std::string_view key) {
    seen_.insert(std::string(key));
    return j_.at(std::string(key));
  }

  template <class T>
  T get(std::string_view key, const T& fallback) {
    if (!has(key)) {
      seen_.insert(std::string(key));
      return fallback;
    }
    return required<T>(key);
  }

  template <class T>
  T required(std::string_view key) {
    if (!has(key)) throw ConfigError(field_path(key) + ": missing required field");
    const nlohmann::json& v = raw(key);
    try {
      check_kind<T>(v, key);
      return v.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field_path(key) + ": wrong type");
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field_path(it.key()) + ": unknown field");
    }
  }

 private:
  template <class T>
  void check_kind(const nlohmann::json& v, std::string_view key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field_path(key) + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(field_path(key) + ": expected a non-negative integer");
      }
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field_path(key) + ": expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field_path(key) + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field_path(key) + ": expected a string");
    }
  }

  std::string describe() const { return path_.empty() ? std::string("<root>") : path_; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace arvit
