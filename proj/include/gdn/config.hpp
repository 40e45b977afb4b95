#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace gdn {

// Flat `section.key -> value` map read from a small TOML-like file:
//
//   # comment
//   [section]
//   key = value        # trailing comments allowed
//   name = "quoted"
//
// Keys outside any section live at the top level (no prefix).
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "config");
  static Config load(const std::filesystem::path& path);

  // "section.key=value"; later settings win.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  void merge(const Config& other);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  nlohmann::json to_json() const;
  static Config from_json(const nlohmann::json& j);

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace gdn
