#pragma once

// Flat key=value configuration with dotted section keys:
//
//   # comment
//   train.epochs = 20
//   prune.operator = powerp
//   prune.p = 3
//
// Later assignments win; command-line overrides are applied the same way.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "feather/errors.hpp"

namespace feather {

class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);

  /// Built-in desk-scale defaults; every key the harness reads appears here.
  static Config defaults();

  void set(const std::string& key, const std::string& value);
  /// Applies one "key=value" assignment.
  void assign(std::string_view assignment);
  /// Overlays every entry of `other`.
  void merge(const Config& other);

  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::string& get(const std::string& key) const;

  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  /// Sorted "key = value" lines; parse(to_text()) reproduces the config.
  std::string to_text() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace feather
