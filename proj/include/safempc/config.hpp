#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace safempc {

// Flat `key = value` configuration with `#` comments. Values are scalars or
// whitespace-separated numeric lists. Unknown keys are kept so callers can
// report them.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<double> get_vector(const std::string& key,
                                 const std::vector<double>& fallback) const;

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  // Merge `other` on top of this config (other wins).
  void overlay(const Config& other);

  const std::map<std::string, std::string>& entries() const { return kv_; }

  std::string to_string() const;

 private:
  std::map<std::string, std::string> kv_;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace safempc
