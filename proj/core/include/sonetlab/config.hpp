#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sonetlab {

// Flat "key = value" configuration with [section] headers and '#' comments.
// Serialization is sorted and canonical, so parse(serialize(c)) == c and two
// equal configs produce byte-identical files.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_string(const std::string& text);
  static KeyValueConfig parse_file(const std::string& path);

  std::string serialize() const;
  void save(const std::string& path) const;

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;
  std::vector<std::string> get_list(const std::string& section, const std::string& key) const;

  void set(const std::string& section, const std::string& key, const std::string& value);
  void set_int(const std::string& section, const std::string& key, std::int64_t value);
  void set_double(const std::string& section, const std::string& key, double value);
  void set_bool(const std::string& section, const std::string& key, bool value);

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

  bool operator==(const KeyValueConfig& other) const = default;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace sonetlab
