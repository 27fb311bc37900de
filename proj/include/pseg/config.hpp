#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace pseg {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat key=value config. Blank lines and '#' comments are ignored. Keys the
/// consumer does not declare are errors.
class KeyValues {
 public:
  static KeyValues parse_file(const std::string& path);
  static KeyValues parse_string(const std::string& text, const std::string& origin = "<string>");
  static KeyValues from_map(std::map<std::string, std::string> kv);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& def) const;
  std::string require_str(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
  std::size_t get_size(const std::string& key, std::size_t def) const;
  double get_f64(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;

  /// Throws when the file holds a key outside `allowed`.
  void require_known(const std::vector<std::string>& allowed) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
  std::string origin_;
};

}  // namespace pseg
