#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace dfkd::harness {

// Flat key=value configuration ('#' starts a comment, values may be "a/b"
// fractions where a real is expected). Canonical form is sorted, one
// "key = value" per line; the run hash is FNV-1a over that form.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::filesystem::path& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  std::string canonical() const;
  std::uint64_t hash() const;
  void save(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

double parse_real(const std::string& text);  // handles "a/b"

}  // namespace dfkd::harness
