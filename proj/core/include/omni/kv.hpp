#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace omni {

/// Flat `key=value` configuration text with dotted section prefixes
/// (`model.n_layers=14`). Lines starting with `#` and blank lines are
/// ignored. Keys are kept sorted so formatting is canonical.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text);
  static KeyValues load(const std::filesystem::path& path);

  /// Applies one `key=value` override; throws ParseError if there is no '='.
  void set_assignment(std::string_view assignment);
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set(const std::string& key, const char* value) { values_[key] = value; }
  void set(const std::string& key, std::int64_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, std::uint64_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, int value) { values_[key] = std::to_string(value); }
  /// Doubles are written with round-trip precision.
  void set(const std::string& key, double value);
  void merge(const KeyValues& other);

  bool contains(const std::string& key) const { return values_.contains(key); }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  /// Throws ConfigMismatch if absent.
  const std::string& require(const std::string& key) const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;
  bool operator==(const KeyValues&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace omni
