#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mdn {

// Flat `key=value` text: one pair per line, '#' comments, blank lines ignored.
// Parse errors carry the source name and line number.
class KeyValues {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static KeyValues parse(std::istream& in, const std::string& source);
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  // Typed getters mark the key as consumed. Bad values raise ConfigError
  // naming the key and line.
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int64_t get_int(const std::string& key, int64_t fallback);
  uint64_t get_uint64(const std::string& key, uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<int64_t> get_int_list(const std::string& key, const std::vector<int64_t>& fallback);

  // Throws ConfigError naming the first key no getter asked for.
  void reject_unknown() const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  const std::string& source() const { return source_; }
  void write(std::ostream& out) const;

 private:
  const Entry* find(const std::string& key);
  [[noreturn]] void fail(const std::string& key, const std::string& why) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::set<std::string> used_;
};

std::string format_double(double v);

}  // namespace mdn
