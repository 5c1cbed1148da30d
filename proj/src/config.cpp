#include "mdn/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mdn/errors.hpp"

namespace mdn {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

KeyValues KeyValues::parse(std::istream& in, const std::string& source) {
  KeyValues kv;
  kv.source_ = source;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (kv.entries_.count(key)) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    kv.entries_[key] = {trim(line.substr(eq + 1)), lineno};
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  return parse(in, path.string());
}

void KeyValues::set(const std::string& key, const std::string& value) {
  entries_[key] = {value, 0};
}

const KeyValues::Entry* KeyValues::find(const std::string& key) {
  used_.insert(key);
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void KeyValues::fail(const std::string& key, const std::string& why) const {
  auto it = entries_.find(key);
  const std::string where =
      it != entries_.end() && it->second.line > 0 ? ":" + std::to_string(it->second.line) : "";
  throw ConfigError(source_ + where + ": key '" + key + "': " + why);
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) {
  const Entry* e = find(key);
  return e ? e->value : fallback;
}

double KeyValues::get_double(const std::string& key, double fallback) {
  const Entry* e = find(key);
  if (!e) return fallback;
  try {
    size_t used = 0;
    const double v = std::stod(e->value, &used);
    if (used != e->value.size()) fail(key, "trailing characters in '" + e->value + "'");
    return v;
  } catch (const std::logic_error&) {
    fail(key, "not a number: '" + e->value + "'");
  }
}

int64_t KeyValues::get_int(const std::string& key, int64_t fallback) {
  const Entry* e = find(key);
  if (!e) return fallback;
  int64_t v = 0;
  auto [p, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
  if (ec != std::errc() || p != e->value.data() + e->value.size()) {
    fail(key, "not an integer: '" + e->value + "'");
  }
  return v;
}

uint64_t KeyValues::get_uint64(const std::string& key, uint64_t fallback) {
  const Entry* e = find(key);
  if (!e) return fallback;
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
  if (ec != std::errc() || p != e->value.data() + e->value.size()) {
    fail(key, "not an unsigned integer: '" + e->value + "'");
  }
  return v;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) {
  const Entry* e = find(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "on" || e->value == "yes") return true;
  if (e->value == "false" || e->value == "0" || e->value == "off" || e->value == "no") return false;
  fail(key, "not a boolean: '" + e->value + "'");
}

std::vector<int64_t> KeyValues::get_int_list(const std::string& key,
                                             const std::vector<int64_t>& fallback) {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<int64_t> out;
  std::stringstream ss(e->value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    int64_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size()) {
      fail(key, "bad list element '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

void KeyValues::reject_unknown() const {
  for (const auto& [key, entry] : entries_) {
    if (!used_.count(key)) {
      throw ConfigError(source_ + ":" + std::to_string(entry.line) + ": unknown key '" + key +
                        "'");
    }
  }
}

void KeyValues::write(std::ostream& out) const {
  for (const auto& [key, entry] : entries_) out << key << "=" << entry.value << "\n";
}

}  // namespace mdn
