#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tcprune {

// Flat key=value config text: one pair per line, '#' comments, blank lines
// ignored. Values stay strings until a typed getter parses them.
class KvConfig {
 public:
  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& items() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// 64-bit FNV-1a over a byte stream or file, printed as 16 hex digits.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

// Fully resolved run description, written before any work starts so a run can
// be re-executed exactly from this file alone.
struct RunManifest {
  std::string subcommand;
  std::string tool_version;
  std::uint64_t seed{0};
  std::map<std::string, std::string> config;       // every key materialized
  std::map<std::string, std::string> input_hashes;  // path -> fnv1a hex
  std::vector<std::string> outputs;

  void write(const std::string& path) const;
  static RunManifest read(const std::string& path);
};

}  // namespace tcprune
