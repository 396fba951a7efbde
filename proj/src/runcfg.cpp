#include "tcprune/runcfg.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tcprune/errors.hpp"

namespace tcprune {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::from_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(lineno) + " is not key=value: '" + t +
                         "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw config_error("config line " + std::to_string(lineno) + " has no key");
    cfg.kv_[key] = value;
  }
  return cfg;
}

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "' is not an integer: '" + it->second + "'");
  }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "' is not a number: '" + it->second + "'");
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw config_error("config key '" + key + "' is not a boolean: '" + v + "'");
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for hashing");
  std::uint64_t h = 14695981039346656037ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << "# run manifest: re-running the subcommand with this config reproduces the run\n";
  out << "subcommand = " << subcommand << "\n";
  out << "tool_version = " << tool_version << "\n";
  out << "seed = " << seed << "\n";
  for (const auto& [k, v] : config) out << "cfg." << k << " = " << v << "\n";
  for (const auto& [k, v] : input_hashes) out << "hash." << k << " = " << v << "\n";
  for (const auto& o : outputs) out << "output = " << o << "\n";
  if (!out) throw io_error("write to '" + path + "' failed");
}

RunManifest RunManifest::read(const std::string& path) {
  KvConfig kv = KvConfig::from_file(path);
  RunManifest m;
  m.subcommand = kv.get_str("subcommand", "");
  m.tool_version = kv.get_str("tool_version", "");
  m.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  for (const auto& [k, v] : kv.items()) {
    if (k.rfind("cfg.", 0) == 0) m.config[k.substr(4)] = v;
    else if (k.rfind("hash.", 0) == 0) m.input_hashes[k.substr(5)] = v;
    else if (k == "output") m.outputs.push_back(v);
  }
  return m;
}

}  // namespace tcprune
