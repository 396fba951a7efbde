#include "tcprune/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "tcprune/surgery.hpp"

namespace tcprune {

namespace {

template <class T>
void write_le(std::ofstream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
bool read_le(std::ifstream& in, T& v) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (static_cast<std::size_t>(in.gcount()) != sizeof(T)) return false;
  std::memcpy(&v, buf, sizeof(T));
  return true;
}

bool name_is_trainable(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const std::size_t n = std::strlen(suffix);
    return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
  };
  return !ends_with(".running_mean") && !ends_with(".running_var");
}

}  // namespace

void save_checkpoint(const ModelGraph& graph, const ParameterStore& params,
                     const std::string& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out.write("TCPC", 4);
    write_le<std::uint32_t>(out, 1);
    write_le<std::uint64_t>(out, params.entries.size());
    for (const auto& [name, e] : params.entries) {
      write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.value.rank()));
      for (std::int64_t d : e.value.shape)
        write_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
      out.write(reinterpret_cast<const char*>(e.value.values.data()),
                static_cast<std::streamsize>(e.value.values.size() * sizeof(float)));
    }
    if (!out) throw io_error("write to '" + path + "' failed");
  }
  save_graph(graph, path + ".graph");
}

Checkpoint load_checkpoint(const std::string& path) {
  Checkpoint ck;
  ck.graph = load_graph(path + ".graph");

  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "TCPC", 4) != 0)
    throw format_error("'" + path + "': bad checkpoint magic", 0);
  std::uint32_t version;
  if (!read_le(in, version) || version != 1)
    throw format_error("'" + path + "': unsupported checkpoint version", 4);
  std::uint64_t count;
  if (!read_le(in, count)) throw format_error("'" + path + "': truncated header", 8);
  if (count > 1'000'000) throw format_error("'" + path + "': implausible parameter count", 8);

  for (std::uint64_t i = 0; i < count; ++i) {
    const long long at = static_cast<long long>(in.tellg());
    std::uint32_t name_len;
    if (!read_le(in, name_len) || name_len == 0 || name_len > 4096)
      throw format_error("'" + path + "': bad parameter name length", at);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (static_cast<std::uint32_t>(in.gcount()) != name_len)
      throw format_error("'" + path + "': truncated parameter name", at);
    std::uint8_t rank;
    if (!read_le(in, rank) || rank < 1 || rank > 8)
      throw format_error("'" + path + "': bad parameter rank", at);
    std::vector<std::int64_t> shape;
    for (int r = 0; r < rank; ++r) {
      std::uint64_t d;
      if (!read_le(in, d) || d == 0 || d > static_cast<std::uint64_t>(kMaxTensorElems))
        throw format_error("'" + path + "': bad dimension", at);
      shape.push_back(static_cast<std::int64_t>(d));
    }
    const std::int64_t n = checked_numel(shape);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(n * static_cast<std::int64_t>(sizeof(float))));
    if (in.gcount() != n * static_cast<std::int64_t>(sizeof(float)))
      throw format_error("'" + path + "': truncated payload for '" + name + "'", at);
    ck.params.put(name, std::move(t), name_is_trainable(name));
  }
  char extra;
  if (in.read(&extra, 1), in.gcount() != 0)
    throw format_error("'" + path + "': trailing bytes after last parameter",
                       static_cast<long long>(in.tellg()));

  auto violations = validate_structure(ck.graph, ck.params);
  if (!violations.empty())
    throw format_error("'" + path + "': checkpoint inconsistent with its graph: " +
                           violations.front(),
                       0);
  return ck;
}

}  // namespace tcprune
