#include "tcprune/tensor.hpp"

namespace tcprune {

// FNV-1a over the stream name and index, folded into the base seed with a
// splitmix64 finisher. Distinct stream names give independent, reproducible
// substreams from one user-facing seed.
std::uint64_t mix_seed(std::uint64_t base, const std::string& stream, std::uint64_t index) {
  std::uint64_t h = 14695981039346656037ull;
  auto eat = [&h](std::uint64_t byte) {
    h ^= byte;
    h *= 1099511628211ull;
  };
  for (unsigned char c : stream) eat(c);
  for (int i = 0; i < 8; ++i) eat((index >> (8 * i)) & 0xff);
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace tcprune
