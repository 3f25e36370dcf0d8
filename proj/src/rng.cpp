#include "tabtoken/rng.hpp"

namespace tabtoken {

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) { return fnv1a64(text.data(), text.size()); }

namespace {
std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index) {
  std::uint64_t state = master ^ fnv1a64(tag);
  std::uint64_t z = splitmix64(state);
  state ^= index * 0xd6e8feb86659fd93ull;
  z ^= splitmix64(state);
  return z;
}

}  // namespace tabtoken
