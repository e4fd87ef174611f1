#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pbl {

// 64-bit FNV-1a. Stable across platforms; used for cache keys and hashing
// tokenizers, never for security.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

// Portable uniform integer in [0, bound) from a 64-bit engine. The standard
// distributions are implementation-defined, which would make seeded splits
// differ between standard libraries.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

template <typename T>
void seeded_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

std::vector<std::string> split(std::string_view text, char sep);
std::string to_lower(std::string_view text);

double mean(std::span<const double> xs);
// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double stdev(std::span<const double> xs);

}  // namespace pbl
