#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace pqda::rng {

using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Hashes a seed and a sequence of tags into a substream seed. Every random
/// draw in the library comes from an engine keyed this way, so results do not
/// depend on how work is scheduled across threads.
constexpr std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(seed);
  for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

inline Engine stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  return Engine(derive(seed, tags));
}

inline void fill_normal(Engine& eng, std::span<double> out, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  for (auto& v : out) v = nd(eng);
}

// Tags for the purpose of a substream.
enum Purpose : std::uint64_t {
  prior_draw = 1,
  loss_noise = 2,
  resample = 3,
  chain = 4,
  history_batch = 5,
  evaluation = 6,
  enkf_forcing = 7,
  enkf_perturbation = 8,
  enkf_init = 9,
  enkf_observation = 10,
};

} // namespace pqda::rng
