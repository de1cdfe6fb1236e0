// rng.hpp: counter-based random streams.
//
// Each value is a pure function of (key, counter), so a stream can be
// re-derived anywhere from (master_seed, stream_id) and substreams never
// overlap in practice.

#pragma once

#include <cstdint>

namespace qfc {

std::uint64_t mix64(std::uint64_t x) noexcept;

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) noexcept;

  // Independent child stream, e.g. one per trajectory.
  RngStream substream(std::uint64_t id) const noexcept;

  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  // Standard normal by Box-Muller; the second variate is cached.
  double normal() noexcept;
  std::uint64_t uniform_index(std::uint64_t n) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace qfc
