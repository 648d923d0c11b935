#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace bt {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Folds a sequence of keys (run seed, stream tag, epoch, sample id, ...) into
// one seed. Used to give every sample its own stream so that batching and
// evaluation order never change results.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) noexcept;

inline Rng make_rng(std::initializer_list<std::uint64_t> keys) { return Rng(derive_seed(keys)); }

// Stream tags keep independent consumers of the same seed apart.
enum class Stream : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kAttack = 3,
  kAugment = 4,
  kEval = 5,
  kOracle = 6,
  kData = 7,
};

inline std::uint64_t tag(Stream s) noexcept { return static_cast<std::uint64_t>(s); }

}  // namespace bt
