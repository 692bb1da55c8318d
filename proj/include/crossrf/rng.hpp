#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace crossrf {

using Rng = std::mt19937_64;

/// Mixes a root seed with a named component and an index into an independent
/// stream seed. Every random draw in the toolkit is keyed this way, so one root
/// seed reproduces the whole experiment regardless of execution order.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t seed, std::string_view component, std::uint64_t index = 0) {
    return Rng(derive_seed(seed, component, index));
}

}  // namespace crossrf
