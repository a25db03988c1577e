#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace audep {

/// splitmix64 finalizer; used to derive independent child seeds from a root seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

std::uint64_t seed_for(std::uint64_t seed, std::string_view key);

std::string hex64(std::uint64_t value);

/// Runs body(i) for i in [0, n) on up to `jobs` threads. jobs <= 0 means one per
/// available processor. The first exception thrown by any task is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body);

int resolve_jobs(int jobs);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double value);

}  // namespace audep
