#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fedlink {

inline constexpr const char* kVersion = "0.1.0";

using Rng = std::mt19937_64;

// Error taxonomy used across modules. Everything derives from
// std::runtime_error so callers may catch broadly at stage boundaries.
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct argument_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct state_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct permission_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct sync_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

uint64_t fnv1a_64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a_64(std::string_view s, uint64_t seed = 0xcbf29ce484222325ull);

// splitmix64 finalizer; used to spread seed material.
uint64_t mix64(uint64_t x);

// Derives an independent, reproducible RNG seed for a named substream.
// Every concurrent unit (client, variant, sweep cell) gets its own stream
// so execution order never changes results.
uint64_t derive_seed(uint64_t master, std::string_view tag);
uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index);

Rng make_rng(uint64_t master, std::string_view tag);
Rng make_rng(uint64_t master, std::string_view tag, uint64_t index);

// Shortest-round-trip decimal form of a double; stable across runs so
// metric files are byte-identical under identical config + seed.
std::string format_double(double v);

}  // namespace fedlink
