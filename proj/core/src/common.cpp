#include "fedlink/common.hpp"

#include <charconv>
#include <cstring>

namespace fedlink {

uint64_t fnv1a_64(const void* data, size_t len, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a_64(std::string_view s, uint64_t seed) {
    return fnv1a_64(s.data(), s.size(), seed);
}

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, std::string_view tag) {
    return mix64(master ^ fnv1a_64(tag));
}

uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index) {
    return mix64(derive_seed(master, tag) + 0x632be59bd9b4e019ull * (index + 1));
}

Rng make_rng(uint64_t master, std::string_view tag) {
    return Rng(derive_seed(master, tag));
}

Rng make_rng(uint64_t master, std::string_view tag, uint64_t index) {
    return Rng(derive_seed(master, tag, index));
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

}  // namespace fedlink
