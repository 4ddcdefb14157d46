#include "stabnet/rng.hpp"

namespace stabnet {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view name, std::uint64_t a,
                          std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = splitmix64(master ^ fnv1a64(name));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

RngStream derive_stream(std::uint64_t master, std::string_view name, std::uint64_t a,
                        std::uint64_t b, std::uint64_t c) {
    return RngStream(derive_seed(master, name, a, b, c));
}

}  // namespace stabnet
