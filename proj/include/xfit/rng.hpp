#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

namespace xfit {

// mt19937_64 is specified bit-exactly by the standard; the distributions are
// not, so sampling helpers below avoid them.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_string(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Independent stream seed for a tuple of tags.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = splitmix64(base);
    for (auto t : tags) s = splitmix64(s ^ splitmix64(t));
    return s;
}

// Uniform integer in [0, n) by rejection.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

inline double uniform_unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename V>
void shuffle(V& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_below(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    shuffle(idx, rng);
    return idx;
}

}  // namespace xfit
