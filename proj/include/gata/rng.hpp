#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace gata {

// Deterministic PRNG (xoshiro256**, splitmix64 seeding). The standard
// library distributions are not bit-stable across implementations, so all
// sampling helpers are hand-rolled on top of next().
class Rng {
public:
    explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) {
        uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
    }

    uint64_t next() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, n). Rejection sampling keeps it unbiased.
    uint64_t below(uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next();
        while (v >= limit) v = next();
        return v % n;
    }

    int range(int lo, int hi) {  // inclusive bounds
        if (hi < lo) throw std::invalid_argument("Rng::range: empty range");
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    double real01() { return (next() >> 11) * (1.0 / 9007199254740992.0); }

    bool chance(double p) { return real01() < p; }

    template <class T>
    const T& pick(const std::vector<T>& xs) {
        if (xs.empty()) throw std::invalid_argument("Rng::pick: empty vector");
        return xs[below(xs.size())];
    }

    template <class T>
    void shuffle(std::vector<T>& xs) {
        for (size_t i = xs.size(); i > 1; --i) {
            size_t j = below(i);
            std::swap(xs[i - 1], xs[j]);
        }
    }

    // Independent child stream; used to decouple per-game generation from
    // corpus-level decisions so record order never shifts sampling.
    Rng fork(uint64_t tag) {
        uint64_t x = next() ^ (0x9e3779b97f4a7c15ull * (tag + 1));
        return Rng(splitmix64(x));
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ull;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
};

}  // namespace gata
