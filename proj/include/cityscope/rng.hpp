#ifndef CITYSCOPE_RNG_HPP
#define CITYSCOPE_RNG_HPP

#include <cstdint>
#include <vector>

namespace cityscope {

// splitmix64; the single PRNG used for every shuffle and random draw so
// that identical seeds give identical results everywhere.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Uniform in [-bound, +bound).
    double uniform_symmetric(double bound) {
        return (2.0 * uniform() - 1.0) * bound;
    }

private:
    std::uint64_t state_;
};

// One splitmix64 output of `x`; used to derive sub-seeds.
inline std::uint64_t splitmix64_mix(std::uint64_t x) {
    return SplitMix64(x).next();
}

// Fisher-Yates with j = next() mod (i+1).
template <typename T>
void fisher_yates_shuffle(std::vector<T>& items, SplitMix64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next() % i);
        std::swap(items[i - 1], items[j]);
    }
}

} // namespace cityscope

#endif
