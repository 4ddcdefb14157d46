#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace stabnet {

// Seedable random stream. All distribution transforms are implemented here
// (instead of <random> distributions) so that a given seed produces the same
// draw sequence on every platform; std::mt19937_64 itself is fully specified
// by the standard.
class RngStream {
public:
    RngStream() : gen_(0x9e3779b97f4a7c15ULL) {}
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}

    void reseed(std::uint64_t seed) { gen_.seed(seed); }

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Inclusive integer range, rejection-free modulo of a 64-bit draw.
    // Bias is < 2^-50 for any desk-scale range.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(gen_() % span);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller without the cached second value, so one call = two raw draws
    // and the sequence is independent of call history.
    double normal(double mean, double sd) {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sd * r * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j =
                static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// Expands the master seed into an independent named stream. Components draw
// from their own streams ("split", "init", "dropout", ...) so toggling one
// never perturbs another's sequence.
std::uint64_t derive_seed(std::uint64_t master, std::string_view name, std::uint64_t a = 0,
                          std::uint64_t b = 0, std::uint64_t c = 0);

RngStream derive_stream(std::uint64_t master, std::string_view name, std::uint64_t a = 0,
                        std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace stabnet
