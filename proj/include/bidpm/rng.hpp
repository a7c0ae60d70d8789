#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "tensor.hpp"

namespace bidpm {

/// Counter-based pseudo-random stream. The n-th output is a pure function of
/// (seed, stream, n), so any draw can be replayed from its coordinates alone;
/// checkpoints only need to store the seed and the step counter.
///
/// Mixing is SplitMix64: a Weyl sequence on the golden-ratio increment pushed
/// through an avalanche permutation. Reproducible across platforms because
/// every operation is exact 64-bit integer arithmetic.
class CounterRng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    static constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) {
        return mix(seed + kGamma) ^ mix(stream * kGamma + 1);
    }

    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(derive_key(seed, stream)) {}

    std::uint64_t counter() const { return ctr_; }
    void set_counter(std::uint64_t c) {
        ctr_ = c;
        have_spare_ = false;
    }

    std::uint64_t next_u64() { return mix(key_ + kGamma * ++ctr_); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via the Box-Muller transform; draws come in pairs and
    /// the second is cached, so interleaving other draw kinds between two
    /// normal() calls changes the stream. Callers use one stream per purpose.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw Error("CounterRng::below: empty range");
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    /// Fisher-Yates shuffle, deterministic given the stream position.
    template <class T>
    void shuffle(std::vector<T>& xs) {
        for (std::size_t i = xs.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(xs[i - 1], xs[j]);
        }
    }

    Tensor normal_tensor(Shape shape) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal();
        return t;
    }

private:
    std::uint64_t key_;
    std::uint64_t ctr_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Stable string hash for deriving purpose-specific streams and sweep seeds.
/// FNV-1a over the bytes, then one avalanche round.
inline constexpr std::uint64_t hash_label(std::string_view label) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return CounterRng::mix(h);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
    return CounterRng::mix(seed + CounterRng::kGamma) ^ hash_label(purpose);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose,
                                           std::uint64_t index) {
    return CounterRng::mix(derive_seed(seed, purpose) + CounterRng::kGamma * (index + 1));
}

}  // namespace bidpm
