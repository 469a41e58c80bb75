#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace avtlab {

/// Finalizer from SplitMix64; a bijection on 64-bit words.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Domain-separated child seed, so that the network, obfuscation and corpus
/// streams can be reproduced independently from one root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view domain) noexcept;
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) noexcept;

/// Seeded generator. The engine is the standard mt19937_64; the helpers below
/// avoid the std distributions because their output is implementation-defined
/// and reports must be byte-identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);
    /// Uniform in [lo, hi].
    std::uint64_t range(std::uint64_t lo, std::uint64_t hi);
    /// Uniform in [0, 1) with 53 bits of precision.
    double unit();
    bool bernoulli(double p) { return unit() < p; }

    template <typename Container>
    const auto& pick(const Container& c) {
        return c[static_cast<std::size_t>(below(c.size()))];
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace avtlab
