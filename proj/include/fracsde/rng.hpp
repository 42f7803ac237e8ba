#pragma once

#include <array>
#include <cstdint>
#include <limits>

#include <boost/math/distributions/normal.hpp>

namespace fracsde {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// Stateless in spirit: the output block is a pure function of (key, counter),
/// so a (master seed, stream, path index) triple can be mapped to disjoint
/// substreams and generation stays independent of the parallel schedule.
class Philox4x32 {
public:
    using result_type = std::uint32_t;

    Philox4x32(std::uint64_t key, std::uint64_t substream)
        : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
          counter_{0u, 0u,
                   static_cast<std::uint32_t>(substream),
                   static_cast<std::uint32_t>(substream >> 32)} {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<std::uint32_t>::max(); }

    result_type operator()() {
        if (have_ == 0) {
            block_ = encrypt(counter_, key_);
            // 64-bit draw counter in words 0..1
            if (++counter_[0] == 0) ++counter_[1];
            have_ = 4;
        }
        return block_[4 - have_--];
    }

    /// u64 from two u32 draws, high word first.
    std::uint64_t next_u64() {
        const std::uint64_t hi = (*this)();
        const std::uint64_t lo = (*this)();
        return (hi << 32) | lo;
    }

    /// Uniform on (0,1), 53-bit resolution, never returns 0 or 1.
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via the Boost normal quantile (deterministic, no state).
    double next_normal() {
        static const boost::math::normal_distribution<double> unit{};
        return boost::math::quantile(unit, next_uniform());
    }

    static std::array<std::uint32_t, 4> encrypt(std::array<std::uint32_t, 4> ctr,
                                                std::array<std::uint32_t, 2> key) {
        constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
        constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
                   static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
                   static_cast<std::uint32_t>(p0)};
            key[0] += W0;
            key[1] += W1;
        }
        return ctr;
    }

private:
    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> counter_;
    std::array<std::uint32_t, 4> block_{};
    int have_ = 0;
};

/// Named seed streams; every consumer draws from its own substream so that
/// e.g. fBm and Brownian paths built from one master seed stay independent.
enum class SeedStream : std::uint64_t {
    fbm = 0x66626d00,
    bm = 0x626d0000,
    regression = 0x72656700,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Generator for (master seed, stream, path index); distinct triples give
/// computationally disjoint Philox substreams.
inline Philox4x32 make_stream(std::uint64_t master_seed, SeedStream stream,
                              std::uint64_t path_index = 0) {
    const std::uint64_t sub =
        splitmix64(splitmix64(static_cast<std::uint64_t>(stream)) ^ path_index);
    return Philox4x32(master_seed, sub);
}

}  // namespace fracsde
