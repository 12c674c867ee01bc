#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace dbglm {

/**
 * Philox4x32-10 counter-based generator.
 *
 * The output block is a pure function of (counter, key), so any stream can
 * be positioned without generating its predecessors. Streams here use the
 * key as the seed and the upper counter words as a stream id.
 */
class Philox4x32
{
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key)
    {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kW0;
                key[1] += kW1;
            }
            std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
            std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
            auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            auto lo0 = static_cast<std::uint32_t>(p0);
            auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kM0 = 0xD2511F53;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57;
    static constexpr std::uint32_t kW0 = 0x9E3779B9;
    static constexpr std::uint32_t kW1 = 0xBB67AE85;
};

/// Child seed for `index` under `parent`; used to derive grid-point,
/// replication, and per-task seeds from a single root seed.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index)
{
    Philox4x32::Key key{static_cast<std::uint32_t>(parent), static_cast<std::uint32_t>(parent >> 32)};
    Philox4x32::Counter ctr{static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                            0x5EEDu, 0xC0FFEEu};
    auto out = Philox4x32::block(ctr, key);
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

/**
 * UniformRandomBitGenerator over a Philox stream, usable with <random>
 * distributions.
 */
class PhiloxEngine
{
public:
    using result_type = std::uint64_t;

    explicit PhiloxEngine(std::uint64_t seed, std::uint64_t stream = 0)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(stream)
    {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        if (used_ == 2) {
            Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                                    static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
            buf_ = Philox4x32::block(ctr, key_);
            ++block_;
            used_ = 0;
        }
        auto lo = buf_[2 * used_];
        auto hi = buf_[2 * used_ + 1];
        ++used_;
        return (static_cast<std::uint64_t>(hi) << 32) | lo;
    }

    /// Uniform on the open interval (0, 1) with 53 bits of resolution.
    double uniform()
    {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Jump to block `n` of the stream.
    void seek(std::uint64_t n)
    {
        block_ = n;
        used_ = 2;
    }

private:
    Philox4x32::Key key_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    Philox4x32::Counter buf_{};
    int used_ = 2;
};

} // namespace dbglm
