#pragma once

#include <cstdint>
#include <random>

namespace netdyn {

inline constexpr const char* prng_name = "mt19937_64/seed_seq v1";
inline constexpr std::uint64_t default_seed = 20020601;

/// One independent stream per (grid index, orbit index). Streams do not depend on evaluation order.
class Stream {
public:
    Stream(std::uint64_t seed, std::uint64_t grid_index, std::uint64_t orbit_index)
    {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(grid_index), static_cast<std::uint32_t>(orbit_index)};
        gen_.seed(seq);
    }

    /// Uniform on the open interval (0, 1). Built from raw bits so the value is the same on every platform.
    double open_unit()
    {
        for (;;) {
            const std::uint64_t x = gen_() >> 11;
            if (x != 0)
                return static_cast<double>(x) * 0x1.0p-53;
        }
    }

private:
    std::mt19937_64 gen_;
};

} // namespace netdyn
