#pragma once

#include <cstdint>

namespace spikefed {

// Counter-based random stream. Every draw is a pure function of
// (key, counter), so parallel consumers see the same values no matter
// how work is scheduled. The mixer is the splitmix64 finalizer
// (constants 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB),
// which produces the same sequence on every platform.
struct RngStream {
    std::uint64_t key = 0;

    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

    static std::uint64_t mix(std::uint64_t z) {
        z += kGolden;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    explicit RngStream(std::uint64_t seed = 0) : key(mix(seed)) {}

    // Derive an independent substream; chaining derive() calls builds a
    // hierarchy (seed -> purpose -> client -> epoch -> batch -> step).
    RngStream derive(std::uint64_t tag) const {
        RngStream s;
        s.key = mix(key ^ (tag * kGolden));
        return s;
    }

    std::uint64_t bits(std::uint64_t counter) const {
        return mix(key ^ (counter + 1) * kGolden);
    }

    // Uniform in [0, 1): 53 high bits of the mixed counter.
    double uniform(std::uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n), n > 0. Modulo bias is negligible for the
    // desk-scale n used here and keeps the draw a single deterministic op.
    std::uint64_t below(std::uint64_t counter, std::uint64_t n) const {
        return bits(counter) % n;
    }
};

// Stream purposes. Kept in one place so seed derivations never collide.
namespace stream_tag {
constexpr std::uint64_t encode = 0x01;   // Poisson spike draws
constexpr std::uint64_t init = 0x02;     // weight initialization
constexpr std::uint64_t shuffle = 0x03;  // epoch sample order
constexpr std::uint64_t synth = 0x04;    // synthetic dataset pixels
constexpr std::uint64_t eval = 0x05;     // evaluation-time encoding
}  // namespace stream_tag

}  // namespace spikefed
