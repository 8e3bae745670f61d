#ifndef BIOTK_RNG_HPP
#define BIOTK_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace biotk {

// Counter-based substream generator. Each (seed, label...) tuple yields an
// independent deterministic stream, so parallel consumers produce the same
// numbers regardless of scheduling order.
class SubstreamRng {
public:
    explicit SubstreamRng(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

    SubstreamRng(std::uint64_t seed, std::initializer_list<std::uint64_t> labels)
        : state_(mix(seed ^ kGolden)) {
        for (auto l : labels) state_ = mix(state_ ^ mix(l + kGolden));
    }

    SubstreamRng substream(std::uint64_t label) const {
        SubstreamRng r(*this);
        r.state_ = mix(r.state_ ^ mix(label + kGolden));
        return r;
    }

    std::uint64_t next_u64() {
        state_ += kGolden;
        return mix(state_);
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        return next_u64() % n;
    }

    // standard normal via Box-Muller; consumes exactly two uniforms per call
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

} // namespace biotk

#endif
