#pragma once

#include <cstdint>
#include <random>

namespace rtfd {

// Deterministic random stream. mt19937_64 is fully specified by the
// standard; the uniform/normal transforms below are written out explicitly
// instead of using std distributions (whose sequences are
// implementation-defined), so a seed reproduces the same stream everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], inclusive. Modulo bias is negligible for
    /// the small ranges used here.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    /// Standard normal via Box-Muller; caches the second draw of each pair.
    double normal();

    /// Independent substream derived from the original seed and a stream id.
    Rng fork(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 finalizer, used for seed derivation.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace rtfd
