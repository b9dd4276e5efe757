#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mlta {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t z);

/// Derives the seed of an independent child stream (start, grid cell,
/// bootstrap replicate) from a master seed and a stream index, so results
/// do not depend on scheduling order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// mt19937_64 engine with hand-rolled uniform/normal transforms. The raw
/// 64-bit engine output is pinned by the standard; the distribution
/// adaptors are not, so we supply our own to keep draws identical across
/// standard-library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on the open interval (0, 1).
    double uniform() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; consumes two uniforms per pair.
    double normal();

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    /// A point on the G-simplex, uniformly distributed (Dirichlet(1,...,1)).
    std::vector<double> simplex(int g);

    /// Index drawn from a probability vector (entries sum to ~1).
    int categorical(const std::vector<double>& probs);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mlta
