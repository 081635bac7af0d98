#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "pdp/core/tensor.hpp"

namespace pdp {

// Deterministic RNG with hand-rolled distributions. std:: distributions are
// implementation-defined, so drawing through them would tie generated datasets
// and training runs to one standard library. The raw mt19937_64 stream is
// portable; everything here derives from it.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw InputError("uniform_int: empty range");
        std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Standard normal via Box-Muller; spare cached for determinism.
    real normal();

    // Child generator with an independent-looking stream.
    Rng fork(std::uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL));
    }

    std::string save_state() const;
    void load_state(const std::string& s);

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    real spare_ = 0.0;
};

}  // namespace pdp
