#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace dygait {

// Deterministic RNG. All variates are derived from the raw mt19937_64 stream
// with fixed arithmetic (no std distributions), so a given seed produces the
// same draw sequence in every build and the engine state round-trips exactly
// through checkpoints.
class Rng {
  public:
    Rng() : eng_(0x9e3779b97f4a7c15ull) {}
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0,1).
    double next_real() { return (eng_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive.
    int64_t next_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        // Rejection sampling keeps the distribution exact.
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return lo + static_cast<int64_t>(v % span);
    }

    // Uniform in [-a, a].
    double next_symmetric(double a) { return (next_real() * 2.0 - 1.0) * a; }

    bool next_bernoulli(double p) { return next_real() < p; }

    // Independent sub-stream for item `index`, e.g. one per rendered sequence.
    static Rng derive(uint64_t seed, uint64_t index) {
        return Rng(mix(seed ^ mix(index + 0x632be59bd9b4e019ull)));
    }

    std::string save_state() const {
        std::ostringstream ss;
        ss << eng_;
        return ss.str();
    }
    void load_state(const std::string& s) {
        std::istringstream ss(s);
        ss >> eng_;
        if (ss.fail()) throw std::runtime_error("Rng: malformed engine state");
    }

  private:
    static uint64_t mix(uint64_t z) {  // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::mt19937_64 eng_;
};

}  // namespace dygait
