#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "crtlab/common.hpp"

namespace crtlab {

// Deterministic splitmix64 stream with labeled substream derivation.
//
// Every random draw in a run descends from the single config seed through
// named children ("data", "init", "attack", "sampling", ...), so adding an
// attack to a schedule does not perturb the streams of the others.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    // Independent substream keyed by a label.
    Rng child(std::string_view label) const {
        return Rng(mix(state_ ^ fnv1a(label)), tag{});
    }

    // Independent substream keyed by an index (epoch, batch, pair id, ...).
    Rng child(std::uint64_t index) const {
        return Rng(mix(state_ ^ mix(index + 0x632be59bd9b4e019ull)), tag{});
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // Uniform in [0,1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; no cached second value so the stream
    // layout stays trivial to reason about.
    double normal() {
        double u = double((next_u64() >> 11) + 1) * 0x1.0p-53; // (0,1]
        double v = uniform();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
    }

    // Uniform integer in [0,n).
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw Error("Rng::uniform_index: n must be positive");
        return std::size_t(next_u64() % n);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[uniform_index(i)]);
    }

private:
    struct tag {};
    Rng(std::uint64_t raw_state, tag) : state_(raw_state) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (char c : s) {
            h ^= std::uint64_t(static_cast<unsigned char>(c));
            h *= 0x100000001b3ull;
        }
        return h;
    }

    std::uint64_t state_;
};

} // namespace crtlab
