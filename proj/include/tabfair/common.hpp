#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tabfair {

// Precondition/contract failures. The CLI maps these to exit code 2.
struct ContractViolation : std::runtime_error {
    explicit ContractViolation(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, diverged training. The CLI maps these to exit code 3.
struct NumericalFailure : std::runtime_error {
    explicit NumericalFailure(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

// FNV-1a, used for provenance hashes of files and schema descriptions.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Shortest decimal string that round-trips the exact double. All numeric
// file output goes through this so re-saves are byte-identical.
std::string format_double(double v);

// Deterministic RNG used everywhere. Wraps a fixed-algorithm engine and
// hand-rolled distributions so streams depend only on the seed, not on
// library internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : s_{seed ? seed : 0x9e3779b97f4a7c15ULL} {
        // splitmix64 warm-up to decorrelate small seeds
        for (int i = 0; i < 4; ++i) next();
    }

    std::uint64_t next() {
        std::uint64_t z = (s_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling keeps the draw exact
        std::uint64_t mask = ~0ULL;
        if (n == 0) return 0;
        std::uint64_t lim = mask - mask % n;
        std::uint64_t x;
        do { x = next(); } while (x >= lim);
        return x % n;
    }

    double normal() {
        // Box-Muller, one value per call (the spare is discarded to keep
        // the stream position a simple function of call count)
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Independent child stream, e.g. one per permutation or per fold.
    Rng child(std::uint64_t salt) const {
        std::uint64_t mix = s_ ^ (salt * 0xff51afd7ed558ccdULL + 0x2545f4914f6cdd1dULL);
        return Rng(mix);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t s_;
};

}  // namespace tabfair
