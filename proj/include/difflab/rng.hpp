#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "difflab/linalg.hpp"

namespace difflab {

// 64-bit FNV-1a. Used for named randomness streams and content hashes of
// configs and families; not cryptographic, collisions are irrelevant here.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 1469598103934665603ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
    return fnv1a64(s.data(), s.size(), h);
}

// One independent randomness stream. All stochastic code takes an RngStream&
// so that every result is a pure function of (inputs, stream seed). Streams
// are derived from a root seed by name, so adding a new consumer never
// perturbs the draws of existing ones.
//
// Normal deviates use Box-Muller on the raw engine output instead of
// std::normal_distribution: the standard leaves that algorithm unspecified,
// and reproducibility across compilers is part of the contract here.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : eng_(seed) {}

    static RngStream named(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0) {
        std::uint64_t h = fnv1a64(&root, sizeof root);
        h = fnv1a64(purpose, h);
        h = fnv1a64(&index, sizeof index, h);
        return RngStream(h);
    }

    std::uint64_t bits() { return eng_(); }

    // uniform on [0,1), 53-bit resolution
    double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

    // uniform on (0,1]; safe as a log argument
    double uniform_pos() { return double((eng_() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) {  // 0..n-1
        return int(eng_() % std::uint64_t(n));
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_pos();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Vec normal_vec(int n) {
        Vec v(n);
        for (auto& x : v) x = normal();
        return v;
    }

    Vec uniform_vec(int n, double lo = 0.0, double hi = 1.0) {
        Vec v(n);
        for (auto& x : v) x = uniform(lo, hi);
        return v;
    }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace difflab
