#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cohort {

// Portable wrappers over mt19937_64: the standard distributions are
// implementation-defined, these are not.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream derived from a seed and a tag.
    static Rng derive(std::uint64_t seed, std::string_view tag) {
        std::uint64_t h = 1469598103934665603ULL;
        for (char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        return Rng(seed * 0x9E3779B97F4A7C15ULL ^ h);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::size_t below(std::size_t n) {
        if (n <= 1) return 0;
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % bound);
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

   private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cohort
