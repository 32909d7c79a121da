#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pkinet {

// Seeded RNG with hand-rolled distributions. std::mt19937_64 is fully
// specified by the standard, but std::normal_distribution is not, so the
// gaussian here uses Box-Muller on raw 53-bit uniforms to keep results
// bit-identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(uniform() * static_cast<double>(n));
    }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double gaussian(double mean, double sigma) { return mean + sigma * gaussian(); }

    // normal(0, sigma) clipped to +/-2 sigma by rejection
    double trunc_normal(double sigma) {
        for (;;) {
            const double v = gaussian() * sigma;
            if (std::fabs(v) <= 2.0 * sigma) return v;
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace pkinet
