#pragma once

// Seeded RNG with hand-rolled distributions so sampled bytes are stable
// across standard libraries, not just across runs.

#include <cmath>
#include <random>
#include <sstream>

#include "aggrnet/tensor.hpp"

namespace aggrnet {

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t uniform_int(std::uint64_t n) {  // [0, n)
        // rejection sampling avoids modulo bias
        std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    double normal() {
        // Box-Muller; cache the second deviate
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    Tensor<T> uniform_tensor(Shape shape, double lo, double hi, bool rg = false) {
        Tensor<T> t(std::move(shape), T(0), rg);
        for (auto& v : t.data()) v = T(uniform(lo, hi));
        return t;
    }

    template <typename T>
    Tensor<T> normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0, bool rg = false) {
        Tensor<T> t(std::move(shape), T(0), rg);
        for (auto& v : t.data()) v = T(mean + stddev * normal());
        return t;
    }

    // Kaiming-uniform over fan_in: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    template <typename T>
    Tensor<T> kaiming_tensor(Shape shape, std::size_t fan_in, bool rg = false) {
        double bound = std::sqrt(6.0 / double(std::max<std::size_t>(fan_in, 1)));
        return uniform_tensor<T>(std::move(shape), -bound, bound, rg);
    }

    template <typename It>
    void shuffle(It first, It last) {
        // Fisher-Yates on our own uniform_int
        std::size_t n = std::size_t(last - first);
        for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[uniform_int(i)]);
    }

    std::string state() const {
        std::ostringstream ss;
        ss << engine_ << " " << (has_spare_ ? 1 : 0) << " " << spare_;
        return ss.str();
    }

    void restore(const std::string& s) {
        std::istringstream ss(s);
        int hs = 0;
        ss >> engine_ >> hs >> spare_;
        if (!ss) throw IntegrityError("bad RNG state string");
        has_spare_ = hs != 0;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace aggrnet
