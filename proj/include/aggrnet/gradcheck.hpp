#pragma once

// Central finite-difference gradient checker. Double precision only:
// f32 step noise swamps the O(eps^2) truncation error.

#include <functional>

#include "aggrnet/random.hpp"
#include "aggrnet/tensor.hpp"

namespace aggrnet {

// f() must re-read x's current data on every call and return a scalar.
// Returns max over checked coordinates of |analytic - fd| / max(1, |fd|).
// max_coords < 0 checks every coordinate; otherwise a seeded sample.
inline double grad_check(const std::function<Tensor<double>()>& f, Tensor<double>& x,
                         double eps = 1e-5, int max_coords = -1, std::uint64_t seed = 0) {
    bool prev_rg = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor<double> y = f();
    if (y.size() != 1) throw ShapeError("grad_check: f must return a scalar");
    y.backward();
    std::vector<double> analytic = x.grad();
    if (analytic.size() != x.size()) analytic.assign(x.size(), 0.0);

    std::vector<std::size_t> coords;
    if (max_coords < 0 || std::size_t(max_coords) >= x.size()) {
        coords.resize(x.size());
        std::iota(coords.begin(), coords.end(), 0);
    } else {
        Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
        for (int i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(x.size()));
        std::sort(coords.begin(), coords.end());
        coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }

    double max_err = 0.0;
    for (std::size_t c : coords) {
        double orig = x.data()[c];
        x.data()[c] = orig + eps;
        double fp = f().item();
        x.data()[c] = orig - eps;
        double fm = f().item();
        x.data()[c] = orig;
        double fd = (fp - fm) / (2.0 * eps);
        double err = std::abs(analytic[c] - fd) / std::max(1.0, std::abs(fd));
        max_err = std::max(max_err, err);
    }
    x.set_requires_grad(prev_rg);
    return max_err;
}

}  // namespace aggrnet
