#ifndef ZSRL_TESTS_ORACLES_HPP
#define ZSRL_TESTS_ORACLES_HPP

// Test-only oracles: central finite differences for gradient checks. Kept
// independent of the library's backward passes.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "zsrl/encoder.hpp"

namespace oracles {

/// d f / d x via central differences, mutating x in place and restoring it.
template <typename F>
std::vector<double> fd_gradient(std::vector<double>& x, F&& eval, double h = 1e-6) {
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = eval();
        x[i] = orig - h;
        const double fm = eval();
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

/// Central differences over every parameter of a network, in the network's
/// canonical parameter order.
template <typename F>
std::vector<double> fd_gradient_params(zsrl::EncoderNetwork& net, F&& eval, double h = 1e-6) {
    std::vector<double> grad;
    net.for_each_parameter([&](std::span<double> value, std::span<double>) {
        for (double& p : value) {
            const double orig = p;
            p = orig + h;
            const double fp = eval();
            p = orig - h;
            const double fm = eval();
            p = orig;
            grad.push_back((fp - fm) / (2.0 * h));
        }
    });
    return grad;
}

inline std::vector<double> collect_grads(const zsrl::EncoderNetwork& net) {
    std::vector<double> grads;
    net.for_each_parameter([&](std::span<const double>, std::span<const double> grad) {
        grads.insert(grads.end(), grad.begin(), grad.end());
    });
    return grads;
}

/// Worst per-component relative error between an analytic gradient and its
/// finite-difference estimate. Components far below the gradient's own
/// scale are measured against that scale instead, since FD noise drowns
/// them.
inline double max_relative_error(const std::vector<double>& analytic,
                                 const std::vector<double>& fd) {
    double scale = 0.0;
    for (double a : analytic) scale = std::max(scale, std::abs(a));
    for (double f : fd) scale = std::max(scale, std::abs(f));
    const double floor = std::max(1e-8, 1e-3 * scale);
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(fd[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
    }
    return worst;
}

}  // namespace oracles

#endif  // ZSRL_TESTS_ORACLES_HPP
