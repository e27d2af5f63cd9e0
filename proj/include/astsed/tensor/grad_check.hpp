#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "astsed/tensor/param_tree.hpp"

namespace astsed {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::string worst_path;
    std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `fn` maps a ParamBinding to a scalar Var. With samples == 0
/// every coordinate is checked, otherwise `samples` coordinates drawn
/// uniformly (with replacement) from the flattened tree.
template <typename T, typename Fn>
GradCheckReport grad_check(Fn&& fn, const ParamTree<T>& point, T step, std::size_t samples = 0,
                           std::uint64_t seed = 0) {
    if (!(step > T{0})) throw ConfigError("grad_check: step must be positive");

    ParamTree<T> analytic = point;
    {
        ParamBinding<T> bound(point, true);
        Var<T> y = fn(bound);
        if (!std::isfinite(static_cast<double>(y.item()))) {
            throw EvaluationError("grad_check: function value is not finite");
        }
        backward(y);
        bound.collect_grads(analytic);
    }

    std::vector<std::pair<std::string, std::size_t>> coords;
    if (samples == 0) {
        for (const auto& [path, v] : point.leaves())
            for (std::size_t i = 0; i < v.size(); ++i) coords.emplace_back(path, i);
    } else {
        std::vector<std::pair<std::string, std::size_t>> leaf_sizes;
        std::size_t total = 0;
        for (const auto& [path, v] : point.leaves()) {
            leaf_sizes.emplace_back(path, v.size());
            total += v.size();
        }
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, total - 1);
        for (std::size_t s = 0; s < samples; ++s) {
            std::size_t flat = pick(rng);
            for (const auto& [path, n] : leaf_sizes) {
                if (flat < n) {
                    coords.emplace_back(path, flat);
                    break;
                }
                flat -= n;
            }
        }
    }

    auto evaluate = [&](const ParamTree<T>& at) {
        ParamBinding<T> bound(at, false);
        const T v = fn(bound).item();
        if (!std::isfinite(static_cast<double>(v))) {
            throw EvaluationError("grad_check: function value is not finite");
        }
        return v;
    };

    GradCheckReport report;
    ParamTree<T> probe = point;
    for (const auto& [path, i] : coords) {
        const T original = probe.at(path)[i];
        probe.at(path)[i] = original + step;
        const T up = evaluate(probe);
        probe.at(path)[i] = original - step;
        const T down = evaluate(probe);
        probe.at(path)[i] = original;

        const T central = (up - down) / (T{2} * step);
        const auto* g = analytic.grad(path);
        const T exact = g ? (*g)[i] : T{0};
        const double denom = std::max({std::abs(static_cast<double>(exact)),
                                       std::abs(static_cast<double>(central)), 1e-8});
        const double rel = std::abs(static_cast<double>(exact - central)) / denom;
        if (rel > report.max_rel_error || report.coordinates == 0) {
            report.max_rel_error = std::max(report.max_rel_error, rel);
            report.worst_path = path;
            report.worst_index = i;
        }
        ++report.coordinates;
    }
    return report;
}

/// Single-input convenience overload: fn maps Var -> scalar Var.
template <typename T, typename Fn>
GradCheckReport grad_check_input(Fn&& fn, const NdArray<T>& x, T step, std::size_t samples = 0,
                                 std::uint64_t seed = 0) {
    ParamTree<T> point;
    point.add("x", x);
    return grad_check([&](const ParamBinding<T>& p) { return fn(p("x")); }, point, step, samples, seed);
}

}  // namespace astsed
