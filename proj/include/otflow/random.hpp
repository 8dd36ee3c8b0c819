#pragma once

#include "otflow/rng.hpp"
#include "otflow/tensor.hpp"

namespace otflow {

// i.i.d. standard normal entries, deterministic per (seed, counter).
inline Tensor gaussian(Rng& rng, Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.gaussian();
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor uniform(Rng& rng, Shape shape, double lo = 0.0, double hi = 1.0,
                      bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace otflow
