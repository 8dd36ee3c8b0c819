#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "otflow/optim.hpp"
#include "otflow/rng.hpp"
#include "otflow/tensor.hpp"

namespace otflow {

struct GradCheckResult {
    std::size_t points_checked = 0;
    double max_rel_err = 0.0;
    bool ok = true;
    std::string worst;  // "param[index]: ad=..., fd=..."
};

// Central finite-difference check of reverse-mode gradients. loss_fn must
// rebuild the graph from the current parameter values on every call and be
// deterministic (reseed any internal sampling). The forward evaluations run
// with recording disabled, so the check is independent of the backward path
// it validates.
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                       std::vector<NamedTensor> params, Rng& rng,
                                       std::size_t points = 20,
                                       double step = 1e-5, double tol = 1e-4) {
    GradCheckResult res;
    for (auto& p : params) p.tensor.zero_grad();
    backward(loss_fn());
    std::vector<std::vector<double>> ad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        ad[i].assign(params[i].tensor.grad().begin(), params[i].tensor.grad().end());
        if (ad[i].size() != params[i].tensor.size())
            throw contract_error("check_gradients: no gradient on '" +
                                 params[i].name + "'");
    }
    for (std::size_t k = 0; k < points; ++k) {
        const std::size_t pi = rng.below(params.size());
        auto& w = params[pi].tensor.mutable_data();
        const std::size_t j = rng.below(w.size());
        const double saved = w[j];
        double up, down;
        {
            autograd::NoGradGuard guard;
            w[j] = saved + step;
            up = loss_fn().item();
            w[j] = saved - step;
            down = loss_fn().item();
            w[j] = saved;
        }
        const double fd = (up - down) / (2.0 * step);
        const double a = ad[pi][j];
        const double rel = std::abs(a - fd) /
                           std::max({std::abs(a), std::abs(fd), 1e-3});
        ++res.points_checked;
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst = params[pi].name + "[" + std::to_string(j) +
                        "]: ad=" + std::to_string(a) + " fd=" + std::to_string(fd);
        }
    }
    res.ok = res.max_rel_err <= tol;
    return res;
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

// FNV-1a over the raw bit patterns of all parameter values; used to assert
// frozen-model contracts.
inline std::uint64_t param_hash(std::span<const NamedTensor> params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t bits) {
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xFF;
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& p : params) {
        for (char c : p.name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        for (double v : p.tensor.data()) mix(std::bit_cast<std::uint64_t>(v));
    }
    return h;
}

}  // namespace otflow
