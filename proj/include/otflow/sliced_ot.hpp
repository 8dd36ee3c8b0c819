#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "otflow/embedding.hpp"
#include "otflow/errors.hpp"
#include "otflow/optim.hpp"
#include "otflow/random.hpp"
#include "otflow/tensor.hpp"

namespace otflow {

// Learnable projection directions for sliced entropic transport. Two banks of
// P directions each: one projecting the embeddings being transported, one
// projecting the structure-side embeddings they are matched against.
struct ProjectionBank {
    Tensor source_dirs;  // P x D
    Tensor target_dirs;  // P x D
    double temperature = 0.1;
    double uniform_reg = 0.05;  // weight of the uniform plan mixed per slice
    int sinkhorn_iters = 3;

    std::size_t projections() const { return source_dirs.rows(); }
    std::size_t dim() const { return source_dirs.cols(); }

    // Directions start as unit-normalized Gaussian rows so slice costs share a
    // common scale.
    static ProjectionBank init(std::size_t p, std::size_t d, Rng& rng,
                               double tau = 0.1, double lambda = 0.05,
                               int k = 3) {
        ProjectionBank bank;
        bank.temperature = tau;
        bank.uniform_reg = lambda;
        bank.sinkhorn_iters = k;
        auto draw = [&] {
            std::vector<double> v(p * d);
            for (std::size_t i = 0; i < p; ++i) {
                double norm_sq = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    v[i * d + j] = rng.gaussian();
                    norm_sq += v[i * d + j] * v[i * d + j];
                }
                const double inv = 1.0 / std::sqrt(norm_sq);
                for (std::size_t j = 0; j < d; ++j) v[i * d + j] *= inv;
            }
            return Tensor::from({p, d}, std::move(v), true);
        };
        bank.source_dirs = draw();
        bank.target_dirs = draw();
        bank.validate();
        return bank;
    }

    void validate() const {
        if (projections() < 1)
            throw config_error("projection bank: need at least one projection");
        if (!(temperature > 0.0))
            throw config_error("projection bank: temperature must be positive");
        if (uniform_reg < 0.0 || uniform_reg > 1.0)
            throw config_error("projection bank: uniform_reg must lie in [0,1]");
        if (sinkhorn_iters < 0)
            throw config_error("projection bank: sinkhorn_iters must be >= 0");
        if (source_dirs.shape() != target_dirs.shape())
            throw config_error("projection bank: direction banks must share shape");
    }

    std::vector<NamedTensor> named_parameters() {
        return {{"ot.source_dirs", source_dirs}, {"ot.target_dirs", target_dirs}};
    }
};

// N x N nonnegative matrix moving mass from source tokens (rows) to target
// tokens (columns).
struct TransportPlan {
    Tensor matrix;

    std::size_t n() const { return matrix.rows(); }
};

inline double max_marginal_residual(const TransportPlan& plan) {
    const std::size_t n = plan.n();
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double rs = 0.0, cs = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            rs += plan.matrix.at(i, j);
            cs += plan.matrix.at(j, i);
        }
        worst = std::max({worst, std::abs(rs - 1.0), std::abs(cs - 1.0)});
    }
    return worst;
}

// Inner product of every token with one projection direction.
inline Tensor project(const Tensor& tokens, const Tensor& direction) {
    if (tokens.ndim() != 2 || direction.size() != tokens.cols())
        throw shape_error("project: tokens " + shape_str(tokens.shape()) +
                          " vs direction " + shape_str(direction.shape()));
    const std::size_t d = tokens.cols();
    return reshape(matmul(tokens, reshape(direction, {d, 1})), {tokens.rows()});
}

// cost[i,j] = -|a_i - b_j| / tau
inline Tensor slice_cost(const Tensor& a, const Tensor& b, double tau) {
    if (!(tau > 0.0)) throw config_error("slice_cost: temperature must be positive");
    return mul_scalar(otflow::abs(pairwise_diff(a, b)), -1.0 / tau);
}

// Row softmax of the scaled negative cost, blended with the uniform plan.
inline TransportPlan slice_plan(const Tensor& cost, double lambda) {
    if (lambda < 0.0 || lambda > 1.0)
        throw config_error("slice_plan: uniform weight must lie in [0,1]");
    detail::require_matrix(cost, "slice_plan");
    const double n = static_cast<double>(cost.rows());
    Tensor soft = row_softmax(cost);
    if (lambda == 0.0) return {soft};
    Tensor uniform_part = Tensor::full(cost.shape(), lambda / n);
    return {add(mul_scalar(soft, 1.0 - lambda), uniform_part)};
}

inline TransportPlan average_plans(const std::vector<TransportPlan>& plans) {
    if (plans.empty()) throw contract_error("average_plans: empty plan list");
    Tensor acc = plans.front().matrix;
    for (std::size_t i = 1; i < plans.size(); ++i) {
        detail::require_same_shape(acc, plans[i].matrix, "average_plans");
        acc = add(acc, plans[i].matrix);
    }
    return {mul_scalar(acc, 1.0 / static_cast<double>(plans.size()))};
}

// k alternating row-then-column normalizations. k = 0 is the identity. The
// iterations stay on the graph, so gradients pass through every scaling.
inline TransportPlan sinkhorn(const TransportPlan& plan, int k) {
    if (k < 0) throw config_error("sinkhorn: iteration count must be >= 0");
    if (k == 0) return plan;
    for (std::size_t i = 0; i < plan.matrix.size(); ++i)
        if (!(plan.matrix.at(i) > 0.0))
            throw numeric_error("sinkhorn: plan has a nonpositive entry at flat index " +
                                std::to_string(i));
    Tensor t = plan.matrix;
    for (int it = 0; it < k; ++it) {
        t = scale_rows(t, reciprocal(row_sum(t)));
        t = scale_cols(t, reciprocal(col_sum(t)));
    }
    return {t};
}

struct RhoOtResult {
    EmbeddingBatch transported;
    TransportPlan plan;
};

// Full sliced entropic transport: per-slice scalar projections, negative
// distance costs, per-slice row-stochastic plans with uniform regularization,
// slice averaging, K Sinkhorn iterations, then application to the source
// tokens. Differentiable in the bank and both inputs.
inline RhoOtResult rho_ot_forward(const EmbeddingBatch& source,
                                  const EmbeddingBatch& structure,
                                  const ProjectionBank& bank) {
    bank.validate();
    if (source.tokens.shape() != structure.tokens.shape())
        throw shape_error("rho_ot_forward: embeddings " +
                          shape_str(source.tokens.shape()) + " and " +
                          shape_str(structure.tokens.shape()) + " differ");
    if (bank.dim() != source.dim())
        throw shape_error("rho_ot_forward: bank dim " + shape_str(bank.source_dirs.shape()) +
                          " does not match embeddings " +
                          shape_str(source.tokens.shape()));
    const std::size_t p = bank.projections();
    std::vector<TransportPlan> plans;
    plans.reserve(p);
    for (std::size_t rho = 0; rho < p; ++rho) {
        Tensor a = project(source.tokens, select_row(bank.source_dirs, rho));
        Tensor b = project(structure.tokens, select_row(bank.target_dirs, rho));
        plans.push_back(slice_plan(slice_cost(a, b, bank.temperature),
                                   bank.uniform_reg));
    }
    TransportPlan averaged = average_plans(plans);
    TransportPlan scaled = sinkhorn(averaged, bank.sinkhorn_iters);
    Tensor transported = matmul(scaled.matrix, source.tokens);
    return {{transported, Space::semantic}, scaled};
}

// Dense entropic solver for test-scale instances: Sinkhorn on exp(-cost/tau)
// iterated to convergence with uniform (doubly stochastic) marginals. This is
// the slow, exact route the sliced path is checked against.
inline TransportPlan exact_entropic_oracle(const Tensor& cost, double tau) {
    detail::require_matrix(cost, "exact_entropic_oracle");
    if (cost.rows() != cost.cols())
        throw shape_error("exact_entropic_oracle: cost must be square, got " +
                          shape_str(cost.shape()));
    const std::size_t n = cost.rows();
    if (n > 32)
        throw contract_error("exact_entropic_oracle: test-scale guard, n must be <= 32");
    if (!(tau > 0.0))
        throw config_error("exact_entropic_oracle: temperature must be positive");

    std::vector<double> kernel(n * n);
    for (std::size_t i = 0; i < n * n; ++i)
        kernel[i] = std::exp(-cost.at(i) / tau);
    std::vector<double> u(n, 1.0), v(n, 1.0);
    const int max_iters = 10000;
    for (int it = 0; it < max_iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += kernel[i * n + j] * v[j];
            if (!(s > 0.0))
                throw numeric_error("exact_entropic_oracle: kernel row underflowed");
            u[i] = 1.0 / s;
        }
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += kernel[i * n + j] * u[i];
            if (!(s > 0.0))
                throw numeric_error("exact_entropic_oracle: kernel column underflowed");
            v[j] = 1.0 / s;
        }
        // residual of the scaled plan
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double rs = 0.0, cs = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                rs += u[i] * kernel[i * n + j] * v[j];
                cs += u[j] * kernel[j * n + i] * v[i];
            }
            worst = std::max({worst, std::abs(rs - 1.0), std::abs(cs - 1.0)});
        }
        if (worst <= 1e-10) {
            std::vector<double> plan(n * n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    plan[i * n + j] = u[i] * kernel[i * n + j] * v[j];
            return {Tensor::from({n, n}, std::move(plan))};
        }
    }
    throw numeric_error("exact_entropic_oracle: no convergence within 10000 iterations");
}

// Joint objective on transported embeddings: squared error plus squared
// Frobenius distance between token Gram matrices.
inline Tensor rho_ot_loss(const EmbeddingBatch& transported,
                          const EmbeddingBatch& target,
                          Reduction reduction = Reduction::sum) {
    if (transported.tokens.shape() != target.tokens.shape())
        throw shape_error("rho_ot_loss: shapes " +
                          shape_str(transported.tokens.shape()) + " and " +
                          shape_str(target.tokens.shape()) + " differ");
    Tensor diff = sub(target.tokens, transported.tokens);
    Tensor gram_t = matmul(transported.tokens, transpose(transported.tokens));
    Tensor gram_z = matmul(target.tokens, transpose(target.tokens));
    Tensor gram_diff = sub(gram_z, gram_t);
    Tensor loss = add(sum_sq(diff), sum_sq(gram_diff));
    if (reduction == Reduction::mean)
        loss = mul_scalar(loss, 1.0 / static_cast<double>(diff.size()));
    return loss;
}

}  // namespace otflow
