#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "otflow/errors.hpp"
#include "otflow/tensor.hpp"

namespace otflow {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay. step() consumes populated grads and
// leaves them untouched; callers zero grads explicitly.
class AdamW {
  public:
    AdamW(std::vector<NamedTensor> params, AdamWConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].tensor.size(), 0.0);
            v_[i].assign(params_[i].tensor.size(), 0.0);
        }
    }

    void step() {
        for (const auto& p : params_)
            if (!p.tensor.has_grad())
                throw contract_error("adamw_step: parameter '" + p.name +
                                     "' has no gradient");
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& w = params_[i].tensor.mutable_data();
            auto g = params_[i].tensor.grad();
            for (std::size_t j = 0; j < w.size(); ++j) {
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                w[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                   cfg_.weight_decay * w[j]);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    std::int64_t step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }
    const std::vector<NamedTensor>& params() const { return params_; }

    // Moment accumulators as named tensors, for checkpointing.
    std::vector<NamedTensor> state_tensors() const {
        std::vector<NamedTensor> out;
        out.reserve(params_.size() * 2);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            out.push_back({params_[i].name + ".m",
                           Tensor::from(params_[i].tensor.shape(), m_[i])});
            out.push_back({params_[i].name + ".v",
                           Tensor::from(params_[i].tensor.shape(), v_[i])});
        }
        return out;
    }

    void restore_state(std::int64_t step_count,
                       const std::vector<std::vector<double>>& m,
                       const std::vector<std::vector<double>>& v) {
        if (m.size() != params_.size() || v.size() != params_.size())
            throw contract_error("adamw restore: accumulator count mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
                throw contract_error("adamw restore: accumulator shape mismatch for '" +
                                     params_[i].name + "'");
        step_count_ = step_count;
        m_ = m;
        v_ = v;
    }

  private:
    std::vector<NamedTensor> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::int64_t step_count_ = 0;
};

}  // namespace otflow
