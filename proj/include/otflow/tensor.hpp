#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "otflow/errors.hpp"

namespace otflow {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace autograd {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily, accumulates across backward calls
    bool requires_grad{false};
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Node&)> backfn;  // reads this->grad, adds into parents

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Graph recording can be suspended for pure inference; results then carry no
// parents and no gradient requirement.
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled_flag()) { grad_enabled_flag() = false; }
    ~NoGradGuard() { grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

}  // namespace autograd

// Dense row-major float64 tensor with an optional gradient slot. Tensors are
// value handles onto shared nodes: copying a Tensor aliases the same storage.
// Values are immutable once produced by an operation; the exceptions are leaf
// parameter updates (optimizer) and gradient accumulation.
class Tensor {
  public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data,
                       bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw shape_error("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        auto n = std::make_shared<autograd::Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad && autograd::grad_enabled_flag();
        return Tensor(std::move(n));
    }

    static Tensor full(const Shape& shape, double v, bool requires_grad = false) {
        return from(shape, std::vector<double>(shape_numel(shape), v), requires_grad);
    }
    static Tensor zeros(const Shape& shape, bool requires_grad = false) {
        return full(shape, 0.0, requires_grad);
    }
    static Tensor ones(const Shape& shape, bool requires_grad = false) {
        return full(shape, 1.0, requires_grad);
    }
    static Tensor scalar(double v) { return from({}, {v}); }
    static Tensor eye(std::size_t n) {
        Tensor t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.node_->value[i * n + i] = 1.0;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }
    std::size_t dim(std::size_t i) const {
        return i < node_->shape.size() ? node_->shape[i] : 1;
    }
    bool is_scalar() const { return size() == 1; }

    double item() const {
        if (!is_scalar())
            throw contract_error("item() requires a scalar tensor, got shape " +
                                 shape_str(shape()));
        return node_->value[0];
    }

    double at(std::size_t i) const { return node_->value[i]; }
    double at(std::size_t i, std::size_t j) const {
        return node_->value[i * cols() + j];
    }
    std::span<const double> data() const { return node_->value; }

    // Leaf mutation, for parameter setup and optimizer updates only.
    std::vector<double>& mutable_data() { return node_->value; }
    void set(std::size_t i, double v) { node_->value[i] = v; }
    void set(std::size_t i, std::size_t j, double v) {
        node_->value[i * cols() + j] = v;
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::span<const double> grad() const { return node_->grad; }
    double grad_at(std::size_t i) const { return node_->grad[i]; }
    std::vector<double>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    // Constant copy of the value, cut off from the graph.
    Tensor detach() const {
        auto n = std::make_shared<autograd::Node>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(std::move(n));
    }

    bool all_finite() const {
        for (double v : node_->value)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<autograd::Node> node() const { return node_; }

    explicit Tensor(std::shared_ptr<autograd::Node> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<autograd::Node> node_;
};

namespace detail {

using autograd::Node;

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(const Node&)> backfn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (autograd::grad_enabled_flag()) {
        bool needs = false;
        for (const auto& p : parents) needs = needs || p.requires_grad();
        if (needs) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (auto& p : parents) n->parents.push_back(p.node());
            n->backfn = std::move(backfn);
        }
    }
    return Tensor(std::move(n));
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* opname) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(opname) + ": shapes " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()) + " differ");
}

inline void require_matrix(const Tensor& t, const char* opname) {
    if (t.ndim() != 2)
        throw shape_error(std::string(opname) + ": expected a matrix, got shape " +
                          shape_str(t.shape()));
}

}  // namespace detail

// ---- elementwise binary ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + b.at(i);
    auto an = a.node().get();
    auto bn = b.node().get();
    return detail::make_op(a.shape(), std::move(v), {a, b},
                           [an, bn](const detail::Node& out) {
                               if (an->requires_grad) {
                                   an->ensure_grad();
                                   for (std::size_t i = 0; i < out.grad.size(); ++i)
                                       an->grad[i] += out.grad[i];
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (std::size_t i = 0; i < out.grad.size(); ++i)
                                       bn->grad[i] += out.grad[i];
                               }
                           });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) - b.at(i);
    auto an = a.node().get();
    auto bn = b.node().get();
    return detail::make_op(a.shape(), std::move(v), {a, b},
                           [an, bn](const detail::Node& out) {
                               if (an->requires_grad) {
                                   an->ensure_grad();
                                   for (std::size_t i = 0; i < out.grad.size(); ++i)
                                       an->grad[i] += out.grad[i];
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (std::size_t i = 0; i < out.grad.size(); ++i)
                                       bn->grad[i] -= out.grad[i];
                               }
                           });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
    auto an = a.node().get();
    auto bn = b.node().get();
    return detail::make_op(a.shape(), std::move(v), {a, b},
                           [an, bn](const detail::Node& out) {
                               if (an->requires_grad) {
                                   an->ensure_grad();
                                   for (std::size_t i = 0; i < out.grad.size(); ++i)
                                       an->grad[i] += out.grad[i] * bn->value[i];
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (std::size_t i = 0; i < out.grad.size(); ++i)
                                       bn->grad[i] += out.grad[i] * an->value[i];
                               }
                           });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "div");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) / b.at(i);
    auto an = a.node().get();
    auto bn = b.node().get();
    return detail::make_op(a.shape(), std::move(v), {a, b},
                           [an, bn](const detail::Node& out) {
                               if (an->requires_grad) {
                                   an->ensure_grad();
                                   for (std::size_t i = 0; i < out.grad.size(); ++i)
                                       an->grad[i] += out.grad[i] / bn->value[i];
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (std::size_t i = 0; i < out.grad.size(); ++i)
                                       bn->grad[i] -= out.grad[i] * an->value[i] /
                                                      (bn->value[i] * bn->value[i]);
                               }
                           });
}

// ---- scalar broadcast ----

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + s;
    auto an = a.node().get();
    return detail::make_op(a.shape(), std::move(v), {a},
                           [an](const detail::Node& out) {
                               an->ensure_grad();
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                   an->grad[i] += out.grad[i];
                           });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * s;
    auto an = a.node().get();
    return detail::make_op(a.shape(), std::move(v), {a},
                           [an, s](const detail::Node& out) {
                               an->ensure_grad();
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                   an->grad[i] += out.grad[i] * s;
                           });
}

// ---- elementwise unary ----

namespace detail {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd_factor) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(a.at(i));
    auto an = a.node().get();
    return make_op(a.shape(), std::move(v), {a},
                   [an, bwd_factor](const Node& out) {
                       an->ensure_grad();
                       for (std::size_t i = 0; i < out.grad.size(); ++i)
                           an->grad[i] += out.grad[i] *
                                          bwd_factor(an->value[i], out.value[i]);
                   });
}

}  // namespace detail

inline Tensor neg(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return -x; },
                            [](double, double) { return -1.0; });
}
inline Tensor exp(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::exp(x); },
                            [](double, double y) { return y; });
}
inline Tensor log(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::log(x); },
                            [](double x, double) { return 1.0 / x; });
}
inline Tensor sqrt(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::sqrt(x); },
                            [](double, double y) { return 0.5 / y; });
}
inline Tensor abs(const Tensor& a) {
    // subgradient 0 at the kink
    return detail::unary_op(a, [](double x) { return std::abs(x); },
                            [](double x, double) {
                                return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                            });
}
inline Tensor tanh(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::tanh(x); },
                            [](double, double y) { return 1.0 - y * y; });
}
inline Tensor relu(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                            [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
inline Tensor reciprocal(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return 1.0 / x; },
                            [](double, double y) { return -y * y; });
}
inline Tensor square(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return x * x; },
                            [](double x, double) { return 2.0 * x; });
}

// ---- matrix ops ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    if (a.cols() != b.rows())
        throw shape_error("matmul: inner dimensions of " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()) + " disagree");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> v(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            for (std::size_t j = 0; j < n; ++j) v[i * n + j] += aip * b.at(p, j);
        }
    auto an = a.node().get();
    auto bn = b.node().get();
    return detail::make_op(
        {m, n}, std::move(v), {a, b}, [an, bn, m, k, n](const detail::Node& out) {
            if (an->requires_grad) {
                an->ensure_grad();  // dA = G * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += out.grad[i * n + j] * bn->value[p * n + j];
                        an->grad[i * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();  // dB = A^T * G
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += an->value[i * k + p] * out.grad[i * n + j];
                        bn->grad[p * n + j] += acc;
                    }
            }
        });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_matrix(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[j * m + i] = a.at(i, j);
    auto an = a.node().get();
    return detail::make_op({n, m}, std::move(v), {a},
                           [an, m, n](const detail::Node& out) {
                               an->ensure_grad();
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j)
                                       an->grad[i * n + j] += out.grad[j * m + i];
                           });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw shape_error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(shape));
    std::vector<double> v(a.data().begin(), a.data().end());
    auto an = a.node().get();
    return detail::make_op(std::move(shape), std::move(v), {a},
                           [an](const detail::Node& out) {
                               an->ensure_grad();
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                   an->grad[i] += out.grad[i];
                           });
}

// ---- reductions ----

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
    auto an = a.node().get();
    return detail::make_op({}, {acc}, {a}, [an](const detail::Node& out) {
        an->ensure_grad();
        for (double& g : an->grad) g += out.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
    auto an = a.node().get();
    return detail::make_op({}, {acc * inv}, {a},
                           [an, inv](const detail::Node& out) {
                               an->ensure_grad();
                               for (double& g : an->grad) g += out.grad[0] * inv;
                           });
}

inline Tensor row_sum(const Tensor& a) {
    detail::require_matrix(a, "row_sum");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> v(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[i] += a.at(i, j);
    auto an = a.node().get();
    return detail::make_op({m}, std::move(v), {a},
                           [an, m, n](const detail::Node& out) {
                               an->ensure_grad();
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j)
                                       an->grad[i * n + j] += out.grad[i];
                           });
}

inline Tensor col_sum(const Tensor& a) {
    detail::require_matrix(a, "col_sum");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> v(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[j] += a.at(i, j);
    auto an = a.node().get();
    return detail::make_op({n}, std::move(v), {a},
                           [an, m, n](const detail::Node& out) {
                               an->ensure_grad();
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j)
                                       an->grad[i * n + j] += out.grad[j];
                           });
}

inline Tensor col_mean(const Tensor& a) {
    return mul_scalar(col_sum(a), 1.0 / static_cast<double>(a.rows()));
}

// ---- row/column broadcast ----

// out[i,j] = a[i,j] * v[i]
inline Tensor scale_rows(const Tensor& a, const Tensor& v) {
    detail::require_matrix(a, "scale_rows");
    if (v.size() != a.rows())
        throw shape_error("scale_rows: vector " + shape_str(v.shape()) +
                          " does not match rows of " + shape_str(a.shape()));
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, j) * v.at(i);
    auto an = a.node().get();
    auto vn = v.node().get();
    return detail::make_op(
        a.shape(), std::move(out), {a, v}, [an, vn, m, n](const detail::Node& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        an->grad[i * n + j] += o.grad[i * n + j] * vn->value[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        acc += o.grad[i * n + j] * an->value[i * n + j];
                    vn->grad[i] += acc;
                }
            }
        });
}

// out[i,j] = a[i,j] * v[j]
inline Tensor scale_cols(const Tensor& a, const Tensor& v) {
    detail::require_matrix(a, "scale_cols");
    if (v.size() != a.cols())
        throw shape_error("scale_cols: vector " + shape_str(v.shape()) +
                          " does not match cols of " + shape_str(a.shape()));
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, j) * v.at(j);
    auto an = a.node().get();
    auto vn = v.node().get();
    return detail::make_op(
        a.shape(), std::move(out), {a, v}, [an, vn, m, n](const detail::Node& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        an->grad[i * n + j] += o.grad[i * n + j] * vn->value[j];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < m; ++i)
                        acc += o.grad[i * n + j] * an->value[i * n + j];
                    vn->grad[j] += acc;
                }
            }
        });
}

// ---- softmax ----

// Per-row softmax with max subtraction; rows sum to 1 exactly up to rounding
// and the result is invariant under adding a constant to a row.
inline Tensor row_softmax(const Tensor& a) {
    detail::require_matrix(a, "row_softmax");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = a.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            v[i * n + j] = std::exp(a.at(i, j) - mx);
            denom += v[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) v[i * n + j] /= denom;
    }
    auto an = a.node().get();
    return detail::make_op(
        a.shape(), std::move(v), {a}, [an, m, n](const detail::Node& out) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    dot += out.grad[i * n + j] * out.value[i * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    an->grad[i * n + j] +=
                        out.value[i * n + j] * (out.grad[i * n + j] - dot);
            }
        });
}

// ---- structural ops ----

// out[i,j] = a[i] - b[j]
inline Tensor pairwise_diff(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 1 || b.ndim() != 1)
        throw shape_error("pairwise_diff: expected vectors, got " +
                          shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = a.size(), n = b.size();
    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[i * n + j] = a.at(i) - b.at(j);
    auto an = a.node().get();
    auto bn = b.node().get();
    return detail::make_op(
        {m, n}, std::move(v), {a, b}, [an, bn, m, n](const detail::Node& out) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += out.grad[i * n + j];
                    an->grad[i] += acc;
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < m; ++i) acc += out.grad[i * n + j];
                    bn->grad[j] -= acc;
                }
            }
        });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "concat_cols");
    detail::require_matrix(b, "concat_cols");
    if (a.rows() != b.rows())
        throw shape_error("concat_cols: row counts of " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()) + " differ");
    const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
    std::vector<double> v(m * (na + nb));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < na; ++j) v[i * (na + nb) + j] = a.at(i, j);
        for (std::size_t j = 0; j < nb; ++j) v[i * (na + nb) + na + j] = b.at(i, j);
    }
    auto an = a.node().get();
    auto bn = b.node().get();
    return detail::make_op(
        {m, na + nb}, std::move(v), {a, b},
        [an, bn, m, na, nb](const detail::Node& out) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < na; ++j)
                        an->grad[i * na + j] += out.grad[i * (na + nb) + j];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < nb; ++j)
                        bn->grad[i * nb + j] += out.grad[i * (na + nb) + na + j];
            }
        });
}

// v[c] stacked n times into an n x c matrix
inline Tensor repeat_row(const Tensor& v, std::size_t n) {
    if (v.ndim() != 1)
        throw shape_error("repeat_row: expected a vector, got " +
                          shape_str(v.shape()));
    const std::size_t c = v.size();
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = v.at(j);
    auto vn = v.node().get();
    return detail::make_op({n, c}, std::move(out), {v},
                           [vn, n, c](const detail::Node& o) {
                               vn->ensure_grad();
                               for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < c; ++j)
                                       vn->grad[j] += o.grad[i * c + j];
                           });
}

inline Tensor select_row(const Tensor& a, std::size_t i) {
    detail::require_matrix(a, "select_row");
    if (i >= a.rows())
        throw shape_error("select_row: row " + std::to_string(i) +
                          " out of range for " + shape_str(a.shape()));
    const std::size_t n = a.cols();
    std::vector<double> v(n);
    for (std::size_t j = 0; j < n; ++j) v[j] = a.at(i, j);
    auto an = a.node().get();
    return detail::make_op({n}, std::move(v), {a},
                           [an, i, n](const detail::Node& out) {
                               an->ensure_grad();
                               for (std::size_t j = 0; j < n; ++j)
                                   an->grad[i * n + j] += out.grad[j];
                           });
}

// ---- operator sugar ----

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

inline Tensor sum_sq(const Tensor& a) { return sum(mul(a, a)); }

// ---- backward ----

// Reverse-mode sweep from a scalar loss. Populates grad on every tensor with
// requires_grad reachable from the loss; repeated calls accumulate.
inline void backward(const Tensor& loss) {
    if (!loss.is_scalar())
        throw contract_error("backward: loss must be scalar, got shape " +
                             shape_str(loss.shape()));
    using autograd::Node;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Interior grads are scratch per sweep; only leaves accumulate across
    // repeated backward calls.
    for (Node* node : order)
        if (node->backfn) node->grad.assign(node->value.size(), 0.0);
    Node* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backfn) node->backfn(*node);
    }
}

inline void zero_grads(std::span<Tensor> params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace otflow
