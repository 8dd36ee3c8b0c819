#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "otflow/errors.hpp"
#include "otflow/tensor.hpp"

namespace otflow {

inline double cosine(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "cosine");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a.at(i) * b.at(i);
        na += a.at(i) * a.at(i);
        nb += b.at(i) * b.at(i);
    }
    if (na == 0.0 && nb == 0.0)
        throw numeric_error("cosine: undefined for two zero tensors");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double lp_distance(const Tensor& a, const Tensor& b, int p) {
    detail::require_same_shape(a, b, "lp_distance");
    if (p != 1 && p != 2) throw config_error("lp_distance: p must be 1 or 2");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(a.at(i) - b.at(i));
        acc += p == 1 ? d : d * d;
    }
    return p == 1 ? acc : std::sqrt(acc);
}

// How raw embeddings become distributions before the KL comparison.
enum class EmbeddingNormalization { softmax, abs_l1 };

namespace detail {

inline std::vector<double> normalize_embedding(const Tensor& t,
                                               EmbeddingNormalization norm) {
    std::vector<double> p(t.size());
    if (norm == EmbeddingNormalization::softmax) {
        double mx = t.at(0);
        for (std::size_t i = 1; i < t.size(); ++i) mx = std::max(mx, t.at(i));
        double denom = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            p[i] = std::exp(t.at(i) - mx);
            denom += p[i];
        }
        for (auto& x : p) x /= denom;
    } else {
        double denom = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            p[i] = std::abs(t.at(i)) + 1e-12;
            denom += p[i];
        }
        for (auto& x : p) x /= denom;
    }
    return p;
}

}  // namespace detail

// KL between the two flattened embeddings after normalizing each into a
// strictly positive distribution.
inline double kl_embeddings(
    const Tensor& a, const Tensor& b,
    EmbeddingNormalization norm = EmbeddingNormalization::softmax) {
    detail::require_same_shape(a, b, "kl_embeddings");
    const auto p = detail::normalize_embedding(a, norm);
    const auto q = detail::normalize_embedding(b, norm);
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * std::log(p[i] / q[i]);
    return acc;
}

// Spearman rank correlation with average ranks on ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw contract_error("spearman: need two equally sized series");
    auto ranks = [](std::span<const double> v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i] / n;
        my += ry[i] / n;
    }
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0.0 || vy == 0.0)
        throw numeric_error("spearman: a series is constant");
    return cov / std::sqrt(vx * vy);
}

// per_sample_mean averages each metric over paired samples; mean_pooled pools
// each set into its mean embedding first and compares the two means.
enum class AggregationMode { per_sample_mean, mean_pooled };

struct MetricReport {
    double cos = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
    double kl = 0.0;
    std::size_t sample_count = 0;
    std::string aggregation;
    std::string config_fingerprint;
    std::vector<std::uint64_t> seeds;

    nlohmann::json to_json() const {
        return {{"cos", cos},
                {"l1", l1},
                {"l2", l2},
                {"kl", kl},
                {"sample_count", sample_count},
                {"aggregation", aggregation},
                {"config_fingerprint", config_fingerprint},
                {"seeds", seeds}};
    }
};

inline MetricReport aggregate_metrics(
    std::span<const Tensor> generated, std::span<const Tensor> reference,
    AggregationMode mode = AggregationMode::per_sample_mean,
    EmbeddingNormalization norm = EmbeddingNormalization::softmax) {
    if (generated.empty() || generated.size() != reference.size())
        throw contract_error("aggregate_metrics: need equally sized nonempty sets");
    MetricReport report;
    report.sample_count = generated.size();
    if (mode == AggregationMode::mean_pooled) {
        report.aggregation = "mean_pooled";
        auto pool = [](std::span<const Tensor> set) {
            std::vector<double> acc(set.front().size(), 0.0);
            for (const auto& t : set)
                for (std::size_t i = 0; i < acc.size(); ++i)
                    acc[i] += t.at(i) / static_cast<double>(set.size());
            return Tensor::from(set.front().shape(), std::move(acc));
        };
        Tensor a = pool(generated);
        Tensor b = pool(reference);
        report.cos = cosine(a, b);
        report.l1 = lp_distance(a, b, 1);
        report.l2 = lp_distance(a, b, 2);
        report.kl = kl_embeddings(a, b, norm);
        return report;
    }
    report.aggregation = "per_sample_mean";
    const double n = static_cast<double>(generated.size());
    for (std::size_t s = 0; s < generated.size(); ++s) {
        report.cos += cosine(generated[s], reference[s]) / n;
        report.l1 += lp_distance(generated[s], reference[s], 1) / n;
        report.l2 += lp_distance(generated[s], reference[s], 2) / n;
        report.kl += kl_embeddings(generated[s], reference[s], norm) / n;
    }
    return report;
}

}  // namespace otflow
