#include <catch_amalgamated.hpp>

#include <cmath>

#include "otflow/metrics.hpp"
#include "otflow/random.hpp"

using namespace otflow;

TEST_CASE("cosine hand values") {
    Rng rng(1);
    Tensor a = gaussian(rng, {3, 2});
    CHECK_THAT(cosine(a, a), Catch::Matchers::WithinAbs(1.0, 1e-14));

    Tensor ex = Tensor::from({2}, {1, 0});
    Tensor ey = Tensor::from({2}, {0, 1});
    CHECK(cosine(ex, ey) == 0.0);

    Tensor u = Tensor::from({2}, {1, 2});
    Tensor v = Tensor::from({2}, {2, 1});
    CHECK_THAT(cosine(u, v), Catch::Matchers::WithinAbs(0.8, 1e-15));

    CHECK_THROWS_AS(cosine(Tensor::zeros({3}), Tensor::zeros({3})), numeric_error);
}

TEST_CASE("cosine scale invariance") {
    Rng rng(2);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor a = gaussian(rng, {6});
        Tensor b = gaussian(rng, {6});
        const double alpha = rng.uniform(0.1, 20.0);
        CHECK_THAT(cosine(mul_scalar(a, alpha), b),
                   Catch::Matchers::WithinAbs(cosine(a, b), 1e-12));
    }
}

TEST_CASE("lp distances") {
    Rng rng(3);
    Tensor a = gaussian(rng, {4});
    CHECK(lp_distance(a, a, 1) == 0.0);
    CHECK(lp_distance(a, a, 2) == 0.0);

    Tensor zero = Tensor::zeros({2});
    CHECK(lp_distance(zero, Tensor::from({2}, {1, 1}), 1) == 2.0);
    CHECK(lp_distance(zero, Tensor::from({2}, {3, 4}), 2) == 5.0);

    CHECK_THROWS_AS(lp_distance(a, Tensor::zeros({5}), 1), shape_error);
    CHECK_THROWS_AS(lp_distance(a, a, 3), config_error);
}

TEST_CASE("kl_embeddings matches the brute-force loop") {
    Rng rng(4);
    Tensor a = gaussian(rng, {3, 4});
    Tensor b = gaussian(rng, {3, 4});
    CHECK_THAT(kl_embeddings(a, a), Catch::Matchers::WithinAbs(0.0, 1e-14));

    // asymmetry on a fixed random pair
    CHECK(std::abs(kl_embeddings(a, b) - kl_embeddings(b, a)) > 1e-6);

    // softmax-normalize by loops, then sum p ln(p/q)
    auto norm = [](const Tensor& t) {
        double mx = t.at(0);
        for (std::size_t i = 1; i < t.size(); ++i) mx = std::max(mx, t.at(i));
        std::vector<double> p(t.size());
        double denom = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            p[i] = std::exp(t.at(i) - mx);
            denom += p[i];
        }
        for (auto& x : p) x /= denom;
        return p;
    };
    const auto p = norm(a);
    const auto q = norm(b);
    double expect = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) expect += p[i] * std::log(p[i] / q[i]);
    CHECK_THAT(kl_embeddings(a, b), Catch::Matchers::WithinAbs(expect, 1e-10));
}

TEST_CASE("kl_embeddings is nonnegative") {
    Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        Tensor a = uniform(rng, {8}, -3.0, 3.0);
        Tensor b = uniform(rng, {8}, -3.0, 3.0);
        CHECK(kl_embeddings(a, b) >= -1e-12);
        CHECK(kl_embeddings(a, b, EmbeddingNormalization::abs_l1) >= -1e-12);
    }
}

TEST_CASE("spearman rank correlation") {
    std::vector<double> inc{1, 2, 3, 4, 5};
    std::vector<double> dec{5, 4, 3, 2, 1};
    std::vector<double> y{0.1, 0.3, 0.35, 0.9, 1.4};
    CHECK_THAT(spearman(inc, y), Catch::Matchers::WithinAbs(1.0, 1e-14));
    CHECK_THAT(spearman(dec, y), Catch::Matchers::WithinAbs(-1.0, 1e-14));

    // one adjacent swap on five points gives 0.9
    std::vector<double> swapped{0.1, 0.35, 0.3, 0.9, 1.4};
    CHECK_THAT(spearman(inc, swapped), Catch::Matchers::WithinAbs(0.9, 1e-14));

    // a three-way tie gets average ranks: rho = 2/sqrt(5)
    std::vector<double> plateau{0.0, 0.5, 1.0, 1.0, 1.0};
    CHECK_THAT(spearman(inc, plateau),
               Catch::Matchers::WithinAbs(2.0 / std::sqrt(5.0), 1e-14));

    CHECK_THROWS_AS(spearman(inc, std::vector<double>{1, 1, 1, 1, 1}),
                    numeric_error);
}

TEST_CASE("aggregate_metrics in both modes") {
    Rng rng(6);
    std::vector<Tensor> gen, ref;
    for (int i = 0; i < 8; ++i) {
        Tensor base = gaussian(rng, {3, 4});
        ref.push_back(base);
        gen.push_back(add(base, mul_scalar(gaussian(rng, {3, 4}), 0.05)));
    }
    MetricReport per_sample =
        aggregate_metrics(gen, ref, AggregationMode::per_sample_mean);
    CHECK(per_sample.cos > 0.9);
    CHECK(per_sample.sample_count == 8);
    CHECK(per_sample.aggregation == "per_sample_mean");

    MetricReport pooled =
        aggregate_metrics(gen, ref, AggregationMode::mean_pooled);
    CHECK(pooled.cos > 0.9);
    CHECK(pooled.aggregation == "mean_pooled");

    auto j = per_sample.to_json();
    CHECK(j.contains("cos"));
    CHECK(j.contains("l1"));
    CHECK(j.contains("l2"));
    CHECK(j.contains("kl"));

    CHECK_THROWS_AS(aggregate_metrics({}, {}), contract_error);
}
