#include <catch_amalgamated.hpp>

#include <cmath>

#include "otflow/random.hpp"
#include "otflow/rng.hpp"

using namespace otflow;

TEST_CASE("same seed gives identical tensors") {
    Rng a(1234);
    Rng b(1234);
    Tensor ta = gaussian(a, {4, 4});
    Tensor tb = gaussian(b, {4, 4});
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta.at(i) == tb.at(i));
}

TEST_CASE("different counters give different output") {
    Rng a(1234, 0);
    Rng b(1234, 10);
    Tensor ta = gaussian(a, {8});
    Tensor tb = gaussian(b, {8});
    bool any_diff = false;
    for (std::size_t i = 0; i < ta.size(); ++i)
        any_diff = any_diff || ta.at(i) != tb.at(i);
    CHECK(any_diff);
}

TEST_CASE("gaussian moments at 1e5 samples") {
    Rng rng(2024);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = rng.gaussian();
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) <= 0.02);
    CHECK(std::abs(var - 1.0) <= 0.03);
}

TEST_CASE("uniform stays in [0,1)") {
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("below is bounded and hits both halves") {
    Rng rng(7);
    bool low = false, high = false;
    for (int i = 0; i < 1000; ++i) {
        auto v = rng.below(10);
        CHECK(v < 10);
        low = low || v < 5;
        high = high || v >= 5;
    }
    CHECK(low);
    CHECK(high);
}

TEST_CASE("derived streams are independent of parent state") {
    Rng parent(55);
    parent.next_u64();
    parent.next_u64();
    Rng child_a = parent.derive(1);
    Rng child_b = Rng(55).derive(1);
    CHECK(child_a.next_u64() == child_b.next_u64());
    CHECK(parent.derive(1).next_u64() != parent.derive(2).next_u64());
}

// Pinned sequences: the stream is a documented pure function of
// (seed, counter), so these values must never change.
TEST_CASE("golden sequences") {
    Rng rng(42);
    CHECK(rng.next_u64() == UINT64_C(13679457532755275413));
    CHECK(rng.next_u64() == UINT64_C(2949826092126892291));
    CHECK(rng.next_u64() == UINT64_C(5139283748462763858));

    Rng u(7, 0);
    CHECK(u.uniform() == 0.38982974839127149);
    CHECK(u.uniform() == 0.016788294528156111);

    Rng g(123, 0);
    CHECK(g.gaussian() == 1.548891043049561);
    CHECK(g.gaussian() == -0.76645449017071043);
    CHECK(g.counter() == 4);  // two uniforms per draw
}
