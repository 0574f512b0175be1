#include <doctest.h>

#include <cmath>
#include <vector>

#include "vaalab/rng.hpp"

using namespace vaalab;

TEST_CASE("rng reproduces the same stream for the same seed") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derived seeds differ by tag and index") {
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}

TEST_CASE("uniform stays in [0,1) and has the right mean") {
    Rng rng(7);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::fabs(sum / n - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("normal moments") {
    Rng rng(9);
    double sum = 0.0, sum_sq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sum_sq += x * x;
    }
    CHECK(std::fabs(sum / n) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::fabs(sum_sq / n - 1.0) < 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("below covers the range without obvious bias") {
    Rng rng(11);
    std::vector<int> counts(10, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(rng.below(10))];
    for (int c : counts) {
        CHECK(std::fabs(c - n / 10.0) < 3.0 * std::sqrt(n * 0.1 * 0.9));
    }
}

TEST_CASE("categorical respects degenerate weights") {
    Rng rng(13);
    const std::vector<double> w{1.0, 0.0};
    for (int i = 0; i < 100; ++i) CHECK(rng.categorical(w) == 0);
}
