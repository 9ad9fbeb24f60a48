#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "anchorloss/numerics.hpp"

using namespace anchorloss;

TEST_SUITE("numerics") {

TEST_CASE("stable_log") {
    CHECK(stable_log(1.0, 1e-7) == 0.0);
    CHECK(stable_log(0.0, 1e-7) == doctest::Approx(std::log(1e-7)).epsilon(1e-15));
    CHECK(stable_log(std::exp(1.0), 1e-7) == doctest::Approx(1.0).epsilon(1e-15));

    SUBCASE("monotone nondecreasing") {
        double prev = stable_log(0.0);
        for (double x = 1e-9; x <= 2.0; x *= 3.0) {
            const double cur = stable_log(x);
            CHECK(cur >= prev);
            prev = cur;
        }
    }
}

TEST_CASE("sigmoid") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(800.0) == 1.0);
    CHECK(std::isfinite(sigmoid(-1000.0)));
    CHECK(sigmoid(-1000.0) >= 0.0);
    CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-15));

    SUBCASE("symmetry: sigmoid(-z) == 1 - sigmoid(z)") {
        for (double z = -30.0; z <= 30.0; z += 0.37) {
            CHECK(std::abs(sigmoid(-z) - (1.0 - sigmoid(z))) < 1e-15);
        }
    }
}

TEST_CASE("softmax") {
    CHECK(softmax({0.0, 0.0}) == Vector{0.5, 0.5});

    SUBCASE("shift invariance") {
        for (double c : {-1000.0, -3.0, 0.0, 7.5, 1000.0}) {
            const Vector out = softmax({c, c, c});
            for (double v : out) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
        }
    }

    SUBCASE("direct evaluation") {
        const Vector out = softmax({std::log(1.0), std::log(2.0), std::log(3.0)});
        CHECK(out[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
        CHECK(out[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-14));
        CHECK(out[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-14));
    }

    SUBCASE("sums to one, entries in (0,1)") {
        Rng rng(11);
        for (int trial = 0; trial < 200; ++trial) {
            Vector logits(1 + rng.index(8));
            for (double& z : logits) z = rng.uniform(-15.0, 15.0);
            const Vector out = softmax(logits);
            double sum = 0.0;
            for (double v : out) {
                CHECK(v > 0.0);
                CHECK((out.size() == 1 || v < 1.0));
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }

    SUBCASE("extreme spread stays normalized without NaN") {
        const Vector out = softmax({-800.0, 800.0});
        CHECK(out[1] == 1.0);
        CHECK(out[0] + out[1] == doctest::Approx(1.0).epsilon(1e-15));
    }

    CHECK_THROWS_WITH_AS(softmax({}), "empty logits", std::invalid_argument);
}

TEST_CASE("finite_difference_gradient") {
    SUBCASE("sum of squares") {
        const auto f = [](const Vector& x) {
            double s = 0.0;
            for (double v : x) s += v * v;
            return s;
        };
        const Vector g = finite_difference_gradient(f, {1.0, 2.0}, 1e-5);
        CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
        CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));
    }

    SUBCASE("constant function") {
        const Vector g = finite_difference_gradient(
            [](const Vector&) { return 3.5; }, {0.1, -2.0, 7.0}, 1e-5);
        for (double v : g) CHECK(v == 0.0);
    }

    SUBCASE("non-finite evaluation names the perturbed coordinate") {
        // finite everywhere except when coordinate 1 is pushed below zero
        const auto f = [](const Vector& x) { return std::log(x[1]); };
        CHECK_THROWS_WITH_AS(finite_difference_gradient(f, {1.0, 1e-6}, 1e-5),
                             "oracle evaluation failed at coordinate 1",
                             std::runtime_error);
    }
}

TEST_CASE("rng determinism") {
    Rng a(123456789);
    Rng b(123456789);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }

    SUBCASE("distinct seeds differ") {
        Rng c(1), d(2);
        bool any_diff = false;
        for (int i = 0; i < 16; ++i) any_diff |= c.next_u64() != d.next_u64();
        CHECK(any_diff);
    }
}

TEST_CASE("rng uniform range") {
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("rng normal draws are reproducible and plausible") {
    Rng a(42), b(42);
    double sum = 0.0, sum_sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = a.normal();
        CHECK(x == b.normal());
        sum += x;
        sum_sq += x * x;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("rng shuffle is a permutation") {
    Rng rng(99);
    for (std::size_t n : {std::size_t{1}, std::size_t{2}, std::size_t{17}, std::size_t{100}}) {
        std::vector<int> items;
        for (std::size_t i = 0; i < n; ++i) items.push_back(static_cast<int>(i));
        auto shuffled = items;
        rng.shuffle(shuffled);
        CHECK(std::multiset<int>(shuffled.begin(), shuffled.end()) ==
              std::multiset<int>(items.begin(), items.end()));
    }
}

TEST_CASE("rng index bounds") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        CHECK(rng.index(7) < 7);
    }
    CHECK(rng.index(1) == 0);
    CHECK_THROWS_AS(rng.index(0), std::invalid_argument);
}

}  // TEST_SUITE
