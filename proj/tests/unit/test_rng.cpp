#include <catch2/catch_amalgamated.hpp>

#include "cityscope/rng.hpp"

using namespace cityscope;

TEST_CASE("splitmix64 is deterministic per seed") {
    SplitMix64 a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next() == b.next());
    bool differs = false;
    SplitMix64 a2(42);
    for (int i = 0; i < 100; ++i)
        if (a2.next() != c.next()) differs = true;
    REQUIRE(differs);
}

TEST_CASE("uniform stays in [0,1)") {
    SplitMix64 rng(7);
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("fisher-yates shuffle is a seeded permutation") {
    std::vector<int> items(50);
    for (int i = 0; i < 50; ++i) items[i] = i;

    std::vector<int> first = items, second = items;
    SplitMix64 r1(9), r2(9);
    fisher_yates_shuffle(first, r1);
    fisher_yates_shuffle(second, r2);
    REQUIRE(first == second);

    std::vector<int> sorted = first;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == items);
}
