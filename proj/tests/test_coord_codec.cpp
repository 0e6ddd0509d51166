#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "tokdet/coord_codec.hpp"

using namespace tokdet;

TEST_CASE("bin validates its range") {
    CHECK(Bin(0).value() == 0);
    CHECK(Bin(999).value() == 999);
    CHECK_THROWS_AS(Bin(-1), InvalidInputError);
    CHECK_THROWS_AS(Bin(1000), InvalidInputError);
}

TEST_CASE("quantize matches the closed form on hand-picked values") {
    CHECK(quantize(0.0, 1000.0).value() == 0);
    CHECK(quantize(0.999, 1000.0).value() == 0);
    CHECK(quantize(1.0, 1000.0).value() == 1);
    CHECK(quantize(999.9, 1000.0).value() == 999);
    // Exact bin edges land in the upper bin.
    CHECK(quantize(500.0, 1000.0).value() == 500);
    // Non-unit extents.
    CHECK(quantize(320.0, 640.0).value() == 500);
    CHECK(quantize(0.5, 1.0).value() == 500);
    // 192 on a 1000 extent from the worked example.
    CHECK(quantize(192.0, 1000.0).value() == 192);
}

TEST_CASE("out-of-range coordinates clamp to edge bins") {
    CHECK(quantize(-5.0, 1000.0).value() == 0);
    CHECK(quantize(1000.0, 1000.0).value() == 999);
    CHECK(quantize(1e12, 1000.0).value() == 999);
}

TEST_CASE("invalid extents are rejected") {
    CHECK_THROWS_AS(quantize(1.0, 0.0), InvalidInputError);
    CHECK_THROWS_AS(quantize(1.0, -3.0), InvalidInputError);
    CHECK_THROWS_AS(dequantize(Bin(3), 0.0), InvalidInputError);
}

TEST_CASE("dequantize returns bin centers") {
    CHECK(dequantize(Bin(0), 1000.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(dequantize(Bin(999), 1000.0) == doctest::Approx(999.5).epsilon(1e-12));
    CHECK(dequantize(Bin(500), 640.0) == doctest::Approx(320.32).epsilon(1e-12));
}

TEST_CASE("round-trip error stays below extent / 2000 over 100k random draws") {
    testutil::Rng rng(11);
    for (int i = 0; i < 100000; ++i) {
        double extent = rng.uniform(1.0, 4096.0);
        double x = rng.uniform(0.0, extent);
        if (x >= extent) continue;
        double back = dequantize(quantize(x, extent), extent);
        CHECK(std::abs(back - x) <= extent / 2000.0 + 1e-9);
    }
}

TEST_CASE("quantize is monotone non-decreasing in x") {
    testutil::Rng rng(12);
    for (int i = 0; i < 10000; ++i) {
        double extent = rng.uniform(1.0, 4096.0);
        double a = rng.uniform(-10.0, extent + 10.0);
        double b = rng.uniform(-10.0, extent + 10.0);
        if (a > b) std::swap(a, b);
        CHECK(quantize(a, extent).value() <= quantize(b, extent).value());
    }
}

TEST_CASE("vocabulary mapping places bins in the final block") {
    VocabMap vm(151657);
    CHECK(vm.coord_base() == 150657);
    CHECK(vm.bin_to_token(Bin(0)) == 150657);
    CHECK(vm.bin_to_token(Bin(999)) == 151656);
    CHECK(vm.token_to_bin(150657 + 42).value() == 42);
    CHECK(vm.is_coordinate(150657));
    CHECK(!vm.is_coordinate(150656));
    CHECK(!vm.is_coordinate(151657));
    CHECK_THROWS_AS(vm.token_to_bin(150656), NotACoordinateError);
    CHECK(!vm.try_token_to_bin(10).has_value());
    CHECK(vm.try_token_to_bin(vm.bin_to_token(Bin(7)))->value() == 7);
}

TEST_CASE("vocabulary smaller than the coordinate block is rejected") {
    CHECK_THROWS_AS(VocabMap(999), InvalidInputError);
    CHECK(VocabMap(1000).coord_base() == 0);
}

TEST_CASE("token round-trip is the identity over every bin") {
    VocabMap vm(32000);
    for (int b = 0; b < kNumBins; ++b) {
        CHECK(vm.token_to_bin(vm.bin_to_token(Bin(b))).value() == b);
    }
}
