#include <doctest.h>

#include <cmath>
#include <cstring>

#include "tensor.hpp"

using namespace plab;

TEST_CASE("splitmix64 matches the reference stream for seed 0") {
    Rng r(0);
    CHECK(r.next_u64() == 0xE220A8397B1DCDAFull);
    CHECK(r.next_u64() == 0x6E789E6AA1B965F4ull);
    CHECK(r.next_u64() == 0x06C45D188009454Full);
}

TEST_CASE("rng is deterministic and fork streams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    Rng f1 = c.fork(1);
    Rng f2 = c.fork(1);  // second fork draws a fresh state word
    CHECK(f1.next_u64() != f2.next_u64());
}

TEST_CASE("box-muller draws have roughly standard moments") {
    Rng r(7);
    const int n = 200000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        double v = r.normal();
        sum += v;
        sq += v * v;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("fnv1a matches published vectors") {
    CHECK(fnv1a("", 0) == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a", 1) == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a("foobar", 6) == 0x85944171f73967e8ull);
}

TEST_CASE("matmul matches a hand computation") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    CHECK(c.shape == std::vector<int>({2, 2}));
    CHECK(c.at(0, 0) == doctest::Approx(58));
    CHECK(c.at(0, 1) == doctest::Approx(64));
    CHECK(c.at(1, 0) == doctest::Approx(139));
    CHECK(c.at(1, 1) == doctest::Approx(154));
}

TEST_CASE("matmul accumulates each output element in ascending-k order") {
    // the cache-reuse paths rely on this exact accumulation order
    Rng r(3);
    Tensor a = Tensor::randn({5, 17}, r, 1.0f);
    Tensor b = Tensor::randn({17, 9}, r, 1.0f);
    Tensor c = matmul(a, b);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 9; ++j) {
            float acc = 0.0f;
            for (int k = 0; k < 17; ++k) acc += a.at(i, k) * b.at(k, j);
            CHECK(c.at(i, j) == acc);
        }
    }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), Error);
}

TEST_CASE("masked softmax normalizes over permitted keys only") {
    Tensor scores({2, 3}, {0.5f, 1.5f, -0.25f, 2.0f, 2.0f, 2.0f});
    AttnMask mask = AttnMask::all_permitted(2, 3);
    mask.ban(0, 1);
    Tensor p = masked_softmax(scores, mask);
    CHECK(p.at(0, 1) == 0.0f);
    CHECK(p.at(0, 0) + p.at(0, 2) == doctest::Approx(1.0).epsilon(1e-6));
    // permitted entries follow softmax of the permitted scores
    double z = std::exp(0.5 - 0.5) + std::exp(-0.25 - 0.5);
    CHECK(p.at(0, 0) == doctest::Approx(std::exp(0.0) / z).epsilon(1e-5));
    CHECK(p.at(0, 2) == doctest::Approx(std::exp(-0.75) / z).epsilon(1e-5));
    // equal scores, all permitted: uniform
    for (int j = 0; j < 3; ++j) CHECK(p.at(1, j) == doctest::Approx(1.0 / 3).epsilon(1e-6));
}

TEST_CASE("masked softmax is stable under large scores") {
    Tensor scores({1, 2}, {5000.0f, 4999.0f});
    AttnMask mask = AttnMask::all_permitted(1, 2);
    Tensor p = masked_softmax(scores, mask);
    CHECK(std::isfinite(p.at(0, 0)));
    CHECK(p.at(0, 0) + p.at(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p.at(0, 0) > p.at(0, 1));
}

TEST_CASE("masked softmax rejects a fully banned row") {
    Tensor scores({1, 2}, {1.0f, 2.0f});
    AttnMask mask = AttnMask::all_permitted(1, 2);
    mask.ban(0, 0);
    mask.ban(0, 1);
    CHECK_THROWS_AS(masked_softmax(scores, mask), Error);
}

TEST_CASE("causal mask permits exactly the lower triangle") {
    AttnMask m = AttnMask::causal_mask(4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(m.is_allowed(i, j) == (j <= i));
}

TEST_CASE("causal block matches the matching rows of the square causal mask") {
    AttnMask full = AttnMask::causal_mask(6);
    AttnMask block = AttnMask::causal_block(2, 6, 4);  // rows for positions 4, 5
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 6; ++j) CHECK(block.is_allowed(i, j) == full.is_allowed(4 + i, j));
    AttnMask row = AttnMask::decode_row(6, 3);
    for (int j = 0; j < 6; ++j) CHECK(row.is_allowed(0, j) == (j <= 3));
}

TEST_CASE("rms_norm matches a direct computation") {
    Tensor x({2, 2}, {3.0f, 4.0f, -1.0f, 1.0f});
    Tensor g({2}, {1.0f, 2.0f});
    Tensor y = rms_norm(x, g);
    auto expect = [](double v, double ms, double gain) {
        return gain * v / std::sqrt(ms + 1e-6);
    };
    CHECK(y.at(0, 0) == doctest::Approx(expect(3.0, 12.5, 1.0)).epsilon(1e-5));
    CHECK(y.at(0, 1) == doctest::Approx(expect(4.0, 12.5, 2.0)).epsilon(1e-5));
    CHECK(y.at(1, 0) == doctest::Approx(expect(-1.0, 1.0, 1.0)).epsilon(1e-5));
    CHECK(y.at(1, 1) == doctest::Approx(expect(1.0, 1.0, 2.0)).epsilon(1e-5));
}

TEST_CASE("silu matches x * sigmoid(x)") {
    Tensor x({1, 3}, {0.0f, 1.0f, -2.0f});
    Tensor y = silu(x);
    CHECK(y.at(0, 0) == 0.0f);
    CHECK(y.at(0, 1) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-6));
    CHECK(y.at(0, 2) == doctest::Approx(-2.0 / (1.0 + std::exp(2.0))).epsilon(1e-6));
}

TEST_CASE("add and transpose behave as expected") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {10, 20, 30, 40});
    Tensor s = add(a, b);
    CHECK(s.at(1, 0) == 33.0f);
    Tensor t = transpose2d(a);
    CHECK(t.at(0, 1) == 3.0f);
    CHECK(t.at(1, 0) == 2.0f);
    Tensor c = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(add(a, c), Error);
}

TEST_CASE("argmax ties resolve to the lowest index") {
    Tensor t({2, 4}, {1.0f, 7.0f, 7.0f, 0.0f, -5.0f, -5.0f, -6.0f, -7.0f});
    CHECK(argmax_row(t, 0) == 1);
    CHECK(argmax_row(t, 1) == 0);
}

TEST_CASE("ensure_finite rejects NaN and Inf") {
    Tensor t({1, 2}, {1.0f, 2.0f});
    CHECK_NOTHROW(ensure_finite(t, "test"));
    t.at(0, 1) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(ensure_finite(t, "test"), Error);
    t.at(0, 1) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(ensure_finite(t, "test"), Error);
}

TEST_CASE("randn is deterministic for a fixed seed") {
    Rng r1(9), r2(9);
    Tensor a = Tensor::randn({3, 3}, r1, 0.5f);
    Tensor b = Tensor::randn({3, 3}, r2, 0.5f);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}
