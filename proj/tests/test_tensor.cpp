#include <cmath>

#include "doctest.h"
#include "spanlab/rng.hpp"
#include "spanlab/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace spanlab;
using testsupport::grad_check;
using testsupport::random_tensor;

TEST_CASE("matmul identity and zero cases") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    CHECK(matmul(eye, b).data() == std::vector<double>{3, 4, 5, 6});

    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor z = Tensor::from_data({2, 1}, {0, 0});
    CHECK(matmul(a, z).data() == std::vector<double>{0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(11);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    const double err = grad_check({a, b}, [&] { return sum(matmul(a, b)); });
    CHECK(err < 1e-6);
}

TEST_CASE("matmul_nt agrees with matmul of explicit transpose and checks out on FD") {
    Rng rng(12);
    Tensor a = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    // n-by-k transpose done by hand
    std::vector<double> bt(5 * 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) bt[j * 4 + i] = b.data()[i * 5 + j];
    Tensor btt = Tensor::from_data({5, 4}, bt);
    const auto lhs = matmul_nt(a, b).data();
    const auto rhs = matmul(a, btt).data();
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-12));
    CHECK(grad_check({a, b}, [&] { return sum(matmul_nt(a, b)); }) < 1e-6);
}

TEST_CASE("softmax symmetric and stability-forced examples") {
    Tensor x = Tensor::from_data({4}, {0, 0, 0, 0});
    for (double v : softmax_lastdim(x).data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    Tensor big = Tensor::from_data({2}, {1000, 0});
    const auto y = softmax_lastdim(big).data();
    CHECK(std::abs(y[0] - 1.0) < 1e-12);
    CHECK(std::abs(y[1]) < 1e-12);
}

TEST_CASE("softmax rows sum to one and gradient checks") {
    Rng rng(13);
    Tensor x = Tensor::from_data({3}, {1, 2, 3});
    double s = 0.0;
    for (double v : softmax_lastdim(x).data()) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
    CHECK(grad_check({x}, [&] {
              Tensor w = Tensor::from_data({3}, {0.3, -1.1, 0.7});
              return sum(mul(softmax_lastdim(x), w));
          }) < 1e-6);

    // large-magnitude inputs keep the sum property
    for (int trial = 0; trial < 20; ++trial) {
        Tensor r = random_tensor({8}, rng, -1e4, 1e4);
        double total = 0.0;
        for (double v : softmax_lastdim(r).data()) total += v;
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("layernorm zero-variance and identity examples") {
    Tensor g = Tensor::from_data({3}, {1, 1, 1});
    Tensor b = Tensor::from_data({3}, {0, 0, 0});
    Tensor x = Tensor::from_data({3}, {5, 5, 5});
    for (double v : layernorm(x, g, b, 1e-5).data()) CHECK(v == doctest::Approx(0.0));

    Tensor g2 = Tensor::from_data({2}, {1, 1});
    Tensor b2 = Tensor::from_data({2}, {0, 0});
    Tensor x2 = Tensor::from_data({2}, {1, -1});
    const auto y = layernorm(x2, g2, b2, 1e-14).data();
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("layernorm gradient matches finite differences") {
    Rng rng(14);
    Tensor x = random_tensor({2, 6}, rng);
    Tensor g = random_tensor({6}, rng, 0.5, 1.5);
    Tensor b = random_tensor({6}, rng);
    Tensor w = random_tensor({2, 6}, rng);
    CHECK(grad_check({x, g, b}, [&] { return sum(mul(layernorm(x, g, b, 1e-5), w)); }) < 1e-6);
}

TEST_CASE("cross entropy analytic values") {
    // one-hot-correct with growing margin drives the loss to zero
    double margins[] = {5, 20, 60};
    double prev = 1e9;
    for (double m : margins) {
        Tensor logits = Tensor::from_data({1, 3}, {m, 0, 0});
        const double loss = cross_entropy(logits, {0}, {true}).item();
        CHECK(loss < prev);
        prev = loss;
    }
    CHECK(prev < 1e-20);

    Tensor uniform = Tensor::zeros({2, 4});
    const double loss = cross_entropy(uniform, {1, 3}, {true, true}).item();
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects an empty mask and bad targets") {
    Tensor logits = Tensor::zeros({2, 4});
    CHECK_THROWS_AS(cross_entropy(logits, {0, 1}, {false, false}), UsageError);
    CHECK_THROWS_AS(cross_entropy(logits, {0, 9}, {true, true}), ShapeError);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(15);
    Tensor logits = random_tensor({4, 5}, rng);
    CHECK(grad_check({logits}, [&] {
              return cross_entropy(logits, {4, 2, 0, 1}, {true, false, true, true});
          }) < 1e-6);
}

TEST_CASE("gelu, embedding, slice, concat, masks and steering gradients") {
    Rng rng(16);
    SUBCASE("gelu") {
        Tensor x = random_tensor({7}, rng);
        CHECK(grad_check({x}, [&] { return sum(gelu(x)); }) < 1e-6);
    }
    SUBCASE("embedding") {
        Tensor table = random_tensor({5, 3}, rng);
        Tensor w = random_tensor({4, 3}, rng);
        CHECK(grad_check({table}, [&] {
                  return sum(mul(embedding(table, {1, 4, 1, 0}), w));
              }) < 1e-6);
    }
    SUBCASE("slice and concat") {
        Tensor x = random_tensor({3, 6}, rng);
        Tensor y = random_tensor({3, 2}, rng);
        Tensor w = random_tensor({3, 8}, rng);
        CHECK(grad_check({x, y}, [&] {
                  return sum(mul(concat_cols({slice_cols(x, 1, 4), y, slice_cols(x, 0, 2)}), w));
              }) < 1e-6);
    }
    SUBCASE("row and column scaling") {
        Tensor x = random_tensor({3, 4}, rng);
        std::vector<double> rw{0.0, 1.0, 0.5};
        std::vector<double> cw{1.0, 0.0, 2.0, 1.0};
        Tensor w = random_tensor({3, 4}, rng);
        CHECK(grad_check({x}, [&] {
                  return sum(mul(col_scale(row_scale(x, rw), cw), w));
              }) < 1e-6);
    }
    SUBCASE("attn_steer keeps rows stochastic and differentiates") {
        Tensor x = random_tensor({2, 5}, rng);
        std::vector<double> mask{1, 0, 0, 1, 0};
        Tensor w = random_tensor({2, 5}, rng);
        Tensor probs = softmax_lastdim(x);
        const auto steered = attn_steer(probs, mask, 3.0).data();
        for (int r = 0; r < 2; ++r) {
            double s = 0.0;
            for (int j = 0; j < 5; ++j) {
                CHECK(steered[r * 5 + j] >= 0.0);
                s += steered[r * 5 + j];
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
        CHECK(grad_check({x}, [&] {
                  return sum(mul(attn_steer(softmax_lastdim(x), mask, 3.0), w));
              }) < 1e-6);
    }
}

TEST_CASE("causal softmax zeroes the upper triangle and differentiates") {
    Rng rng(17);
    Tensor x = random_tensor({4, 4}, rng);
    const auto y = causal_softmax(x).data();
    for (int i = 0; i < 4; ++i) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) {
            if (j > i) CHECK(y[i * 4 + j] == 0.0);
            s += y[i * 4 + j];
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    Tensor w = random_tensor({4, 4}, rng);
    CHECK(grad_check({x}, [&] { return sum(mul(causal_softmax(x), w)); }) < 1e-6);
}

TEST_CASE("backward populates leaf gradients") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
    {
        Tape tape;
        Tensor loss = sum(x);
        tape.backward(loss);
    }
    CHECK(x.grad() == std::vector<double>{1, 1, 1});

    Tensor y = Tensor::from_data({2}, {1, 2}, true);
    {
        Tape tape;
        tape.backward(sum(mul(y, y)));
    }
    CHECK(y.grad() == std::vector<double>{2, 4});
}

TEST_CASE("backward rejects non-scalar losses and double invocation") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tape tape;
    Tensor v = mul(x, x);
    CHECK_THROWS_AS(tape.backward(v), UsageError);
    Tensor loss = sum(v);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), UsageError);
    tape.reset();
    x.zero_grad();
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{2, 4});
}

TEST_CASE("tape replay reproduces recorded outputs bit-exactly") {
    Rng rng(18);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    Tape tape;
    Tensor c = matmul(a, b);
    Tensor d = softmax_lastdim(c);
    Tensor e = sum(d);
    const auto c0 = c.data();
    const auto d0 = d.data();
    const double e0 = e.item();
    tape.replay();
    CHECK(c.data() == c0);
    CHECK(d.data() == d0);
    CHECK(e.item() == e0);
}

TEST_CASE("gradients accumulate into a sink when provided") {
    Tensor w = Tensor::from_data({2}, {3, 4}, true);
    GradSink sink;
    {
        Tape tape;
        tape.backward(sum(mul(w, w)), &sink);
    }
    CHECK_FALSE(w.has_grad());
    const auto* buf = sink.find(w.node());
    REQUIRE(buf != nullptr);
    CHECK(*buf == std::vector<double>{6, 8});
}

TEST_CASE("seeded rng determinism and splitting") {
    Rng a(0), b(0);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(0), d(1);
    bool differs = false;
    for (int i = 0; i < 10; ++i) differs |= (c.next_u64() != d.next_u64());
    CHECK(differs);

    // split streams pairwise non-identical over 1000 draws
    constexpr int kStreams = 4;
    std::vector<std::vector<std::uint64_t>> draws(kStreams);
    for (int k = 0; k < kStreams; ++k) {
        Rng s = Rng::split(7, static_cast<std::uint64_t>(k));
        for (int i = 0; i < 1000; ++i) draws[static_cast<std::size_t>(k)].push_back(s.next_u64());
    }
    for (int i = 0; i < kStreams; ++i)
        for (int j = i + 1; j < kStreams; ++j)
            CHECK(draws[static_cast<std::size_t>(i)] != draws[static_cast<std::size_t>(j)]);
}

TEST_CASE("rng helpers stay in range") {
    Rng r(123);
    for (int i = 0; i < 2000; ++i) {
        const double u = r.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const auto k = r.range(3, 9);
        CHECK(k >= 3);
        CHECK(k <= 9);
    }
}
