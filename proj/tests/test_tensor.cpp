#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "rtgs/conv.hpp"
#include "rtgs/tensor.hpp"

using namespace rtgs;
using oracles::gradient_check;
using oracles::random_tensor;

TEST_CASE("relu forward fixture") {
    Tensor x = Tensor::from_data({3}, {-1, 0, 2});
    Tensor y = relu(x);
    REQUIRE(y.data() == std::vector<double>{0, 0, 2});
}

TEST_CASE("conv2d with identity 1x1 kernel leaves input unchanged") {
    Rng rng(7);
    Tensor x = random_tensor({1, 4, 5}, rng);
    Tensor k = Tensor::from_data({1, 1, 1, 1}, {1.0});
    Tensor y = conv2d(x, k, 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (size_t i = 0; i < x.numel(); ++i) REQUIRE(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d matches quadruple-loop oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 8; ++trial) {
        size_t ci = 1 + rng.next_below(3), co = 1 + rng.next_below(3);
        size_t h = 4 + rng.next_below(5), w = 4 + rng.next_below(5);
        size_t kh = 1 + 2 * rng.next_below(2), kw = kh;  // 1x1 or 3x3
        size_t stride = 1 + rng.next_below(2);
        size_t pad = rng.next_below(2);
        Tensor x = random_tensor({ci, h, w}, rng);
        Tensor k = random_tensor({co, ci, kh, kw}, rng);
        Tensor b = random_tensor({co}, rng);
        Tensor y = conv2d(x, k, b, stride, pad);
        size_t ho, wo;
        auto ref = oracles::conv2d_loop(x.data(), ci, h, w, k.data(), co, kh, kw, b.data(),
                                        stride, pad, ho, wo);
        REQUIRE(y.shape() == Shape{co, ho, wo});
        for (size_t i = 0; i < ref.size(); ++i)
            REQUIRE(std::abs(y.data()[i] - ref[i]) < 1e-10);
    }
}

TEST_CASE("backward of sum(w*x) with x fixed gives grad(w) = x") {
    Tensor w = Tensor::from_data({4}, {0.5, -1, 2, 3}, true);
    Tensor x = Tensor::from_data({4}, {1, 2, 3, 4});
    backward(sum(mul(w, x)));
    REQUIRE(w.grad() == x.data());
}

TEST_CASE("zero upstream gradient yields zero grads") {
    Tensor w = Tensor::from_data({3}, {1, 2, 3}, true);
    backward(scale(sum(w), 0.0));
    for (double g : w.grad()) REQUIRE(g == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor w = Tensor::from_data({2}, {1, 2}, true);
    REQUIRE_THROWS_AS(backward(mul(w, w)), DataError);
}

TEST_CASE("shape mismatch reports both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 2});
    try {
        add(a, b);
        FAIL("expected throw");
    } catch (const DataError& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("[2x3]") != std::string::npos);
        REQUIRE(msg.find("[3x2]") != std::string::npos);
    }
}

TEST_CASE("softmax rows sum to 1 and survive extreme logits") {
    Rng rng(3);
    Tensor x = random_tensor({6, 9}, rng, -500.0, 500.0, false);
    Tensor s = softmax(x, 1);
    for (size_t i = 0; i < 6; ++i) {
        double rowsum = 0;
        for (size_t j = 0; j < 9; ++j) {
            double v = s.data()[i * 9 + j];
            REQUIRE(std::isfinite(v));
            rowsum += v;
        }
        REQUIRE(std::abs(rowsum - 1.0) < 1e-12);
    }
    // log_softmax stays finite as well
    Tensor ls = log_softmax(x, 1);
    for (double v : ls.data()) REQUIRE(std::isfinite(v));
}

TEST_CASE("softmax over either axis matches manual normalization") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 0, 0, 0});
    Tensor s0 = softmax(x, 0);
    for (size_t j = 0; j < 3; ++j) {
        double a = std::exp(x.data()[j]), b = std::exp(x.data()[3 + j]);
        REQUIRE(s0.data()[j] == Catch::Approx(a / (a + b)).margin(1e-14));
    }
}

TEST_CASE("determinism: identical inputs give bit-identical values and grads") {
    auto run = [] {
        Rng rng(99);
        Tensor x = random_tensor({3, 8, 8}, rng);
        Tensor k = random_tensor({4, 3, 3, 3}, rng);
        Tensor y = conv2d(x, k, 2, 1);
        Tensor l = mean(mul(y, y));
        backward(l);
        return std::tuple{l.item(), x.grad(), k.grad()};
    };
    auto [l1, gx1, gk1] = run();
    auto [l2, gx2, gk2] = run();
    REQUIRE(l1 == l2);
    REQUIRE(gx1 == gx2);
    REQUIRE(gk1 == gk2);
}

TEST_CASE("gradient check across every op") {
    // >= 20 random instances per op; central differences, rel err < 1e-4.
    const int kInstances = 20;
    double worst = 0;
    for (int inst = 0; inst < kInstances; ++inst) {
        Rng rng(1000 + inst);
        size_t m = 2 + rng.next_below(3), n = 2 + rng.next_below(4);

        auto chk = [&](double e) { worst = std::max(worst, e); };

        // elementwise binaries
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng), random_tensor({m, n}, rng)};
            chk(gradient_check([](auto& v) { return sum(add(v[0], v[1])); }, in));
            chk(gradient_check([](auto& v) { return sum(sub(v[0], v[1])); }, in));
            chk(gradient_check([](auto& v) { return sum(mul(v[0], v[1])); }, in));
        }
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng),
                                      random_tensor({m, n}, rng, 0.5, 2.0)};
            chk(gradient_check([](auto& v) { return sum(div(v[0], v[1])); }, in));
        }
        // elementwise unaries; relu/abs inputs pushed away from the kink
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng, 0.2, 2.0)};
            chk(gradient_check([](auto& v) { return sum(log(v[0])); }, in));
            chk(gradient_check([](auto& v) { return sum(sqrt(v[0])); }, in));
            chk(gradient_check([](auto& v) { return sum(reciprocal(v[0])); }, in));
            chk(gradient_check([](auto& v) { return sum(relu(offset(v[0], -1.0))); }, in));
            chk(gradient_check([](auto& v) { return sum(abs(offset(v[0], -1.0))); }, in));
        }
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng, -2.0, 2.0)};
            chk(gradient_check([](auto& v) { return sum(rtgs::exp(v[0])); }, in));
            chk(gradient_check([](auto& v) { return sum(rtgs::sigmoid(v[0])); }, in));
            chk(gradient_check([](auto& v) { return mean(scale(v[0], 1.7)); }, in));
            chk(gradient_check([](auto& v) { return sum(neg(offset(v[0], 0.3))); }, in));
        }
        // matmul / transpose / reshape / concat
        {
            size_t k = 2 + rng.next_below(3);
            std::vector<Tensor> in = {random_tensor({m, k}, rng), random_tensor({k, n}, rng)};
            chk(gradient_check([](auto& v) { return sum(matmul(v[0], v[1])); }, in));
            chk(gradient_check(
                [](auto& v) { return sum(mul(matmul(v[0], v[1]), matmul(v[0], v[1]))); }, in));
        }
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng)};
            chk(gradient_check([](auto& v) { return sum(mul(transpose(v[0]), transpose(v[0]))); },
                               in));
            chk(gradient_check(
                [n, m](auto& v) { return sum(mul(reshape(v[0], {n * m}), reshape(v[0], {n * m}))); },
                in));
        }
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng), random_tensor({m, n}, rng)};
            chk(gradient_check(
                [](auto& v) {
                    Tensor c = concat({v[0], v[1]}, 1);
                    return sum(mul(c, c));
                },
                in));
            chk(gradient_check(
                [](auto& v) {
                    Tensor c = concat({v[0], v[1]}, 0);
                    return sum(mul(c, c));
                },
                in));
        }
        // reductions
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng)};
            chk(gradient_check([](auto& v) { return sum(mul(sum_axis(v[0], 0), sum_axis(v[0], 0))); },
                               in));
            chk(gradient_check([](auto& v) { return sum(mul(sum_axis(v[0], 1), sum_axis(v[0], 1))); },
                               in));
            chk(gradient_check([](auto& v) { return mean(mul(v[0], v[0])); }, in));
        }
        // softmax family
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng, -3.0, 3.0)};
            Tensor w = random_tensor({m, n}, rng, 0.1, 1.0, false);
            chk(gradient_check([&](auto& v) { return sum(mul(softmax(v[0], 1), w)); }, in));
            chk(gradient_check([&](auto& v) { return sum(mul(softmax(v[0], 0), w)); }, in));
            chk(gradient_check([&](auto& v) { return sum(mul(log_softmax(v[0], 1), w)); }, in));
            chk(gradient_check([&](auto& v) {
                Tensor l = logsumexp_rows(v[0]);
                return sum(mul(l, l));
            },
                               in));
        }
        // layer norm
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng)};
            Tensor w = random_tensor({m, n}, rng, 0.1, 1.0, false);
            chk(gradient_check([&](auto& v) { return sum(mul(layer_norm(v[0]), w)); }, in));
        }
        // row-structured ops
        {
            std::vector<size_t> idx(m + 2);
            for (auto& v : idx) v = rng.next_below(m);
            std::vector<Tensor> in = {random_tensor({m, n}, rng)};
            chk(gradient_check(
                [&](auto& v) {
                    Tensor g = gather_rows(v[0], idx);
                    return sum(mul(g, g));
                },
                in));
        }
        {
            size_t k = 2;
            std::vector<size_t> nbr(m * k);
            for (auto& v : nbr) v = rng.next_below(m);
            std::vector<Tensor> in = {random_tensor({m, n}, rng)};
            chk(gradient_check(
                [&](auto& v) {
                    Tensor g = neighbor_mean(v[0], nbr, k);
                    return sum(mul(g, g));
                },
                in));
        }
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng),
                                      random_tensor({m}, rng, 0.5, 1.5)};
            chk(gradient_check([](auto& v) { return sum(mul(scale_rows(v[0], v[1]), v[0])); }, in));
        }
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng), random_tensor({n}, rng)};
            chk(gradient_check(
                [](auto& v) {
                    Tensor y = add_row_bias(v[0], v[1]);
                    return sum(mul(y, y));
                },
                in));
        }
        {
            std::vector<Tensor> in = {random_tensor({m, n}, rng, 0.3, 1.5)};
            Tensor w = random_tensor({m, n}, rng, 0.1, 1.0, false);
            chk(gradient_check([&](auto& v) { return sum(mul(l2_normalize_rows(v[0]), w)); }, in));
        }
        // conv2d and upsample
        {
            size_t h = 4 + rng.next_below(3), w2 = 4 + rng.next_below(3);
            size_t stride = 1 + rng.next_below(2);
            std::vector<Tensor> in = {random_tensor({2, h, w2}, rng),
                                      random_tensor({2, 2, 3, 3}, rng),
                                      random_tensor({2}, rng)};
            Tensor mask = random_tensor({1}, rng, 0, 0, false);  // unused placeholder
            chk(gradient_check(
                [stride](auto& v) {
                    Tensor y = conv2d(v[0], v[1], v[2], stride, 1);
                    return sum(mul(y, y));
                },
                in));
            std::vector<Tensor> up_in = {random_tensor({2, h, w2}, rng)};
            chk(gradient_check(
                [](auto& v) {
                    Tensor y = upsample2x(v[0]);
                    return sum(mul(y, y));
                },
                up_in));
        }
    }
    INFO("worst relative error " << worst);
    REQUIRE(worst < 1e-4);
}

TEST_CASE("graph reuse accumulates into shared leaves once per backward") {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y = add(mul(w, w), w);  // w appears twice
    backward(sum(y));
    REQUIRE(w.grad()[0] == Catch::Approx(2 * 1.0 + 1));
    REQUIRE(w.grad()[1] == Catch::Approx(2 * 2.0 + 1));
}
