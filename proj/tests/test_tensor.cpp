#include <doctest.h>

#include "laconv/ops.hpp"

using namespace laconv;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("tensor construction enforces shape/data agreement") {
    CHECK_THROWS_AS(Tensor<float>::from({2, 2}, {1.f, 2.f, 3.f}), DimError);
    CHECK_THROWS_AS(Tensor<float>::zeros({0, 3}), DimError);
    CHECK_THROWS_AS(Tensor<float>::zeros({-1}), DimError);
    auto t = Tensor<float>::from({2, 3}, {0, 1, 2, 3, 4, 5});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 5.f);
}

TEST_CASE("matmul identity and hand arithmetic") {
    auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
    auto m = Tensor<double>::from({2, 2}, {3, 4, 5, 6});
    auto r = matmul<double>(nullptr, eye, m);
    for (int i = 0; i < 4; ++i) CHECK(r.data()[i] == m.data()[i]);

    auto a = Tensor<double>::from({1, 2}, {1, 2});
    auto b = Tensor<double>::from({2, 1}, {3, 4});
    CHECK(matmul<double>(nullptr, a, b).data()[0] == doctest::Approx(11.0));

    auto bad = Tensor<double>::zeros({3, 2});
    CHECK_THROWS_AS(matmul<double>(nullptr, a, bad), DimError);
}

TEST_CASE("gradient of sum(a*b) wrt a equals ones * b^T") {
    Rng rng(7);
    auto a = Tensor<double>::randn({3, 4}, rng, 1.0);
    auto b = Tensor<double>::randn({4, 5}, rng, 1.0);
    a.set_requires_grad(true);
    Tape<double> tape;
    auto loss = sum_all(&tape, matmul(&tape, a, b));
    loss.grad()[0] = 1.0;
    tape.backward();
    // d/da sum(ab) = ones(3x5) b^T
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 4; ++k) {
            double expect = 0;
            for (int j = 0; j < 5; ++j) expect += b.at({k, j});
            CHECK(a.grad()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-6));
        }
}

TEST_CASE("softmax examples") {
    auto equal = softmax_lastdim<double>(nullptr, Tensor<double>::from({3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(equal.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    auto big = softmax_lastdim<double>(nullptr, Tensor<double>::from({2}, {1000, 1000}));
    CHECK(big.data()[0] == doctest::Approx(0.5));
    CHECK(big.all_finite());

    auto two = softmax_lastdim<double>(nullptr, Tensor<double>::from({2}, {1, 0}));
    CHECK(two.data()[0] == doctest::Approx(0.73106).epsilon(1e-4));
    CHECK(two.data()[1] == doctest::Approx(0.26894).epsilon(1e-4));
}

TEST_CASE("softmax rows sum to one and masked entries are exactly zero") {
    Rng rng(3);
    auto x = Tensor<double>::randn({5, 7}, rng, 2.0);
    std::vector<std::uint8_t> mask = {1, 1, 0, 1, 0, 1, 1};
    auto y = softmax_lastdim<double>(nullptr, x, mask);
    for (int r = 0; r < 5; ++r) {
        double s = 0;
        for (int j = 0; j < 7; ++j) {
            if (!mask[static_cast<std::size_t>(j)]) CHECK(y.at({r, j}) == 0.0);
            s += y.at({r, j});
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    std::vector<std::uint8_t> none(7, 0);
    CHECK_THROWS_AS(softmax_lastdim<double>(nullptr, x, none), InputError);
}

TEST_CASE("batch norm hand cases") {
    auto gamma = Tensor<double>::full({1}, 1.0);
    auto beta = Tensor<double>::zeros({1});
    auto state = BnState<double>::make(1);

    auto x = Tensor<double>::from({2, 1}, {1, 3});
    auto y = batch_norm<double>(nullptr, x, gamma, beta, state, true);
    CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-3));

    // n == 1 with zero variance: epsilon keeps it finite
    auto one = Tensor<double>::from({1, 1}, {42});
    auto y1 = batch_norm<double>(nullptr, one, gamma, beta, state, true);
    CHECK(y1.all_finite());
    CHECK(y1.data()[0] == doctest::Approx(0.0));
}

TEST_CASE("batch norm: already normalized input passes through, zero gamma gives beta") {
    Rng rng(11);
    const int n = 512, d = 3;
    auto x = Tensor<double>::zeros({n, d});
    for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);
    for (int j = 0; j < d; ++j) {  // normalize columns exactly
        double m = 0, v = 0;
        for (int i = 0; i < n; ++i) m += x.at({i, j});
        m /= n;
        for (int i = 0; i < n; ++i) v += (x.at({i, j}) - m) * (x.at({i, j}) - m);
        v /= n;
        for (int i = 0; i < n; ++i) x.at({i, j}) = (x.at({i, j}) - m) / std::sqrt(v);
    }
    auto gamma = Tensor<double>::full({d}, 1.0);
    auto beta = Tensor<double>::zeros({d});
    auto state = BnState<double>::make(d);
    auto y = batch_norm<double>(nullptr, x, gamma, beta, state, true);
    for (std::int64_t i = 0; i < y.numel(); ++i)
        CHECK(std::abs(y.data()[i] - x.data()[i]) < 1e-5);

    auto gamma0 = Tensor<double>::zeros({d});
    auto beta7 = Tensor<double>::full({d}, 7.0);
    auto y0 = batch_norm<double>(nullptr, x, gamma0, beta7, state, true);
    for (std::int64_t i = 0; i < y0.numel(); ++i) CHECK(y0.data()[i] == 7.0);
}

TEST_CASE("batch norm updates running stats in train mode only") {
    auto gamma = Tensor<float>::full({1}, 1.f);
    auto beta = Tensor<float>::zeros({1});
    auto state = BnState<float>::make(1);
    auto x = Tensor<float>::from({2, 1}, {1, 3});
    batch_norm<float>(nullptr, x, gamma, beta, state, true);
    CHECK(state.running_mean.data()[0] == doctest::Approx(0.2f));  // 0.9*0 + 0.1*2
    CHECK(state.running_var.data()[0] == doctest::Approx(1.0f));   // 0.9*1 + 0.1*1
    const float rm = state.running_mean.data()[0];
    batch_norm<float>(nullptr, x, gamma, beta, state, false);
    CHECK(state.running_mean.data()[0] == rm);
}

TEST_CASE("relu and sigmoid examples") {
    auto r = relu<double>(nullptr, Tensor<double>::from({3}, {-1, 0, 2}));
    CHECK(r.data()[0] == 0.0);
    CHECK(r.data()[1] == 0.0);
    CHECK(r.data()[2] == 2.0);
    auto s0 = sigmoid<double>(nullptr, Tensor<double>::from({1}, {0}));
    CHECK(s0.data()[0] == doctest::Approx(0.5));
    auto s3 = sigmoid<double>(nullptr, Tensor<double>::from({1}, {std::log(3.0)}));
    CHECK(s3.data()[0] == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("backward of sum gives ones") {
    Rng rng(5);
    auto x = Tensor<double>::randn({4, 3}, rng, 1.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    auto loss = sum_all(&tape, x);
    loss.grad()[0] = 1.0;
    tape.backward();
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);
}

TEST_CASE("gradients accumulate until zero_grad") {
    auto x = Tensor<double>::from({2}, {1, 2});
    x.set_requires_grad(true);
    for (int rep = 0; rep < 2; ++rep) {
        Tape<double> tape;
        auto loss = sum_all(&tape, x);
        loss.grad()[0] = 1.0;
        tape.backward();
    }
    CHECK(x.grad()[0] == 2.0);
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("tape replay is deterministic bit for bit") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        auto w = Tensor<float>::randn({6, 6}, rng, 0.5f);
        auto x = Tensor<float>::randn({2, 6}, rng, 1.f);
        w.set_requires_grad(true);
        Tape<float> tape;
        auto loss = sum_all(&tape, relu(&tape, matmul(&tape, x, w)));
        loss.grad()[0] = 1.f;
        tape.backward();
        std::vector<float> out(w.grad().begin(), w.grad().end());
        return out;
    };
    auto g1 = run(99), g2 = run(99);
    CHECK(g1 == g2);
}

TEST_SUITE_END();
